"""Noise-prediction network training on watermarked pairs, plus EMA and checkpoints."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from diffwm.container import load_arrays, save_arrays
from diffwm.forward import build_training_pair
from diffwm.schedule import VarianceSchedule
from diffwm.watermark import WatermarkSpec

CHECKPOINT_VERSION = 1


class ScheduleMismatchError(RuntimeError):
    pass


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class _Block(nn.Module):
    def __init__(self, c_in, c_out, t_dim):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.t_proj = nn.Linear(t_dim, c_out)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb):
        h = torch.nn.functional.silu(self.conv1(x))
        h = h + self.t_proj(temb)[:, :, None, None]
        h = torch.nn.functional.silu(self.conv2(h))
        return h + self.skip(x)


class ConvDenoiser(nn.Module):
    """Small convolutional encoder-decoder with a sinusoidal step embedding.

    Two stride-2 stages down to ``H/4 x W/4``, a dense bottleneck (which also
    gives the network access to absolute position) and a mirrored decoder
    with skip connections. Input and output are ``(B, C, H, W)``.
    """

    def __init__(self, image_shape=(16, 16, 1), width: int = 32, t_dim: int = 64):
        super().__init__()
        H, W, C = image_shape
        if H % 4 or W % 4:
            raise ValueError(f"image sides must be divisible by 4, got {H}x{W}")
        self.image_shape = (H, W, C)
        self.width, self.t_dim = width, t_dim
        self.t_mlp = nn.Sequential(nn.Linear(t_dim, t_dim), nn.SiLU(), nn.Linear(t_dim, t_dim))
        self.inc = nn.Conv2d(C, width, 3, padding=1)
        self.enc1 = _Block(width, width, t_dim)
        self.down1 = nn.Conv2d(width, 2 * width, 4, stride=2, padding=1)
        self.enc2 = _Block(2 * width, 2 * width, t_dim)
        self.down2 = nn.Conv2d(2 * width, 2 * width, 4, stride=2, padding=1)
        n = 2 * width * (H // 4) * (W // 4)
        self.mid = nn.Sequential(nn.Flatten(), nn.Linear(n, 256), nn.SiLU(), nn.Linear(256, n))
        self.mid_t = nn.Linear(t_dim, 256)
        self.up2 = nn.ConvTranspose2d(2 * width, 2 * width, 4, stride=2, padding=1)
        self.dec2 = _Block(4 * width, 2 * width, t_dim)
        self.up1 = nn.ConvTranspose2d(2 * width, width, 4, stride=2, padding=1)
        self.dec1 = _Block(2 * width, width, t_dim)
        self.out = nn.Conv2d(width, C, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        temb = self.t_mlp(timestep_embedding(t, self.t_dim))
        h1 = self.enc1(self.inc(x), temb)
        h2 = self.enc2(self.down1(h1), temb)
        z = self.down2(h2)
        m = self.mid[1](self.mid[0](z)) + self.mid_t(temb)
        m = self.mid[3](self.mid[2](m)).view_as(z) + z
        u2 = self.dec2(torch.cat([self.up2(m), h2], 1), temb)
        u1 = self.dec1(torch.cat([self.up1(u2), h1], 1), temb)
        return self.out(u1)

    def descriptor(self) -> dict:
        return {"name": "conv_denoiser", "image_shape": list(self.image_shape),
                "width": self.width, "t_dim": self.t_dim}


class TorchDenoiser:
    """Numpy-facing wrapper: ``(B, H, W, C)`` float array and a step -> noise estimate."""

    def __init__(self, model: nn.Module):
        self.model = model.eval()
        self.dtype = next(model.parameters()).dtype

    @torch.no_grad()
    def __call__(self, x: np.ndarray, t) -> np.ndarray:
        xt = torch.as_tensor(np.ascontiguousarray(np.moveaxis(x, -1, 1)), dtype=self.dtype)
        tt = torch.as_tensor(np.broadcast_to(np.asarray(t), (len(x),)).copy())
        out = self.model(xt, tt)
        return np.moveaxis(out.double().numpy(), 1, -1)


class LinearToyDenoiser:
    """Two-parameter denoiser ``eps_hat = a * x + b`` with a hand-derived gradient."""

    def __init__(self, a: float = 0.0, b: float = 0.0):
        self.params = np.array([a, b], dtype=np.float64)

    def __call__(self, x, t=None):
        return self.params[0] * np.asarray(x) + self.params[1]

    def loss(self, x, target, params=None) -> float:
        a, b = self.params if params is None else params
        r = a * np.asarray(x) + b - np.asarray(target)
        return float(np.mean(r * r))

    def grad(self, x, target, params=None) -> np.ndarray:
        a, b = self.params if params is None else params
        x = np.asarray(x)
        r = a * x + b - np.asarray(target)
        return np.array([2 * np.mean(r * x), 2 * np.mean(r)])


@dataclass
class TrainConfig:
    learning_rate: float = 2e-3
    steps: int = 3000
    batch_size: int = 64
    ema_rate: float | None = None
    seed: int = 0
    optimizer: str = "adam"
    width: int = 32
    log_every: int = 10
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.ema_rate is not None and not 0 <= self.ema_rate < 1:
            raise ValueError("ema_rate must lie in [0, 1)")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    ema_params: dict[str, np.ndarray] | None
    schedule_fingerprint: str
    spec: dict
    step: int
    architecture: dict
    version: int = CHECKPOINT_VERSION
    losses: list[float] = field(default_factory=list, repr=False)

    def build_model(self, use_ema: bool = False) -> ConvDenoiser:
        arch = dict(self.architecture)
        if arch.pop("name") != "conv_denoiser":
            raise ValueError(f"unknown architecture {self.architecture}")
        model = ConvDenoiser(tuple(arch["image_shape"]), arch["width"], arch["t_dim"])
        src = self.ema_params if use_ema and self.ema_params is not None else self.params
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in src.items()})
        return model.eval()

    def denoiser(self, use_ema: bool = False) -> TorchDenoiser:
        return TorchDenoiser(self.build_model(use_ema))


def spec_to_dict(spec: WatermarkSpec) -> dict:
    return {
        "gamma": spec.gamma, "t_A": spec.t_A, "f1_mode": spec.f1_mode,
        "shape": spec.shape, "position": spec.position, "scale_mode": spec.scale_mode,
        "static_scale": spec.static_scale, "pattern_shape": list(spec.pattern.shape),
    }


def _state_numpy(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def ema_update(params, ema_params, rate: float):
    """``ema <- rate * ema + (1 - rate) * params`` for every named array."""
    if set(params) != set(ema_params):
        raise ValueError("parameter sets differ in names")
    out = {}
    for k, p in params.items():
        e = ema_params[k]
        if np.shape(p) != np.shape(e):
            raise ValueError(f"parameter {k!r}: shape {np.shape(p)} vs {np.shape(e)}")
        out[k] = rate * e + (1 - rate) * p
    return out


def zero_watermark_config(config):
    """Same pipeline with an all-zero watermark (the zero-watermark baseline)."""
    if isinstance(config, WatermarkSpec):
        return config.zeroed()
    if hasattr(config, "zero_watermark"):
        return config.zero_watermark()
    raise TypeError(f"cannot zero the watermark of {type(config).__name__}")


def train(dataset: np.ndarray, spec: WatermarkSpec, schedule: VarianceSchedule,
          config: TrainConfig, model: ConvDenoiser | None = None,
          log_path=None) -> Checkpoint:
    """Minimize ``MSE(model(x'_t, t), eps'')`` over pairs from the watermarked forward process.

    Steps are drawn uniformly from ``[1, T]`` per batch element. A non-finite
    loss raises ``FloatingPointError`` with the step, the batch's steps and the
    loss value.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim == 3:
        data = data[..., None]
    if data.min() < -1 - 1e-9 or data.max() > 1 + 1e-9:
        raise ValueError("dataset samples must lie in [-1, 1]")
    if data.shape[1:] != spec.pattern.shape:
        raise ValueError(f"data shape {data.shape[1:]} != pattern shape {spec.pattern.shape}")
    spec.check_schedule(schedule.T)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = ConvDenoiser(data.shape[1:], width=config.width)
    model.train()
    if config.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    else:
        opt = torch.optim.SGD(model.parameters(), lr=config.learning_rate)
    ema = {k: v.clone() for k, v in model.state_dict().items()} if config.ema_rate is not None else None

    log_fh = log_writer = None
    if log_path is not None:
        log_fh = open(log_path, "w", newline="")
        log_writer = csv.writer(log_fh)
        log_writer.writerow(["step", "t_bucket", "loss"])
    n_buckets = min(10, schedule.T)
    losses = []
    try:
        for step in range(1, config.steps + 1):
            idx = rng.integers(0, len(data), config.batch_size)
            t = rng.integers(1, schedule.T + 1, config.batch_size)
            pair = build_training_pair(data[idx], t, spec, schedule, rng)
            x = torch.from_numpy(np.moveaxis(pair.x_t_prime, -1, 1).astype(np.float32))
            y = torch.from_numpy(np.moveaxis(pair.target, -1, 1).astype(np.float32))
            pred = model(x, torch.from_numpy(t))
            per = ((pred - y) ** 2).flatten(1).mean(1)
            loss = per.mean()
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss {loss.item()} at step {step}, t={t.tolist()}")
            opt.zero_grad()
            loss.backward()
            if config.grad_clip is not None:
                # unnormalized conv stacks occasionally spike late in training
                nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            if ema is not None:
                with torch.no_grad():
                    for k, v in model.state_dict().items():
                        ema[k].mul_(config.ema_rate).add_(v, alpha=1 - config.ema_rate)
            losses.append(loss.item())
            if log_writer is not None and step % config.log_every == 0:
                bucket = (t - 1) * n_buckets // schedule.T
                per_np = per.detach().numpy()
                for b in np.unique(bucket):
                    log_writer.writerow([step, int(b), f"{per_np[bucket == b].mean():.6g}"])
    finally:
        if log_fh is not None:
            log_fh.close()

    return Checkpoint(
        params=_state_numpy(model),
        ema_params=None if ema is None else {k: v.numpy().copy() for k, v in ema.items()},
        schedule_fingerprint=schedule.fingerprint(),
        spec=spec_to_dict(spec),
        step=config.steps,
        architecture=model.descriptor(),
        losses=losses,
    )


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    arrays = {f"params/{k}": v for k, v in ckpt.params.items()}
    if ckpt.ema_params is not None:
        arrays.update({f"ema/{k}": v for k, v in ckpt.ema_params.items()})
    meta = {
        "version": ckpt.version,
        "schedule_fingerprint": ckpt.schedule_fingerprint,
        "spec": ckpt.spec,
        "step": ckpt.step,
        "architecture": ckpt.architecture,
        "has_ema": ckpt.ema_params is not None,
    }
    return save_arrays(path, arrays, meta)


def load_checkpoint(path, schedule: VarianceSchedule | None = None) -> Checkpoint:
    arrays, meta = load_arrays(path)
    if meta is None or meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format")
    if schedule is not None and schedule.fingerprint() != meta["schedule_fingerprint"]:
        raise ScheduleMismatchError(
            f"{path} was trained on schedule {meta['schedule_fingerprint'][:12]}, "
            f"not {schedule.fingerprint()[:12]}")
    params = {k[len("params/"):]: v for k, v in arrays.items() if k.startswith("params/")}
    ema = {k[len("ema/"):]: v for k, v in arrays.items() if k.startswith("ema/")} if meta["has_ema"] else None
    return Checkpoint(params, ema, meta["schedule_fingerprint"], meta["spec"], meta["step"],
                      meta["architecture"], meta["version"])

