"""Run configuration: typed blocks loaded from YAML or JSON, plus seed splitting.

A config document looks like::

    seed: 0
    schedule: {T: 100}
    watermark: {shape: square, size: 4, gamma: 0.8, t_A_fraction: 0.5}
    training: {steps: 1200, batch_size: 32, width: 16}
    sampling: {batch: 100}
    verification: {threshold: 0.1}
    data: {kind: blobs, n: 1, size: 16}
    paths: {dataset: null, out: runs/demo}

Every block and key is optional; anything not listed below is rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

import numpy as np
import yaml

from diffwm.schedule import VarianceSchedule, make_linear_schedule
from diffwm.training import TrainConfig
from diffwm.watermark import WatermarkSpec, load_pattern_png, make_pattern


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleBlock:
    T: int = 1000
    beta_start: float | None = None
    beta_end: float | None = None


@dataclass(frozen=True)
class WatermarkBlock:
    shape: str = "square"
    position: str = "bottom_right"
    size: int = 4
    color: float | list = 1.0
    stroke: int | None = None
    pattern_png: str | None = None
    gamma: float = 0.8
    t_A_fraction: float = 0.5
    f1_mode: str = "zero"
    scale_mode: str = "batch"
    static_scale: float = 1.0
    zero: bool = False


@dataclass(frozen=True)
class TrainingBlock:
    learning_rate: float = 2e-3
    steps: int = 3000
    batch_size: int = 64
    ema_rate: float | None = None
    optimizer: str = "adam"
    width: int = 32
    log_every: int = 10
    grad_clip: float | None = 1.0


@dataclass(frozen=True)
class SamplingBlock:
    batch: int = 100
    # fractions of T; t_A and T are always recorded as well
    snapshot_fractions: list = field(default_factory=lambda: [1.0, 0.75, 0.5, 0.25])
    sigma_mode: str = "gamma_squared"
    clamp: bool = True
    use_ema: bool = False


@dataclass(frozen=True)
class VerificationBlock:
    threshold: float = 0.1
    edgesconvert: bool = False
    min_area_ratio: float = 0.25


@dataclass(frozen=True)
class DataBlock:
    kind: str = "blobs"
    n: int = 1
    size: int = 16
    limit: int | None = None


@dataclass(frozen=True)
class PathsBlock:
    dataset: str | None = None
    out: str | None = None


_BLOCKS = {
    "schedule": ScheduleBlock,
    "watermark": WatermarkBlock,
    "training": TrainingBlock,
    "sampling": SamplingBlock,
    "verification": VerificationBlock,
    "data": DataBlock,
    "paths": PathsBlock,
}


def _check_type(where: str, value: Any, hint) -> Any:
    allowed = getattr(hint, "__args__", None) or (hint,)
    if value is None:
        if type(None) in allowed:
            return None
        raise ConfigError(f"{where} may not be null")
    if isinstance(value, bool) and bool not in allowed:
        raise ConfigError(f"{where}: expected {hint}, got a boolean")
    if isinstance(value, int) and int not in allowed and float in allowed:
        return float(value)
    for kind in allowed:
        base = getattr(kind, "__origin__", kind)
        if isinstance(base, type) and isinstance(value, base):
            return value
    raise ConfigError(f"{where}: expected {hint}, got {type(value).__name__}")


def _block(name: str, cls, raw) -> Any:
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"block {name!r} must be a mapping")
    hints = get_type_hints(cls)
    unknown = set(raw) - set(hints)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return cls(**{k: _check_type(f"{name}.{k}", v, hints[k]) for k, v in raw.items()})


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    schedule: ScheduleBlock = field(default_factory=ScheduleBlock)
    watermark: WatermarkBlock = field(default_factory=WatermarkBlock)
    training: TrainingBlock = field(default_factory=TrainingBlock)
    sampling: SamplingBlock = field(default_factory=SamplingBlock)
    verification: VerificationBlock = field(default_factory=VerificationBlock)
    data: DataBlock = field(default_factory=DataBlock)
    paths: PathsBlock = field(default_factory=PathsBlock)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        wm = self.watermark
        if not 0 < wm.t_A_fraction <= 1:
            raise ConfigError(f"watermark.t_A_fraction must lie in (0, 1], got {wm.t_A_fraction}")
        if self.schedule.T < 1:
            raise ConfigError("schedule.T must be >= 1")
        if any(not 0 <= f <= 1 for f in self.sampling.snapshot_fractions):
            raise ConfigError("sampling.snapshot_fractions must lie in [0, 1]")
        try:
            self.train_config()
        except ValueError as e:
            raise ConfigError(f"training: {e}") from e

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a mapping")
        unknown = set(doc) - set(_BLOCKS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        seed = doc.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        blocks = {name: _block(name, c, doc.get(name)) for name, c in _BLOCKS.items()}
        try:
            return cls(seed=seed, base_dir=Path(base_dir), **blocks)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        text = path.read_text()
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        return cls.from_dict(doc or {}, base_dir=path.parent)

    def to_dict(self) -> dict:
        d = {"seed": self.seed}
        for name in _BLOCKS:
            d[name] = dataclasses.asdict(getattr(self, name))
        return d

    def with_overrides(self, seed: int | None = None, out=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        if out is not None:
            cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, out=str(out)))
        return cfg

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form, leaving out the output directory."""
        d = self.to_dict()
        d["paths"] = {k: v for k, v in d["paths"].items() if k != "out"}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def check_paths(self) -> None:
        for name in ("dataset",):
            p = self.resolve(getattr(self.paths, name))
            if p is not None and not p.is_file():
                raise ConfigError(f"paths.{name} does not exist: {p}")
        p = self.resolve(self.watermark.pattern_png)
        if p is not None and not p.is_file():
            raise ConfigError(f"watermark.pattern_png does not exist: {p}")

    # --- derived objects ---

    def build_schedule(self) -> VarianceSchedule:
        s = self.schedule
        return make_linear_schedule(s.T, s.beta_start, s.beta_end)

    @property
    def t_A(self) -> int:
        return max(1, round(self.watermark.t_A_fraction * self.schedule.T))

    def snapshot_steps(self) -> list[int]:
        T = self.schedule.T
        steps = {round(f * T) for f in self.sampling.snapshot_fractions} | {T, self.t_A}
        return sorted(steps, reverse=True)

    def build_pattern(self, canvas) -> np.ndarray:
        wm = self.watermark
        if wm.pattern_png is not None:
            pattern = load_pattern_png(self.resolve(wm.pattern_png))
            if pattern.shape[:2] != tuple(canvas[:2]):
                raise ConfigError(f"pattern PNG is {pattern.shape[:2]}, images are {tuple(canvas[:2])}")
            if pattern.shape[2] != canvas[2]:
                pattern = np.broadcast_to(pattern.mean(axis=2, keepdims=True), tuple(canvas)).copy()
            return pattern
        return make_pattern(wm.shape, wm.position, wm.size, canvas, wm.color, wm.stroke)

    def build_spec(self, canvas) -> WatermarkSpec:
        wm = self.watermark
        pattern = self.build_pattern(canvas)
        spec = WatermarkSpec(pattern, gamma=wm.gamma, t_A=self.t_A, f1_mode=wm.f1_mode,
                             shape=None if wm.pattern_png else wm.shape,
                             position=None if wm.pattern_png else wm.position,
                             scale_mode=wm.scale_mode, static_scale=wm.static_scale)
        return spec.zeroed() if wm.zero else spec

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(learning_rate=t.learning_rate, steps=t.steps, batch_size=t.batch_size,
                           ema_rate=t.ema_rate, seed=substream_seed(self.seed, "train"),
                           optimizer=t.optimizer, width=t.width, log_every=t.log_every,
                           grad_clip=t.grad_clip)

    def zero_watermark(self) -> "RunConfig":
        return dataclasses.replace(self, watermark=dataclasses.replace(self.watermark, zero=True))


def _key(name: str) -> int:
    return zlib.crc32(name.encode())


def substream(root_seed: int, *names: str) -> np.random.Generator:
    """Independent generator for the named sub-run, derived from the root seed alone."""
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=tuple(_key(n) for n in names)))


def substream_seed(root_seed: int, *names: str) -> int:
    ss = np.random.SeedSequence(root_seed, spawn_key=tuple(_key(n) for n in names))
    return int(ss.generate_state(1, np.uint32)[0])
