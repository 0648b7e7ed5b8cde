"""Command-line entry point: ``diffwm <subcommand> [--config FILE] [--seed N] [--out DIR]``.

Subcommands: train, sample, verify, oracle-check, metrics, plot. Each prints a
JSON summary on success and a JSON error object on stderr (exit status 1) on
failure. Every run leaves ``manifest.<subcommand>.json`` in the output
directory. Without ``--out`` or ``paths.out`` the output directory is
``$DIFFWM_OUT`` (default ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from diffwm import __version__
from diffwm.config import ConfigError, RunConfig, substream, substream_seed
from diffwm.data import load_idx_dataset, make_synthetic_dataset
from diffwm.manifest import RunManifest

OUT_ENV = "DIFFWM_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args, cfg: RunConfig) -> Path:
    if args.out is not None:
        out = Path(args.out)
    elif cfg.paths.out is not None:
        out = cfg.resolve(cfg.paths.out)
    else:
        out = Path(os.environ.get(OUT_ENV, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_dataset(cfg: RunConfig) -> np.ndarray:
    if cfg.paths.dataset is not None:
        data = load_idx_dataset(cfg.resolve(cfg.paths.dataset))
        return data[:cfg.data.limit] if cfg.data.limit is not None else data
    return make_synthetic_dataset(cfg.data.n, cfg.data.size, cfg.data.kind, seed=substream_seed(cfg.seed, "data"))


def _read_array(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path, allow_pickle=False)
    if path.suffix == ".png":
        from diffwm.watermark import load_pattern_png

        return load_pattern_png(path)
    raise ValueError(f"{path}: expected a .npy or .png file")


# --- subcommands; each returns a summary dict and registers its outputs ---

def cmd_train(args, cfg: RunConfig, out: Path, man: RunManifest) -> dict:
    from diffwm.training import save_checkpoint, train

    data = load_dataset(cfg)
    sch = cfg.build_schedule()
    man.schedule_fingerprint = sch.fingerprint()
    spec = cfg.build_spec(data.shape[1:])
    log = man.add(out / "loss_log.csv", "loss_log")
    ckpt = train(data, spec, sch, cfg.train_config(), log_path=log)
    save_checkpoint(ckpt, man.add(out / "checkpoint.npz", "checkpoint"))
    sch.to_csv(man.add(out / "schedule.csv", "schedule"))
    np.save(man.add(out / "pattern.npy", "pattern"), spec.pattern)
    tail = ckpt.losses[-50:]
    return {"steps": ckpt.step, "final_loss": float(np.mean(tail)) if tail else None,
            "dataset_shape": list(data.shape)}


def cmd_sample(args, cfg: RunConfig, out: Path, man: RunManifest) -> dict:
    from diffwm.plotting import emit_sample_grid, emit_trajectory_plot
    from diffwm.reverse import average_snapshot, sample, save_trajectory
    from diffwm.training import load_checkpoint

    sch = cfg.build_schedule()
    man.schedule_fingerprint = sch.fingerprint()
    ckpt = load_checkpoint(args.checkpoint or out / "checkpoint.npz", sch)
    canvas = tuple(ckpt.architecture["image_shape"])
    spec = cfg.build_spec(canvas)
    for key in ("gamma", "t_A", "f1_mode"):
        if ckpt.spec[key] != getattr(spec, key):
            raise ConfigError(f"checkpoint was trained with {key}={ckpt.spec[key]}, config says {getattr(spec, key)}")
    steps = cfg.snapshot_steps()
    s = cfg.sampling
    batch = sample(ckpt.denoiser(s.use_ema), sch, spec, s.batch, snapshot_steps=steps,
                   sigma_mode=s.sigma_mode, rng=substream(cfg.seed, "sample"), clamp=s.clamp)
    batch.seed = cfg.seed
    np.save(man.add(out / "x_avg_tA.npy", "x_avg"), average_snapshot(batch.snapshots[spec.t_A]))
    np.save(man.add(out / "x_avg_finals.npy", "x_avg"), average_snapshot(batch.finals))
    emit_sample_grid(batch.finals, man.add(out / "finals.png", "figure"))
    emit_trajectory_plot(batch, steps + [0], man.add(out / "snapshots.png", "figure"))
    if not args.no_dump:
        save_trajectory(batch, man.add(out / "trajectory.npz", "trajectory"))
    return {"batch": s.batch, "t_A": spec.t_A, "snapshot_steps": steps}


def cmd_verify(args, cfg: RunConfig, out: Path, man: RunManifest) -> dict:
    from diffwm.verification import verify

    x_avg = _read_array(args.x_avg or out / "x_avg_tA.npy")
    if x_avg.ndim == 2:
        x_avg = x_avg[..., None]
    pattern = _read_array(args.pattern) if args.pattern else cfg.build_pattern(x_avg.shape)
    v = cfg.verification
    threshold = v.threshold if args.threshold is None else args.threshold
    report = verify(x_avg, pattern, threshold, v.edgesconvert, v.min_area_ratio)
    man.add(out / "verification.json", "report").write_text(report.to_json(indent=2, sort_keys=True) + "\n")
    return report.to_dict()


def cmd_oracle_check(args, cfg: RunConfig, out: Path, man: RunManifest) -> dict:
    from diffwm.oracles import run_all

    suite = run_all(quick=args.quick)
    text = json.dumps(suite, indent=2, sort_keys=True, default=float)
    man.add(out / "oracle_check.json", "report").write_text(text + "\n")
    summary = {k: v["passed"] for k, v in suite.items() if isinstance(v, dict)}
    summary["passed"] = suite["passed"]
    return summary


def cmd_metrics(args, cfg: RunConfig, out: Path, man: RunManifest) -> dict:
    from diffwm import metrics as M

    result = {}
    if args.real and args.gen:
        real, gen = M.FeatureSet.load(args.real, "real"), M.FeatureSet.load(args.gen, "generated")
        result["fid"] = M.fid_from_features(real, gen)
        p, r = M.precision_recall_knn(real, gen, k=args.k)
        result.update(precision=p, recall=r, k=args.k)
    elif args.real or args.gen:
        raise UsageError("--real and --gen must be given together")
    if args.real_spatial and args.gen_spatial:
        result["sfid"] = M.sfid_from_features(M.FeatureSet.load(args.real_spatial, "real"),
                                              M.FeatureSet.load(args.gen_spatial, "generated"))
    if args.probs:
        mean, std = M.inception_score_from_probs(M.load_probs(args.probs), args.splits)
        result.update(inception_score=mean, inception_score_std=std, splits=args.splits)
    if not result:
        raise UsageError("nothing to compute: pass --real/--gen, --real-spatial/--gen-spatial or --probs")
    man.add(out / "metrics.json", "report").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result


def cmd_plot(args, cfg: RunConfig, out: Path, man: RunManifest) -> dict:
    from diffwm.plotting import emit_comparison_grid, emit_trajectory_plot
    from diffwm.reverse import load_trajectory

    paths = args.trajectory or [out / "trajectory.npz"]
    batches = [load_trajectory(p) for p in paths]
    if args.steps:
        steps = [int(s) for s in args.steps.split(",")]
    else:
        steps = sorted(set(batches[0].snapshots) | {0}, reverse=True)
    grid = emit_trajectory_plot(batches, steps, man.add(out / "trajectory_grid.png", "figure"),
                                cell=args.cell, margin=args.margin)
    result = {"trajectory_grid": grid.name, "steps": steps, "rows": len(batches)}
    if len(batches) > 1:
        cmp_path = man.add(out / "comparison_grid.png", "figure")
        emit_comparison_grid([b.finals for b in batches], cmp_path, cell=args.cell, margin=args.margin)
        result["comparison_grid"] = cmp_path.name
    return result


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "verify": cmd_verify,
    "oracle-check": cmd_oracle_check,
    "metrics": cmd_metrics,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run config")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory")

    p = _Parser(prog="diffwm", description="Watermarked diffusion: train, sample, verify and report.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="train a denoiser on watermarked pairs")
    sp = sub.add_parser("sample", parents=[common], help="run the reverse chain and export trajectories")
    sp.add_argument("--checkpoint", help="default: <out>/checkpoint.npz")
    sp.add_argument("--no-dump", action="store_true", help="skip the raw trajectory container")
    vp = sub.add_parser("verify", parents=[common], help="contour check of an averaged snapshot")
    vp.add_argument("--x-avg", help=".npy or .png; default: <out>/x_avg_tA.npy")
    vp.add_argument("--pattern", help=".npy or .png; default: built from the config")
    vp.add_argument("--threshold", type=float)
    op = sub.add_parser("oracle-check", parents=[common], help="analytic / Monte-Carlo invariant suite")
    op.add_argument("--quick", action="store_true", help="10x fewer Monte-Carlo draws")
    mp = sub.add_parser("metrics", parents=[common], help="FID, sFID, IS, precision/recall from files")
    mp.add_argument("--real")
    mp.add_argument("--gen")
    mp.add_argument("--real-spatial")
    mp.add_argument("--gen-spatial")
    mp.add_argument("--probs")
    mp.add_argument("--splits", type=int, default=1)
    mp.add_argument("--k", type=int, default=3)
    pp = sub.add_parser("plot", parents=[common], help="trajectory and comparison grids")
    pp.add_argument("--trajectory", action="append", help="trajectory container; repeat for more rows")
    pp.add_argument("--steps", help="comma-separated steps; default: every recorded one plus 0")
    pp.add_argument("--cell", type=int, default=64)
    pp.add_argument("--margin", type=int, default=4)
    return p


def main(argv=None) -> int:
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        cfg = cfg.with_overrides(seed=args.seed)
        cfg.check_paths()
        out = _out_dir(args, cfg)
        man = RunManifest(out, command, cfg.config_hash(), None, __version__)
        result = COMMANDS[command](args, cfg, out, man)
        man.extra = {"seed": cfg.seed}
        man.close()
    except Exception as e:
        err = {"status": "error", "subcommand": command, "error": type(e).__name__, "message": str(e)}
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(json.dumps({"status": "ok", "subcommand": command, "out": str(out),
                      "manifest": man.path.name, "result": result}, default=float))
    if command == "oracle-check" and not result["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
