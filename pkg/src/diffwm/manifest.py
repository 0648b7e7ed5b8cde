"""Per-run artifact inventory with content hashes."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Records what one subcommand wrote under ``out_dir``.

    ``close`` hashes every registered artifact, fails if one is missing, and
    writes ``manifest.<subcommand>.json`` next to them.
    """

    out_dir: Path
    subcommand: str
    config_hash: str
    schedule_fingerprint: str | None
    code_version: str
    started: str = field(default_factory=_now)
    finished: str | None = None
    artifacts: dict[str, dict] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)

    @property
    def path(self) -> Path:
        return self.out_dir / f"manifest.{self.subcommand}.json"

    def add(self, path, kind: str) -> Path:
        path = Path(path)
        rel = path.resolve().relative_to(self.out_dir.resolve()).as_posix()
        self.artifacts[rel] = {"kind": kind}
        return path

    def close(self) -> Path:
        for rel, entry in self.artifacts.items():
            p = self.out_dir / rel
            if not p.is_file():
                raise FileNotFoundError(f"manifest artifact {rel} was never written")
            entry["sha256"] = sha256_file(p)
            entry["bytes"] = p.stat().st_size
        self.finished = _now()
        self.path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return self.path

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "config_hash": self.config_hash,
            "schedule_fingerprint": self.schedule_fingerprint,
            "code_version": self.code_version,
            "started": self.started,
            "finished": self.finished,
            "artifacts": dict(sorted(self.artifacts.items())),
            "extra": self.extra,
        }


def verify_manifest(path) -> list[str]:
    """Problems found re-checking a written manifest (empty when it is intact)."""
    path = Path(path)
    doc = json.loads(path.read_text())
    problems = []
    for rel, entry in doc["artifacts"].items():
        p = path.parent / rel
        if not p.is_file():
            problems.append(f"missing: {rel}")
        elif sha256_file(p) != entry["sha256"]:
            problems.append(f"hash mismatch: {rel}")
    return problems
