"""Result records and their on-disk layout.

A run directory holds:

- ``records.ndjson``: one JSON object per record (no wall-clock values, so
  reruns are byte-identical);
- ``timings.ndjson``: wall-clock per record;
- ``<name>.csv``: field matrices, rows ``t, v_0, ..., v_{J-1}``;
- ``<name>.dat``: two-column plot data;
- ``manifest.json``: config, file list with sha256 digests, completion flag.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import Trajectory

MANIFEST = "manifest.json"


@dataclass
class ResultRecord:
    kind: str
    experiment: str
    config_hash: str
    payload: dict
    seed: int | None = None
    wall: float = 0.0
    fields: dict = field(default_factory=dict, repr=False)
    plots: dict = field(default_factory=dict, repr=False)

    def to_json(self, field_files: dict[str, str]) -> dict:
        out = {"type": self.kind, "experiment": self.experiment,
               "config_hash": self.config_hash, "seed": self.seed,
               "payload": _plain(self.payload)}
        if field_files:
            out["fields"] = field_files
        return out


def _plain(x):
    """Convert numpy scalars and arrays to JSON-native values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def field_csv(values) -> str:
    """CSV text for a trajectory (``t`` first) or a plain matrix."""
    if isinstance(values, Trajectory):
        mat = np.column_stack([values.times, values.frames])
    else:
        mat = np.atleast_2d(np.asarray(values, dtype=float))
    return "\n".join(",".join(f"{v:.17g}" for v in row) for row in mat) + "\n"


def dat_text(x, y) -> str:
    return "".join(f"{a:.17g} {b:.17g}\n" for a, b in zip(x, y))


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_records(records: list[ResultRecord], out_dir, config: dict | None = None) -> Path:
    """Write the run directory and return the manifest path.

    On an I/O error a manifest marked incomplete is written (when possible)
    listing whatever made it to disk, then the error propagates.
    """
    out = Path(out_dir)
    written: list[Path] = []
    manifest = out / MANIFEST

    def emit(name: str, text: str) -> None:
        path = out / name
        path.write_text(text)
        written.append(path)

    def finish(complete: bool, error: str | None = None) -> None:
        body = {"complete": complete, "config": config,
                "config_hash": records[0].config_hash if records else None,
                "records": len(records),
                "files": [{"name": p.name, "sha256": _digest(p), "bytes": p.stat().st_size}
                          for p in written if p.exists()]}
        if error:
            body["error"] = error
        manifest.write_text(json.dumps(_plain(body), sort_keys=True, indent=1) + "\n")

    try:
        out.mkdir(parents=True, exist_ok=True)
        lines, timings = [], []
        used: set[str] = set()
        for i, rec in enumerate(records):
            files = {}
            for name, values in rec.fields.items():
                fname = f"{rec.kind}-{i:04d}-{name}.csv"
                emit(fname, field_csv(values))
                files[name] = fname
            for fname, (x, y) in rec.plots.items():
                if fname in used:
                    raise ValueError(f"plot file {fname!r} produced twice")
                used.add(fname)
                emit(fname, dat_text(x, y))
            lines.append(dumps(rec.to_json(files)))
            timings.append(dumps({"index": i, "type": rec.kind, "wall": rec.wall}))
        emit("records.ndjson", "".join(s + "\n" for s in lines))
        emit("timings.ndjson", "".join(s + "\n" for s in timings))
        finish(True)
    except OSError as exc:
        try:
            finish(False, str(exc))
        except OSError:
            pass
        raise
    return manifest


def read_records(out_dir) -> list[dict]:
    path = Path(out_dir) / "records.ndjson"
    return [json.loads(line) for line in path.read_text().splitlines() if line]
