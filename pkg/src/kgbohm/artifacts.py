"""Writers and readers for run artifacts.

Numbers are written as ``%.16e`` (17 significant digits), which round-trips
every float64 exactly.  Manifests are JSON with sorted keys.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

FLOAT_FMT = "{:.16e}"


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return FLOAT_FMT.format(float(v))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def write_field_csv(path, grid, columns: Dict[str, np.ndarray], t_stride: int = 1, x_stride: int = 1) -> Path:
    """One row per lattice point: ``t,x,<columns...>`` in insertion order."""
    names = list(columns)
    ti = np.arange(0, grid.nt, max(1, t_stride))
    xi = np.arange(0, grid.nx, max(1, x_stride))
    t, x = grid.t, grid.x

    def rows():
        for n in ti:
            for j in xi:
                yield [t[n], x[j]] + [columns[c][n, j] for c in names]

    return write_rows(path, ["t", "x"] + names, rows())


def read_csv(path) -> Dict[str, np.ndarray]:
    """Columns of a numeric CSV written by this module."""
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [[float(v) for v in row] for row in r]
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    return {h: arr[:, i] for i, h in enumerate(header)}


def write_trajectories_csv(path, te, seed_stride: int = 1, t_stride: int = 1) -> Path:
    """``seed_id,t,x,vx``; each written seed contributes its trustworthy samples.

    Strides thin the output; the last trustworthy sample of a seed is always kept.
    """
    seed_stride, t_stride = max(1, seed_stride), max(1, t_stride)

    def rows():
        for i in range(0, te.n_seeds, seed_stride):
            stop = int(te.stop[i])
            steps = list(range(0, stop + 1, t_stride))
            if steps[-1] != stop:
                steps.append(stop)
            for n in steps:
                yield [i, te.t[n], te.paths[n, i], te.velocities[n, i]]

    return write_rows(path, ["seed_id", "t", "x", "vx"], rows())


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def manifest_text(data: dict) -> str:
    return json.dumps(_clean(data), sort_keys=True, indent=2) + "\n"


def write_manifest(path, data: dict) -> Path:
    path = Path(path)
    path.write_text(manifest_text(data))
    return path


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
