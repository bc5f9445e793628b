"""File formats: trajectory CSV/binary, field JSON and generic CSV tables.

CSV floats are written with ``%.17g`` so values round-trip exactly and
identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .skeleton import Trajectory
from .spectral import DomainConfig, SpectralField

FLOAT_FMT = "%.17g"
_MAGIC = b"LLDPTRJ1"
_HEADER = struct.Struct("<8sqqdd")  # magic, n_modes, n_steps, L, dt


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return FLOAT_FMT % x
    return str(x)


def write_table(path, columns, rows) -> Path:
    """Write rows (sequences or dicts keyed by ``columns``) as CSV."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else r
            w.writerow([fmt(v) for v in vals])
    return path


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    n = traj.coeffs.shape[1]
    cols = ["t"] + [f"coeff_{i}" for i in range(1, n + 1)]
    rows = (np.concatenate([[t], c]) for t, c in zip(traj.times, traj.coeffs))
    return write_table(path, cols, rows)


def read_trajectory_csv(path, domain: DomainConfig) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] - 1 != domain.n_modes:
        raise ValueError("column count does not match domain")
    return Trajectory(data[:, 0], data[:, 1:], domain)


def write_trajectory_bin(traj: Trajectory, path) -> Path:
    """Little-endian header ``(magic, n_modes, n_steps, L, dt)`` then ``n_steps + 1``
    float64 rows ``[t, coeffs...]``; ``dt`` is the spacing of the stored rows."""
    path = Path(path)
    n_times, n = traj.coeffs.shape
    dt = float(traj.times[1] - traj.times[0]) if n_times > 1 else 0.0
    body = np.column_stack([traj.times, traj.coeffs]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, n, n_times - 1, float(traj.domain.L), dt))
        fh.write(body.tobytes())
    return path


def read_trajectory_bin(path, domain: DomainConfig | None = None) -> Trajectory:
    raw = Path(path).read_bytes()
    magic, n, n_steps, L, _dt = _HEADER.unpack_from(raw)
    n_times = n_steps + 1
    if magic != _MAGIC:
        raise ValueError("not a trajectory file")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n_times, n + 1)
    dom = domain or DomainConfig(L=L, n_modes=n)
    if dom.n_modes != n or dom.L != L:
        raise ValueError("file does not match domain")
    return Trajectory(body[:, 0].copy(), body[:, 1:].copy(), dom)


def field_to_dict(u: SpectralField) -> dict:
    d = u.domain
    return {"domain": {"L": d.L, "n_modes": d.n_modes, "n_quad": d.n_quad, "d": d.d,
                       "dealias": d.dealias},
            "coeffs": [float(c) for c in u.coeffs]}


def field_from_dict(data: dict) -> SpectralField:
    return SpectralField(np.asarray(data["coeffs"], dtype=float), DomainConfig(**data["domain"]))


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
