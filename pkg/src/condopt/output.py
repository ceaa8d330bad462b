"""Plain-text result files: per-particle fields, loop history and a summary.

Floats are written with ``repr`` so every value parses back bit-exactly.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .particles import ParticleSystem, Role

FIELD_HEADER = ("x", "y", "T", "k", "role")
HISTORY_HEADER = ("loop", "avg_T", "e_max", "e_ave", "beta", "mu", "pde_steps")

_ROLE_NAMES = {r.value: r.name.lower() for r in Role}
_ROLE_VALUES = {v: k for k, v in _ROLE_NAMES.items()}


def _writer(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


def write_fields(ps: ParticleSystem, path) -> None:
    """One row per particle in index order: position, T, k and role name."""
    with _writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_HEADER)
        for (x, y), t, k, r in zip(ps.positions.tolist(), ps.temperature.tolist(), ps.conductivity.tolist(),
                                   ps.role.tolist()):
            w.writerow((repr(x), repr(y), repr(t), repr(k), _ROLE_NAMES[r]))


def read_fields(path) -> dict:
    """Columns of a fields file as arrays; ``role`` comes back as Role values."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != FIELD_HEADER:
        raise ValueError(f"{path}: not a fields file (header {rows[0] if rows else None})")
    body = rows[1:]
    out = {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(FIELD_HEADER[:4])}
    out["role"] = np.array([_ROLE_VALUES[r[4]] for r in body], dtype=np.int8)
    return out


def write_history(history, path) -> None:
    """``history`` is a sequence of loop records with the header's attributes."""
    with _writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for rec in history:
            w.writerow((int(rec.loop), repr(float(rec.avg_T)), repr(float(rec.e_max)), repr(float(rec.e_ave)),
                        repr(float(rec.beta)), repr(float(rec.mu)), int(rec.pde_steps)))


def read_history(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != HISTORY_HEADER:
        raise ValueError(f"{path}: not a history file")
    out = []
    for r in rows[1:]:
        out.append({
            "loop": int(r[0]), "avg_T": float(r[1]), "e_max": float(r[2]), "e_ave": float(r[3]),
            "beta": float(r[4]), "mu": float(r[5]), "pde_steps": int(r[6]),
        })
    return out


def reduction_percent(original: float, optimized: float) -> float:
    return (original - optimized) / original * 100.0


@dataclass
class Summary:
    problem: str
    original_avg_T: float
    optimized_avg_T: float
    reduction_percent: float
    loops: int
    total_pde_steps: int
    wall_time_s: float
    steady_wall_time_s: float
    cost_ratio: float
    converged: bool
    reason: str
    max_k: float
    min_k: float
    final_e_max: float


@dataclass
class SolveSummary:
    problem: str
    avg_T: float
    steps: int
    e_max: float
    e_ave: float
    converged: bool
    method: str
    wall_time_s: float


def write_summary(summary, path) -> None:
    """``key: value`` lines in field order."""
    with _writer(path) as fh:
        for f in fields(summary):
            v = getattr(summary, f.name)
            if isinstance(v, float):
                v = f"{v:.2f}" if f.name in ("reduction_percent",) else repr(v)
            fh.write(f"{f.name}: {v}\n")


def read_summary(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if ":" in line:
                key, value = line.split(":", 1)
                out[key.strip()] = value.strip()
    return out


def output_paths(directory) -> dict:
    d = Path(directory)
    return {"fields": d / "fields.csv", "history": d / "history.csv", "summary": d / "summary.txt"}


def ensure_writable(directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if not os.access(d, os.W_OK):
        raise PermissionError(f"output directory {d} is not writable")
    return d
