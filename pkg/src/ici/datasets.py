"""On-disk trajectory datasets.

A dataset directory holds ``meta.json`` plus one ``traj_<n>.csv`` per
trajectory with columns ``t, r0.., u0.., y0..``: excitation, applied input
and measured output.  Floats are written with 17 significant digits so a
round trip reproduces the arrays bit-exactly, and the directory hash is
stable across identical generation runs.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    """Batch of closed-loop trajectories with shared horizon."""

    r: np.ndarray   # (N, T, d_u) excitation
    u: np.ndarray   # (N, T, d_u) applied input
    y: np.ndarray   # (N, T, d_y) measured output
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.r.ndim != 3 or self.u.ndim != 3 or self.y.ndim != 3:
            raise ValueError("dataset arrays must have shape (N, T, d)")
        if self.r.shape[:2] != self.u.shape[:2] or self.r.shape[:2] != self.y.shape[:2]:
            raise ValueError("trajectory counts / horizons do not match")
        if self.r.shape[2] != self.u.shape[2]:
            raise ValueError("excitation and input dimensions differ")

    @property
    def n_traj(self) -> int:
        return self.r.shape[0]

    @property
    def horizon(self) -> int:
        return self.r.shape[1]

    @property
    def in_dim(self) -> int:
        return self.u.shape[2]

    @property
    def out_dim(self) -> int:
        return self.y.shape[2]

    def subset(self, n: int) -> "Dataset":
        """First ``n`` trajectories, metadata carried over."""
        if not 1 <= n <= self.n_traj:
            raise ValueError(f"cannot take {n} of {self.n_traj} trajectories")
        meta = dict(self.meta, n_traj=n)
        return Dataset(self.r[:n].copy(), self.u[:n].copy(), self.y[:n].copy(), meta)


def _format_row(values) -> str:
    return ",".join(f"{x:.17g}" for x in values)


def save_dataset(ds: Dataset, directory) -> str:
    """Write the dataset directory and return its content hash."""
    os.makedirs(directory, exist_ok=True)
    meta = dict(ds.meta)
    meta.update(n_traj=ds.n_traj, horizon=ds.horizon,
                in_dim=ds.in_dim, out_dim=ds.out_dim)
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")
    header = (["t"]
              + [f"r{i}" for i in range(ds.in_dim)]
              + [f"u{i}" for i in range(ds.in_dim)]
              + [f"y{i}" for i in range(ds.out_dim)])
    for n in range(ds.n_traj):
        lines = [",".join(header)]
        for t in range(ds.horizon):
            row = [float(t)] + list(ds.r[n, t]) + list(ds.u[n, t]) + list(ds.y[n, t])
            lines.append(_format_row(row))
        with open(os.path.join(directory, f"traj_{n}.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return dataset_hash(directory)


def load_dataset(directory) -> Dataset:
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    n_traj, horizon = meta["n_traj"], meta["horizon"]
    d_u, d_y = meta["in_dim"], meta["out_dim"]
    r = np.empty((n_traj, horizon, d_u))
    u = np.empty((n_traj, horizon, d_u))
    y = np.empty((n_traj, horizon, d_y))
    for n in range(n_traj):
        table = np.genfromtxt(os.path.join(directory, f"traj_{n}.csv"),
                              delimiter=",", skip_header=1)
        table = np.atleast_2d(table)
        if table.shape != (horizon, 1 + 2 * d_u + d_y):
            raise ValueError(f"traj_{n}.csv has shape {table.shape}, "
                             f"expected ({horizon}, {1 + 2 * d_u + d_y})")
        r[n] = table[:, 1:1 + d_u]
        u[n] = table[:, 1 + d_u:1 + 2 * d_u]
        y[n] = table[:, 1 + 2 * d_u:]
    return Dataset(r, u, y, meta)


def dataset_hash(directory) -> str:
    """SHA-256 over meta.json and all trajectory files, in index order."""
    digest = hashlib.sha256()
    with open(os.path.join(directory, "meta.json"), "rb") as fh:
        digest.update(fh.read())
    n = 0
    while os.path.exists(path := os.path.join(directory, f"traj_{n}.csv")):
        with open(path, "rb") as fh:
            digest.update(fh.read())
        n += 1
    return digest.hexdigest()
