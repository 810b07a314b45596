"""Aligned-sequence ingestion for training.

The training inputs are the aligned CSVs the runtime toolchain produces
(columns t_ns, wx..az, px..pz, qw..qz, vx..vz, vbx..vbz); the body-frame
velocity columns are the regression labels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

COLUMNS = [
    "t_ns", "wx", "wy", "wz", "ax", "ay", "az",
    "px", "py", "pz", "qw", "qx", "qy", "qz",
    "vx", "vy", "vz", "vbx", "vby", "vbz",
]


@dataclass
class TrainingSequence:
    t_ns: np.ndarray
    gyro: torch.Tensor  # (T, 3)
    accel: torch.Tensor  # (T, 3)
    pos: torch.Tensor  # (T, 3)
    rot0: torch.Tensor  # (3, 3) initial orientation
    vel_world: torch.Tensor  # (T, 3)
    labels: torch.Tensor  # (T, 3) body-frame velocity

    @property
    def dt(self) -> float:
        return float(self.t_ns[1] - self.t_ns[0]) * 1e-9

    def __len__(self):
        return len(self.t_ns)


def _quat_to_matrix(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def load_aligned_csv(path) -> TrainingSequence:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in COLUMNS]
        rows = [[float(r[j]) for j in idx] for r in reader if r]
    data = np.asarray(rows)
    f64 = lambda a: torch.as_tensor(a, dtype=torch.float64)
    return TrainingSequence(
        t_ns=data[:, 0].astype(np.int64),
        gyro=f64(data[:, 1:4]),
        accel=f64(data[:, 4:7]),
        pos=f64(data[:, 7:10]),
        rot0=f64(_quat_to_matrix(data[0, 10:14])),
        vel_world=f64(data[:, 14:17]),
        labels=f64(data[:, 17:20]),
    )


def load_directory(root) -> list:
    files = sorted(Path(root).glob("*.csv"))
    seqs = [load_aligned_csv(f) for f in files if not f.name.endswith(".meta.csv")]
    if not seqs:
        raise ValueError(f"no aligned CSVs under {root}")
    return seqs


def normalization_stats(seqs) -> tuple:
    """Per-channel mean/std of the raw IMU across all training frames."""
    channels = torch.cat([torch.cat([s.gyro, s.accel], dim=1) for s in seqs], dim=0)
    mean = channels.mean(dim=0)
    std = channels.std(dim=0).clamp_min(1e-9)
    return mean, std
