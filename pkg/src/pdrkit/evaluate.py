"""Trajectory metrics and reference baselines.

ATE is the RMSE between estimated and ground-truth positions over the whole
sequence, with no alignment transform: both trajectories share the given
initial pose, so aligning would hide exactly the drift being measured.

RTE splits the sequence into consecutive disjoint windows of a fixed
duration (one minute by default), re-anchors the estimate inside each window
by the position offset at the window start (position only, no heading
re-alignment), and averages the per-window RMSE.  Sequences shorter than one
window fall back to ATE; reports carry a flag when that happens.

Baselines: NDI integrates the raw rates twice with zero biases and no
corrections; Inter integrates the filter's velocity states instead of using
its position states.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import ImuSequence, matrix_to_quat, quat_to_matrix
from .filter import FilterConfig, run_sequence

TRAJECTORY_COLUMNS = ["t_ns", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"]
DEFAULT_RTE_INTERVAL_S = 60.0


class TimebaseError(ValueError):
    """Estimate and ground truth do not share a usable timebase."""


@dataclass
class Trajectory:
    t_ns: np.ndarray
    pos: np.ndarray
    rot: np.ndarray | None = None  # (N, 3, 3), optional
    vel: np.ndarray | None = None  # (N, 3), optional

    def __post_init__(self):
        self.t_ns = np.asarray(self.t_ns, dtype=np.int64)
        self.pos = np.asarray(self.pos, dtype=float).reshape(-1, 3)
        if len(self.t_ns) > 1 and not np.all(np.diff(self.t_ns) > 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t_ns)

    @property
    def duration_s(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(self.t_ns[-1] - self.t_ns[0]) * 1e-9

    def resampled(self, t_ns) -> "Trajectory":
        """Linear position resampling; never extrapolates."""
        t_ns = np.asarray(t_ns, dtype=np.int64)
        if len(self) == 0 or t_ns[0] < self.t_ns[0] or t_ns[-1] > self.t_ns[-1]:
            raise TimebaseError("resampling grid extends outside the trajectory")
        tf, ts = t_ns.astype(float), self.t_ns.astype(float)
        pos = np.column_stack([np.interp(tf, ts, self.pos[:, i]) for i in range(3)])
        return Trajectory(t_ns=t_ns, pos=pos)


@dataclass
class MethodResult:
    method: str
    ate_m: float
    rte_m: float
    rte_is_ate_fallback: bool = False


@dataclass
class EvalReport:
    results: list
    duration_s: float = 0.0
    interval_s: float = DEFAULT_RTE_INTERVAL_S
    notes: dict = field(default_factory=dict)

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            fh.write("method,ate_m,rte_m,rte_is_ate_fallback,duration_s,interval_s\n")
            for r in self.results:
                fh.write(
                    f"{r.method},{r.ate_m:.6f},{r.rte_m:.6f},"
                    f"{int(r.rte_is_ate_fallback)},{self.duration_s:.3f},{self.interval_s:.1f}\n"
                )

    def format_table(self) -> str:
        lines = [f"{'method':<12} {'ATE [m]':>10} {'RTE [m]':>10}"]
        for r in self.results:
            flag = " (ATE fallback)" if r.rte_is_ate_fallback else ""
            lines.append(f"{r.method:<12} {r.ate_m:>10.4f} {r.rte_m:>10.4f}{flag}")
        return "\n".join(lines)


def _check_same_timebase(est: Trajectory, gt: Trajectory):
    if len(est) != len(gt) or not np.array_equal(est.t_ns, gt.t_ns):
        raise TimebaseError("trajectories are not on the same timestamps; resample first")


def ate(est: Trajectory, gt: Trajectory) -> float:
    """Root-mean-square position error over all frames (no alignment)."""
    _check_same_timebase(est, gt)
    if len(est) == 0:
        raise ValueError("empty trajectory")
    err = est.pos - gt.pos
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def rte(est: Trajectory, gt: Trajectory, interval_s: float = DEFAULT_RTE_INTERVAL_S) -> float:
    """Windowed RMSE with per-window position re-anchoring.

    Windows are consecutive and disjoint; within each the estimate is shifted
    by its offset from ground truth at the window's first sample.  Sequences
    shorter than one interval fall back to plain ATE (callers flag this).
    """
    _check_same_timebase(est, gt)
    if len(est) == 0:
        raise ValueError("empty trajectory")
    if est.duration_s < interval_s:
        return ate(est, gt)

    t_s = (est.t_ns - est.t_ns[0]).astype(float) * 1e-9
    window_idx = np.floor(t_s / interval_s).astype(int)
    rmses = []
    for w in range(window_idx.max() + 1):
        sel = np.where(window_idx == w)[0]
        if len(sel) < 2:
            continue
        anchor = est.pos[sel[0]] - gt.pos[sel[0]]
        err = est.pos[sel] - anchor - gt.pos[sel]
        rmses.append(np.sqrt(np.mean(np.sum(err * err, axis=1))))
    return float(np.mean(rmses))


def ndi_baseline(imu: ImuSequence, init_pose, v0) -> Trajectory:
    """Naive double integration: zero biases, no update step.

    Runs the same propagation code path as the filter with updates disabled.
    An empty stream yields a trajectory holding only the initial pose.
    """
    if len(imu) == 0:
        return Trajectory(
            t_ns=np.array([init_pose.t_ns], dtype=np.int64),
            pos=np.asarray(init_pose.position, dtype=float).reshape(1, 3),
            rot=np.asarray(init_pose.rotation, dtype=float).reshape(1, 3, 3),
            vel=np.asarray(v0, dtype=float).reshape(1, 3),
        )
    cfg = FilterConfig(updates_enabled=False)
    run = run_sequence(imu, cfg, adapter=None, init_pose=init_pose, v0=v0)
    return trajectory_from_states(imu.t_ns[: len(run)], run)


def trajectory_from_states(t_ns, states) -> Trajectory:
    """Trajectory view of a filter run (uses the position states)."""
    if len(states) == 0:
        return Trajectory(t_ns=np.empty(0, dtype=np.int64), pos=np.empty((0, 3)))
    pos = np.array([s.p_i for s, _ in states])
    rot = np.array([s.R_i for s, _ in states])
    vel = np.array([s.v_i for s, _ in states])
    return Trajectory(t_ns=np.asarray(t_ns, dtype=np.int64), pos=pos, rot=rot, vel=vel)


def inter_trajectory(states, p0, dt: float, t_ns=None) -> Trajectory:
    """Trajectory from integrating the velocity states (the Inter method)."""
    n = len(states)
    if t_ns is None:
        t_ns = np.round(np.arange(n) * dt * 1e9).astype(np.int64)
    if n == 0:
        return Trajectory(t_ns=np.empty(0, dtype=np.int64), pos=np.empty((0, 3)))
    vel = np.array([s.v_i for s, _ in states])
    pos = np.asarray(p0, dtype=float) + np.vstack(
        [np.zeros(3), np.cumsum(vel[:-1] * dt, axis=0)]
    )
    return Trajectory(t_ns=np.asarray(t_ns, dtype=np.int64), pos=pos, vel=vel)


def compare(methods: dict, gt: Trajectory, interval_s: float = DEFAULT_RTE_INTERVAL_S) -> EvalReport:
    """ATE/RTE for every method against the same ground truth."""
    results = []
    fallback = gt.duration_s < interval_s
    for name in sorted(methods):
        est = methods[name]
        results.append(
            MethodResult(
                method=name,
                ate_m=ate(est, gt),
                rte_m=rte(est, gt, interval_s),
                rte_is_ate_fallback=fallback,
            )
        )
    return EvalReport(
        results=results,
        duration_s=gt.duration_s,
        interval_s=interval_s,
        notes={"rte_reanchoring": "position-only", "rte_windows": "disjoint"},
    )


# ----------------------------------------------------------------------
# Trajectory CSV (t_ns, position, orientation quaternion w-first, velocity)
# ----------------------------------------------------------------------

def write_trajectory_csv(path, traj: Trajectory):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(traj)
    rot = traj.rot if traj.rot is not None else np.tile(np.eye(3), (n, 1, 1))
    vel = traj.vel if traj.vel is not None else np.zeros((n, 3))
    with path.open("w", newline="") as fh:
        fh.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for i in range(n):
            q = matrix_to_quat(rot[i])
            vals = [str(int(traj.t_ns[i]))]
            vals += [format(v, ".17g") for v in traj.pos[i]]
            vals += [format(v, ".17g") for v in q]
            vals += [format(v, ".17g") for v in vel[i]]
            fh.write(",".join(vals) + "\n")


def load_trajectory_csv(path) -> Trajectory:
    from .dataio import _read_csv, _sorted_unique_times  # shared parsing helpers

    data = _sorted_unique_times(_read_csv(path, TRAJECTORY_COLUMNS), path)
    rot = np.array([quat_to_matrix(q) for q in data[:, 4:8]])
    return Trajectory(
        t_ns=data[:, 0].astype(np.int64),
        pos=data[:, 1:4],
        rot=rot,
        vel=data[:, 8:11],
    )
