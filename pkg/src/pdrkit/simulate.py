"""Walking-trajectory generation and IMU synthesis.

The simulator provides the self-contained oracle for the filter tests: it
produces an exact planar ground-truth path from piecewise-constant (speed,
turn rate) segments, then manufactures the IMU stream a phone would have
reported, i.e. gyro rates from finite rotation differences and gravity-free
linear accelerations from velocity differences, plus bias random walks and
white noise.

Segments are integrated in closed form (straight lines and circular arcs),
so ground truth carries no integration error of its own; the only
discretization is the sampling itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataio import ImuSequence
from .geometry import log_so3, rot_z

MAX_WALKING_SPEED = 2.0  # m/s, the walking regime the filter assumes
STRAIGHT_TURN_RATE = 1e-9  # rad/s, below this a segment is a straight line


@dataclass
class Segment:
    """One constant-speed, constant-turn-rate leg of a walk."""

    duration_s: float
    speed_mps: float
    turn_rate_radps: float = 0.0


@dataclass
class TrajectorySpec:
    segments: Sequence[Segment]
    rate_hz: float = 200.0
    start_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    start_heading_rad: float = 0.0

    def __post_init__(self):
        self.start_position = np.asarray(self.start_position, dtype=float)
        if self.rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        for i, seg in enumerate(self.segments):
            if seg.duration_s <= 0:
                raise ValueError(f"segment {i}: duration must be positive")
            if not 0.0 <= seg.speed_mps <= MAX_WALKING_SPEED:
                raise ValueError(
                    f"segment {i}: speed {seg.speed_mps} outside walking range "
                    f"[0, {MAX_WALKING_SPEED}] m/s"
                )

    @classmethod
    def from_dict(cls, d) -> "TrajectorySpec":
        segments = [
            Segment(
                duration_s=float(s["duration_s"]),
                speed_mps=float(s["speed_mps"]),
                turn_rate_radps=float(s.get("turn_rate_radps", 0.0)),
            )
            for s in d.get("segments", [])
        ]
        return cls(
            segments=segments,
            rate_hz=float(d.get("rate_hz", 200.0)),
            start_position=np.asarray(d.get("start_position", [0, 0, 0]), dtype=float),
            start_heading_rad=float(d.get("start_heading_rad", 0.0)),
        )


@dataclass
class ImuNoiseSpec:
    """Sensor error model: white noise, bias random walks, initial biases.

    Walk densities are per sqrt(second); the per-sample increment std is
    ``walk_std * sqrt(dt)``.
    """

    gyro_white_std: float = 0.0  # rad/s
    accel_white_std: float = 0.0  # m/s^2
    gyro_walk_std: float = 0.0  # rad/s per sqrt(s)
    accel_walk_std: float = 0.0  # m/s^2 per sqrt(s)
    gyro_bias0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias0: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.gyro_bias0 = np.asarray(self.gyro_bias0, dtype=float)
        self.accel_bias0 = np.asarray(self.accel_bias0, dtype=float)
        for name in ("gyro_white_std", "accel_white_std", "gyro_walk_std", "accel_walk_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_dict(cls, d) -> "ImuNoiseSpec":
        return cls(
            gyro_white_std=float(d.get("gyro_white_std", 0.0)),
            accel_white_std=float(d.get("accel_white_std", 0.0)),
            gyro_walk_std=float(d.get("gyro_walk_std", 0.0)),
            accel_walk_std=float(d.get("accel_walk_std", 0.0)),
            gyro_bias0=np.asarray(d.get("gyro_bias0", [0, 0, 0]), dtype=float),
            accel_bias0=np.asarray(d.get("accel_bias0", [0, 0, 0]), dtype=float),
        )


@dataclass
class GroundTruthSample:
    t_ns: int
    position: np.ndarray
    rotation: np.ndarray
    velocity: np.ndarray


@dataclass
class GroundTruthSequence:
    """Uniform-rate ground truth track (positions, orientations, velocities)."""

    t_ns: np.ndarray
    pos: np.ndarray
    rot: np.ndarray
    vel: np.ndarray

    def __len__(self):
        return len(self.t_ns)

    def sample(self, i) -> GroundTruthSample:
        return GroundTruthSample(int(self.t_ns[i]), self.pos[i], self.rot[i], self.vel[i])

    def __iter__(self):
        return (self.sample(i) for i in range(len(self)))


def generate_trajectory(spec: TrajectorySpec) -> GroundTruthSequence:
    """Sample the closed-form planar walk described by ``spec``.

    The body x axis points along the velocity (walking convention) and the
    vertical velocity is exactly zero.  Heading persists through zero-speed
    segments, so an in-place turn is a segment with speed 0 and a turn rate.
    """
    if not spec.segments:
        raise ValueError("trajectory spec has no segments")

    durations = np.array([s.duration_s for s in spec.segments])
    boundaries = np.concatenate([[0.0], np.cumsum(durations)])
    total = boundaries[-1]

    # Segment-start poses, chained in closed form.
    seg_p = [spec.start_position.copy()]
    seg_theta = [spec.start_heading_rad]
    for s in spec.segments:
        p0, th0 = seg_p[-1], seg_theta[-1]
        th1 = th0 + s.turn_rate_radps * s.duration_s
        if abs(s.turn_rate_radps) < STRAIGHT_TURN_RATE:
            p1 = p0 + s.speed_mps * s.duration_s * np.array([np.cos(th0), np.sin(th0), 0.0])
        else:
            rho = s.speed_mps / s.turn_rate_radps
            p1 = p0 + rho * np.array([np.sin(th1) - np.sin(th0), np.cos(th0) - np.cos(th1), 0.0])
        seg_p.append(p1)
        seg_theta.append(th1)

    step_ns = int(round(1e9 / spec.rate_hz))
    n = int(round(total * spec.rate_hz)) + 1
    t_ns = step_ns * np.arange(n, dtype=np.int64)
    t_s = t_ns.astype(float) * 1e-9

    seg_idx = np.clip(np.searchsorted(boundaries, t_s, side="right") - 1, 0, len(spec.segments) - 1)

    pos = np.empty((n, 3))
    rot = np.empty((n, 3, 3))
    vel = np.empty((n, 3))
    for k in range(n):
        i = seg_idx[k]
        s = spec.segments[i]
        tau = min(t_s[k] - boundaries[i], s.duration_s)
        th0 = seg_theta[i]
        th = th0 + s.turn_rate_radps * tau
        if abs(s.turn_rate_radps) < STRAIGHT_TURN_RATE:
            pos[k] = seg_p[i] + s.speed_mps * tau * np.array([np.cos(th0), np.sin(th0), 0.0])
        else:
            rho = s.speed_mps / s.turn_rate_radps
            pos[k] = seg_p[i] + rho * np.array(
                [np.sin(th) - np.sin(th0), np.cos(th0) - np.cos(th), 0.0]
            )
        rot[k] = rot_z(th)
        vel[k] = s.speed_mps * np.array([np.cos(th), np.sin(th), 0.0])

    return GroundTruthSequence(t_ns=t_ns, pos=pos, rot=rot, vel=vel)


def synthesize_imu(gt: GroundTruthSequence, noise: ImuNoiseSpec, seed: int) -> ImuSequence:
    """Manufacture the IMU stream a phone would report along ``gt``.

    True rates come from exact one-step differences: gyro from the relative
    rotation between consecutive orientations, acceleration from the velocity
    difference rotated into the sensor frame (the gravity-removed linear
    acceleration channel).  Bias random walks and white noise are then added;
    output is deterministic for a given seed (counter-based generator).
    """
    n = len(gt)
    if n < 2:
        raise ValueError("need at least 2 ground-truth samples to synthesize an IMU stream")
    dts = np.diff(gt.t_ns)
    if dts.max() - dts.min() > 1e-6 * dts.mean():
        raise ValueError("ground-truth timestamps must be uniform")
    dt = float(dts[0]) * 1e-9

    omega = np.empty((n, 3))
    accel = np.empty((n, 3))
    for k in range(n - 1):
        omega[k] = log_so3(gt.rot[k].T @ gt.rot[k + 1]) / dt
        accel[k] = gt.rot[k].T @ (gt.vel[k + 1] - gt.vel[k]) / dt
    # the final sample has no successor; carry the previous rates
    omega[n - 1] = omega[n - 2]
    accel[n - 1] = accel[n - 2]

    rng = np.random.Generator(np.random.Philox(seed))
    sq = np.sqrt(dt)
    # bias at sample 0 is exactly the initial bias; the walk starts after it
    gyro_inc = rng.normal(0.0, noise.gyro_walk_std * sq, (n - 1, 3))
    accel_inc = rng.normal(0.0, noise.accel_walk_std * sq, (n - 1, 3))
    gyro_bias = noise.gyro_bias0 + np.vstack([np.zeros(3), np.cumsum(gyro_inc, axis=0)])
    accel_bias = noise.accel_bias0 + np.vstack([np.zeros(3), np.cumsum(accel_inc, axis=0)])
    gyro_white = rng.normal(0.0, noise.gyro_white_std, (n, 3))
    accel_white = rng.normal(0.0, noise.accel_white_std, (n, 3))

    return ImuSequence(
        t_ns=gt.t_ns.copy(),
        gyro=omega + gyro_bias + gyro_white,
        accel=accel + accel_bias + accel_white,
    )
