"""Dataset ingestion and the canonical aligned-sequence format.

Recorded phone sequences arrive as two asynchronous streams, an IMU stream
(gyro + gravity-removed linear acceleration) and a pose stream from some
ground-truth source.  This module parses them, synchronizes them onto one
uniform-rate grid by linear interpolation, and derives the world- and
body-frame velocity labels the trainer consumes.

Canonical CSV schemas (headers required):

    imu.csv   : t_ns, wx, wy, wz, ax, ay, az
    pose.csv  : t_ns, px, py, pz, qw, qx, qy, qz
    aligned.csv : t_ns, wx..az, px..pz, qw..qz, vx, vy, vz, vbx, vby, vbz

Quaternions are Hamilton convention, scalar first.  An aligned CSV gets a
JSON sidecar (<name>.meta.json) recording the rate, the velocity smoothing
window, and the source files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import heading_rotation

# Moving-average window (frames) applied to central-difference velocities to
# suppress pose jitter; recorded in the aligned metadata.
VELOCITY_SMOOTHING_FRAMES = 5

# Relative dt spread tolerated before a grid stops counting as uniform.
UNIFORM_DT_TOL = 1e-6

IMU_COLUMNS = ["t_ns", "wx", "wy", "wz", "ax", "ay", "az"]
POSE_COLUMNS = ["t_ns", "px", "py", "pz", "qw", "qx", "qy", "qz"]
ALIGNED_COLUMNS = IMU_COLUMNS + POSE_COLUMNS[1:] + ["vx", "vy", "vz", "vbx", "vby", "vbz"]

# RIDI-style recordings keep everything in one CSV; these are the columns we
# consume (gravity-removed acceleration channel, tango pose and orientation).
RIDI_TIME = "time"
RIDI_GYRO = ["gyro_x", "gyro_y", "gyro_z"]
RIDI_ACCEL = ["linacce_x", "linacce_y", "linacce_z"]
RIDI_POS = ["pos_x", "pos_y", "pos_z"]
RIDI_QUAT = ["ori_w", "ori_x", "ori_y", "ori_z"]


class DataFormatError(ValueError):
    """Raised when an input file does not match its schema."""


@dataclass
class ImuSample:
    """One IMU reading: gyro (rad/s) and gravity-removed acceleration (m/s^2)."""

    t_ns: int
    gyro: np.ndarray
    accel: np.ndarray


@dataclass
class ImuSequence:
    """Column-array IMU stream with strictly increasing timestamps."""

    t_ns: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.t_ns = np.asarray(self.t_ns, dtype=np.int64)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        if len(self.t_ns) > 1 and not np.all(np.diff(self.t_ns) > 0):
            raise DataFormatError("IMU timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t_ns)

    def sample(self, i) -> ImuSample:
        return ImuSample(int(self.t_ns[i]), self.gyro[i], self.accel[i])

    def __iter__(self):
        return (self.sample(i) for i in range(len(self)))


@dataclass
class PoseSequence:
    """Timestamped positions and unit quaternions (Hamilton, w first)."""

    t_ns: np.ndarray
    pos: np.ndarray
    quat: np.ndarray

    def __post_init__(self):
        self.t_ns = np.asarray(self.t_ns, dtype=np.int64)
        self.pos = np.asarray(self.pos, dtype=float).reshape(-1, 3)
        self.quat = np.asarray(self.quat, dtype=float).reshape(-1, 4)
        if len(self.t_ns) > 1 and not np.all(np.diff(self.t_ns) > 0):
            raise DataFormatError("pose timestamps must be strictly increasing")
        norms = np.linalg.norm(self.quat, axis=1)
        if len(norms) and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise DataFormatError("pose quaternions must have unit norm")

    def __len__(self):
        return len(self.t_ns)


@dataclass
class AlignedSequence:
    """Synchronized IMU + ground truth on one uniform-rate grid.

    ``rot`` holds the ground-truth orientation as matrices; ``vel_world`` and
    ``vel_body`` are the derived velocity labels.
    """

    t_ns: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    pos: np.ndarray
    rot: np.ndarray
    vel_world: np.ndarray
    vel_body: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t_ns = np.asarray(self.t_ns, dtype=np.int64)
        if len(self.t_ns) > 2:
            dts = np.diff(self.t_ns)
            if dts.max() - dts.min() > UNIFORM_DT_TOL * dts.mean():
                raise DataFormatError("aligned sequence must have uniform dt (1 ppm)")

    def __len__(self):
        return len(self.t_ns)

    @property
    def dt_s(self) -> float:
        return float(self.t_ns[1] - self.t_ns[0]) * 1e-9

    def imu(self) -> ImuSequence:
        return ImuSequence(self.t_ns, self.gyro, self.accel)


# ----------------------------------------------------------------------
# Quaternion helpers (ingestion/serialization only)
# ----------------------------------------------------------------------

def quat_to_matrix(q):
    """Rotation matrix of a Hamilton w-first quaternion."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Hamilton w-first quaternion of a rotation matrix, w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_nlerp(q0, q1, alpha):
    """Normalized linear interpolation between neighboring quaternions.

    Adequate for consecutive 200 Hz poses, where the angle between neighbors
    is tiny and slerp is indistinguishable.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    if np.dot(q0, q1) < 0:
        q1 = -q1
    q = (1.0 - alpha) * q0 + alpha * q1
    return q / np.linalg.norm(q)


# ----------------------------------------------------------------------
# CSV parsing
# ----------------------------------------------------------------------

def _read_csv(path, required):
    """Parse a headed CSV into float columns, reporting bad rows by index."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in required]
        rows = []
        for i, row in enumerate(reader):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(row[j]) for j in idx])
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}: unparseable row {i + 2}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def _sorted_unique_times(data, path):
    """Sort rows by timestamp; duplicated timestamps cannot be repaired."""
    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]
    if np.any(np.diff(data[:, 0]) <= 0):
        raise DataFormatError(f"{path}: duplicate timestamps")
    return data


def load_imu_csv(path) -> ImuSequence:
    data = _sorted_unique_times(_read_csv(path, IMU_COLUMNS), path)
    return ImuSequence(data[:, 0].astype(np.int64), data[:, 1:4], data[:, 4:7])


def load_pose_csv(path) -> PoseSequence:
    data = _sorted_unique_times(_read_csv(path, POSE_COLUMNS), path)
    return PoseSequence(data[:, 0].astype(np.int64), data[:, 1:4], data[:, 4:8])


def _load_ridi(path):
    """Split a RIDI-style single-file recording into IMU and pose streams.

    Column mapping (see README): `time` in seconds (nanoseconds accepted),
    gyro_* for angular rate, linacce_* for the gravity-removed acceleration
    channel, pos_* and ori_{w,x,y,z} (Hamilton, w first) for the reference
    poses.  The quaternion convention is pinned by a fixture test.
    """
    cols = [RIDI_TIME] + RIDI_GYRO + RIDI_ACCEL + RIDI_POS + RIDI_QUAT
    data = _read_csv(path, cols)
    t = data[:, 0]
    if np.max(np.abs(t)) < 1e12:  # seconds, not nanoseconds
        t = t * 1e9
    data[:, 0] = np.round(t)
    data = _sorted_unique_times(data, path)
    t_ns = data[:, 0].astype(np.int64)
    imu = ImuSequence(t_ns, data[:, 1:4], data[:, 4:7])
    poses = PoseSequence(t_ns, data[:, 7:10], data[:, 10:14])
    return imu, poses


def load_sequence(imu_path, pose_path=None, fmt="canonical"):
    """Load raw IMU and pose streams, sorted by timestamp.

    ``fmt`` is "canonical" (two files) or "ridi" (one combined file; the
    pose path is ignored).
    """
    if fmt == "canonical":
        if pose_path is None:
            raise DataFormatError("canonical format needs both an IMU and a pose file")
        return load_imu_csv(imu_path), load_pose_csv(pose_path)
    if fmt == "ridi":
        return _load_ridi(imu_path)
    raise DataFormatError(f"unknown sequence format {fmt!r}")


# ----------------------------------------------------------------------
# Synchronization and labels
# ----------------------------------------------------------------------

def _interp_columns(t_out, t_in, values):
    out = np.empty((len(t_out), values.shape[1]))
    for c in range(values.shape[1]):
        out[:, c] = np.interp(t_out, t_in, values[:, c])
    return out


def _output_grid(pose_t, lo, hi):
    """Timestamps for the aligned grid within the overlap [lo, hi].

    Pose timestamps are used directly when they are already uniform (the
    common case for simulated and resampled data); otherwise a uniform grid
    at the median pose rate is laid over the overlap.
    """
    inside = pose_t[(pose_t >= lo) & (pose_t <= hi)]
    if len(inside) < 2:
        return inside.astype(np.int64)
    dts = np.diff(inside)
    if dts.max() - dts.min() <= UNIFORM_DT_TOL * dts.mean():
        return inside.astype(np.int64)
    step = np.median(dts)
    n = int(np.floor((hi - inside[0]) / step)) + 1
    return (inside[0] + step * np.arange(n)).round().astype(np.int64)


def smoothed_central_velocity(t_s, pos, window=VELOCITY_SMOOTHING_FRAMES):
    """Central-difference world velocity with a short moving average."""
    if len(pos) < 2:
        return np.zeros_like(pos)
    vel = np.gradient(pos, t_s, axis=0)
    if window <= 1 or len(pos) < 3:
        return vel
    half = window // 2
    out = np.empty_like(vel)
    csum = np.cumsum(np.vstack([np.zeros(3), vel]), axis=0)
    n = len(vel)
    for i in range(n):
        a, b = max(0, i - half), min(n, i + half + 1)
        out[i] = (csum[b] - csum[a]) / (b - a)
    return out


def synchronize(imu: ImuSequence, poses: PoseSequence, meta=None) -> AlignedSequence:
    """Interpolate both streams onto one uniform grid inside their overlap.

    IMU channels are linearly interpolated; pose positions linearly, pose
    orientations by normalized quaternion lerp between the two neighbors.
    Samples outside the overlap are dropped; the grid never extrapolates.
    """
    if len(imu) == 0 or len(poses) == 0:
        raise DataFormatError("cannot synchronize empty streams")
    lo = max(imu.t_ns[0], poses.t_ns[0])
    hi = min(imu.t_ns[-1], poses.t_ns[-1])
    if lo > hi:
        raise DataFormatError("IMU and pose time ranges do not overlap")

    t_out = _output_grid(poses.t_ns.astype(float), float(lo), float(hi))
    if len(t_out) == 0:
        raise DataFormatError("no pose samples inside the stream overlap")
    tf = t_out.astype(float)

    gyro = _interp_columns(tf, imu.t_ns.astype(float), imu.gyro)
    accel = _interp_columns(tf, imu.t_ns.astype(float), imu.accel)
    pos = _interp_columns(tf, poses.t_ns.astype(float), poses.pos)

    pose_t = poses.t_ns.astype(float)
    right = np.searchsorted(pose_t, tf, side="left").clip(1, len(pose_t) - 1)
    left = right - 1
    denom = pose_t[right] - pose_t[left]
    alpha = np.where(denom > 0, (tf - pose_t[left]) / np.where(denom > 0, denom, 1.0), 0.0)
    rot = np.empty((len(tf), 3, 3))
    for i in range(len(tf)):
        q = quat_nlerp(poses.quat[left[i]], poses.quat[right[i]], alpha[i])
        rot[i] = quat_to_matrix(q)

    t_s = tf * 1e-9
    vel_world = smoothed_central_velocity(t_s, pos)
    out_meta = {
        "rate_hz": 1e9 / float(t_out[1] - t_out[0]) if len(t_out) > 1 else 0.0,
        "velocity_smoothing_frames": VELOCITY_SMOOTHING_FRAMES,
    }
    if meta:
        out_meta.update(meta)
    seq = AlignedSequence(
        t_ns=t_out,
        gyro=gyro,
        accel=accel,
        pos=pos,
        rot=rot,
        vel_world=vel_world,
        vel_body=np.zeros_like(vel_world),
        meta=out_meta,
    )
    seq.vel_body = body_velocity_labels(seq)
    return seq


def body_velocity_labels(seq: AlignedSequence) -> np.ndarray:
    """Per-frame walking-frame velocity labels [planar speed, 0, vz].

    Equivalent to heading_rotation(v_world).T @ v_world at every frame; the
    lateral component is zero by construction.
    """
    v = seq.vel_world
    labels = np.zeros_like(v)
    labels[:, 0] = np.hypot(v[:, 0], v[:, 1])
    labels[:, 2] = v[:, 2]
    return labels


# ----------------------------------------------------------------------
# Writers
# ----------------------------------------------------------------------

def _write_csv(path, header, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        n = len(columns[0])
        for i in range(n):
            cells = []
            for col in columns:
                v = col[i]
                cells.append(str(int(v)) if isinstance(v, (int, np.integer)) else format(v, ".17g"))
            fh.write(",".join(cells) + "\n")


def write_imu_csv(path, imu: ImuSequence):
    cols = [imu.t_ns] + [imu.gyro[:, i] for i in range(3)] + [imu.accel[:, i] for i in range(3)]
    _write_csv(path, IMU_COLUMNS, cols)


def write_pose_csv(path, t_ns, pos, rot):
    quat = np.array([matrix_to_quat(R) for R in rot])
    cols = [np.asarray(t_ns, dtype=np.int64)]
    cols += [pos[:, i] for i in range(3)]
    cols += [quat[:, i] for i in range(4)]
    _write_csv(path, POSE_COLUMNS, cols)


def write_aligned_csv(path, seq: AlignedSequence):
    """Serialize an aligned sequence plus its JSON metadata sidecar."""
    quat = np.array([matrix_to_quat(R) for R in seq.rot])
    cols = [seq.t_ns]
    cols += [seq.gyro[:, i] for i in range(3)]
    cols += [seq.accel[:, i] for i in range(3)]
    cols += [seq.pos[:, i] for i in range(3)]
    cols += [quat[:, i] for i in range(4)]
    cols += [seq.vel_world[:, i] for i in range(3)]
    cols += [seq.vel_body[:, i] for i in range(3)]
    _write_csv(path, ALIGNED_COLUMNS, cols)
    sidecar = Path(str(path) + ".meta.json")
    sidecar.write_text(json.dumps(seq.meta, indent=2, sort_keys=True) + "\n")


def load_aligned_csv(path) -> AlignedSequence:
    data = _sorted_unique_times(_read_csv(path, ALIGNED_COLUMNS), path)
    rot = np.array([quat_to_matrix(q) for q in data[:, 10:14]])
    meta = {}
    sidecar = Path(str(path) + ".meta.json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    return AlignedSequence(
        t_ns=data[:, 0].astype(np.int64),
        gyro=data[:, 1:4],
        accel=data[:, 4:7],
        pos=data[:, 7:10],
        rot=rot,
        vel_world=data[:, 14:17],
        vel_body=data[:, 17:20],
        meta=meta,
    )
