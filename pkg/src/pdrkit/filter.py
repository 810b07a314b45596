"""The core estimator: an EKF on an 18-dimensional manifold error state.

State mean:

    R_i   sensor orientation, sensor->world
    v_i   velocity in the world frame (m/s)
    p_i   position in the world frame (m)
    b_w   gyro bias (rad/s)
    b_a   accelerometer bias (m/s^2)
    R_bi  walking-frame misalignment: rotation of the ideal body frame
          (x along the walking direction, z up) w.r.t. the sensor frame

The error state stacks six 3-blocks in the order (dR, dv, dp, db_w, db_a,
dR_b).  The (dR, dv, dp) triple is a world-frame group error on the extended
pose, applied by the retraction

    R <- E @ R,   v <- E @ v + J_l(dR) @ dv,   p <- E @ p + J_l(dR) @ dp

with E = exp_so3(dR); biases are additive and the misalignment correction is
right-multiplicative, R_bi <- R_bi @ exp_so3(dR_b), matching how its own
random walk enters.  This world-frame (invariant) convention is what keeps
the error dynamics independent of the trajectory: a wrong attitude cannot be
blamed on velocity innovations and vice versa, which is what makes the
filter consistent over long runs.  Every Jacobian in this module is the
exact derivative of the corresponding map under this retraction; the
finite-difference gates in the test suite check that.

The observation is the velocity expressed in the walking frame,
y_hat = (R_i R_bi)^T v_i, measured by manufactured pseudo-observations:
forward speed from the displacement of the last few seconds (walking is slow
and smooth), zero lateral and zero vertical velocity.

A filter instance is a sequential recursion and single-threaded; separate
instances are independent.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import AlignedSequence, ImuSample
from .geometry import (
    exp_so3,
    heading_rotation,
    left_jacobian_so3,
    log_so3,
    project_to_so3,
    right_jacobian_so3,
    skew,
)
from .simulate import MAX_WALKING_SPEED, GroundTruthSample

STATE_DIM = 18
NOISE_DIM = 15

# error-state block slices
B_R = slice(0, 3)
B_V = slice(3, 6)
B_P = slice(6, 9)
B_BW = slice(9, 12)
B_BA = slice(12, 15)
B_RB = slice(15, 18)

MAX_DT = 0.1  # s; one IMU step longer than this indicates broken data


class FilterError(RuntimeError):
    """Numeric failure inside the filter; carries the failing timestamp."""

    def __init__(self, message, t_ns=None):
        super().__init__(message if t_ns is None else f"{message} (at t_ns={t_ns})")
        self.t_ns = t_ns


@dataclass
class FilterState:
    R_i: np.ndarray
    v_i: np.ndarray
    p_i: np.ndarray
    b_w: np.ndarray
    b_a: np.ndarray
    R_bi: np.ndarray

    def copy(self) -> "FilterState":
        return FilterState(
            self.R_i.copy(), self.v_i.copy(), self.p_i.copy(),
            self.b_w.copy(), self.b_a.copy(), self.R_bi.copy(),
        )

    def is_finite(self) -> bool:
        # a single reduced sum is NaN/Inf iff any component is non-finite
        total = (
            self.R_i.sum() + self.v_i.sum() + self.p_i.sum()
            + self.b_w.sum() + self.b_a.sum() + self.R_bi.sum()
        )
        return bool(np.isfinite(total))


@dataclass
class PseudoObservation:
    """Walking-frame velocity observation [forward, 0, 0] with covariance N."""

    y: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.N = np.asarray(self.N, dtype=float)
        if self.y.shape != (3,) or self.N.shape != (3, 3):
            raise ValueError("pseudo-observation must be 3-dimensional")
        if self.y[1] != 0.0 or self.y[2] != 0.0:
            raise ValueError("lateral and vertical pseudo-observations must be zero")
        if not 0.0 <= self.y[0] <= MAX_WALKING_SPEED:
            raise ValueError(f"forward speed {self.y[0]} outside [0, {MAX_WALKING_SPEED}] m/s")
        d = np.diag(self.N)
        if np.any(d <= 0) or np.any(self.N != np.diag(d)):
            raise ValueError("measurement covariance must be diagonal positive")


@dataclass
class FilterConfig:
    """Tuning constants.  The defaults are the reference walking setup.

    The first two process-noise entries are per-sample white-noise variances
    of the gyro/accel channels ((rad/s)^2, (m/s^2)^2); the remaining three
    are squared drift rates of the two bias random walks and of the
    walking-frame misalignment walk (their per-step increment std is
    sqrt(var) * dt, see :func:`propagate_noisy`).
    """

    # initial error covariance, one variance per block
    orientation_var0: float = 1e-6
    velocity_var0: float = 1e-5
    position_var0: float = 0.0
    gyro_bias_var0: float = 1e-6
    accel_bias_var0: float = 1e-3
    misalignment_var0: float = 1e-5
    # process noise
    gyro_white_var: float = 2e-4
    accel_white_var: float = 1e-3
    gyro_walk_var: float = 1e-6
    accel_walk_var: float = 2e-5
    misalignment_walk_var: float = 1e-3
    # measurement baseline (forward, lateral, vertical variances)
    sigma0: tuple = (3.0, 2.0, 0.2)
    # pseudo-measurement construction
    window_s: float = 5.0
    min_window_s: float = 1.0
    speed_clamp_mps: float = MAX_WALKING_SPEED
    sample_rate_hz: float = 200.0
    # behavior switches
    observe_forward: bool = True
    updates_enabled: bool = True
    reproject_every: int = 1000

    def __post_init__(self):
        if len(self.sigma0) != 3 or any(s <= 0 for s in self.sigma0):
            raise ValueError("sigma0 must be three positive variances")
        for name in (
            "gyro_white_var", "accel_white_var", "gyro_walk_var",
            "accel_walk_var", "misalignment_walk_var",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.window_s <= 0 or self.min_window_s <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("window lengths and sample rate must be positive")
        if self.speed_clamp_mps <= 0:
            raise ValueError("speed clamp must be positive")

    def initial_covariance(self) -> np.ndarray:
        d = np.concatenate(
            [
                np.full(3, self.orientation_var0),
                np.full(3, self.velocity_var0),
                np.full(3, self.position_var0),
                np.full(3, self.gyro_bias_var0),
                np.full(3, self.accel_bias_var0),
                np.full(3, self.misalignment_var0),
            ]
        )
        return np.diag(d)

    def process_noise(self) -> np.ndarray:
        d = np.concatenate(
            [
                np.full(3, self.gyro_white_var),
                np.full(3, self.accel_white_var),
                np.full(3, self.gyro_walk_var),
                np.full(3, self.accel_walk_var),
                np.full(3, self.misalignment_walk_var),
            ]
        )
        return np.diag(d)


# ----------------------------------------------------------------------
# Error-state chart
# ----------------------------------------------------------------------

def retract(s: FilterState, delta) -> FilterState:
    """Apply an 18-dim error vector to a state (see the module docstring)."""
    delta = np.asarray(delta, dtype=float)
    E = exp_so3(delta[B_R])
    Jl = left_jacobian_so3(delta[B_R])
    return FilterState(
        R_i=E @ s.R_i,
        v_i=E @ s.v_i + Jl @ delta[B_V],
        p_i=E @ s.p_i + Jl @ delta[B_P],
        b_w=s.b_w + delta[B_BW],
        b_a=s.b_a + delta[B_BA],
        R_bi=s.R_bi @ exp_so3(delta[B_RB]),
    )


def state_difference(s2: FilterState, s1: FilterState) -> np.ndarray:
    """Error vector d with retract(s1, d) == s2 (inverse of the retraction)."""
    xi_r = log_so3(s2.R_i @ s1.R_i.T)
    E = exp_so3(xi_r)
    Jl = left_jacobian_so3(xi_r)
    return np.concatenate(
        [
            xi_r,
            np.linalg.solve(Jl, s2.v_i - E @ s1.v_i),
            np.linalg.solve(Jl, s2.p_i - E @ s1.p_i),
            s2.b_w - s1.b_w,
            s2.b_a - s1.b_a,
            log_so3(s1.R_bi.T @ s2.R_bi),
        ]
    )


# ----------------------------------------------------------------------
# Initialization and propagation
# ----------------------------------------------------------------------

def init_state(initial_pose: GroundTruthSample, v0) -> FilterState:
    """Filter state from the initial pose and the initial world velocity.

    The walking frame starts as the heading frame of v0 (identity heading
    when starting from rest), and the misalignment is whatever rotation links
    it to the initial sensor orientation.
    """
    v0 = np.asarray(v0, dtype=float)
    R_b0 = heading_rotation(v0)
    return FilterState(
        R_i=np.asarray(initial_pose.rotation, dtype=float).copy(),
        v_i=v0.copy(),
        p_i=np.asarray(initial_pose.position, dtype=float).copy(),
        b_w=np.zeros(3),
        b_a=np.zeros(3),
        R_bi=initial_pose.rotation.T @ R_b0,
    )


def propagate(s: FilterState, imu: ImuSample, dt: float) -> FilterState:
    """One strapdown step with bias-corrected rates.

    Position integrates the pre-step velocity (first order); biases and the
    misalignment are driftless in the mean.
    """
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt={dt} outside (0, {MAX_DT}] s")
    w = imu.gyro - s.b_w
    a = imu.accel - s.b_a
    R_next = s.R_i @ exp_so3(w * dt)
    return FilterState(
        R_i=R_next,
        v_i=s.v_i + s.R_i @ a * dt,
        p_i=s.p_i + s.v_i * dt,
        b_w=s.b_w.copy(),
        b_a=s.b_a.copy(),
        R_bi=s.R_bi.copy(),
    )


def propagate_noisy(s: FilterState, imu: ImuSample, dt: float, w) -> FilterState:
    """Propagation with explicit noise inputs (the model G differentiates).

    ``w`` stacks (gyro white [rad/s], accel white [m/s^2], gyro-bias walk
    rate, accel-bias walk rate, misalignment walk rate).  White noises
    corrupt the measured rates; the walk rates integrate over the step, so
    the bias blocks move by w*dt and the misalignment by exp(w*dt).
    """
    w = np.asarray(w, dtype=float)
    noisy = ImuSample(imu.t_ns, imu.gyro - w[0:3], imu.accel - w[3:6])
    out = propagate(s, noisy, dt)
    return FilterState(
        R_i=out.R_i,
        v_i=out.v_i,
        p_i=out.p_i,
        b_w=out.b_w + w[6:9] * dt,
        b_a=out.b_a + w[9:12] * dt,
        R_bi=out.R_bi @ exp_so3(w[12:15] * dt),
    )


def transition_jacobians(s: FilterState, imu: ImuSample, dt: float):
    """Exact Jacobians (F, G) of the propagation under the retraction.

    F is d(error out)/d(error in); G is d(error out)/d(noise) for the noise
    model of :func:`propagate_noisy`.  Under the world-frame error the
    attitude, velocity, and position error blocks are decoupled from the
    state trajectory; only the gyro-bias column picks up the state-dependent
    skew terms, evaluated at the propagated state and filtered through the
    right Jacobian of the step rotation.  Every noise channel is a rate, so
    every G column carries a dt factor.
    """
    w = imu.gyro - s.b_w
    a = imu.accel - s.b_a
    phi = w * dt
    R_next = s.R_i @ exp_so3(phi)
    v_next = s.v_i + s.R_i @ a * dt
    p_next = s.p_i + s.v_i * dt
    RJr_dt = R_next @ right_jacobian_so3(phi) * dt

    F = np.eye(STATE_DIM)
    F[B_R, B_BW] = -RJr_dt
    F[B_V, B_BW] = -skew(v_next) @ RJr_dt
    F[B_P, B_BW] = -skew(p_next) @ RJr_dt
    F[B_V, B_BA] = -s.R_i * dt
    F[B_P, B_V] = np.eye(3) * dt

    G = np.zeros((STATE_DIM, NOISE_DIM))
    G[B_R, 0:3] = -RJr_dt
    G[B_V, 0:3] = -skew(v_next) @ RJr_dt
    G[B_P, 0:3] = -skew(p_next) @ RJr_dt
    G[B_V, 3:6] = -s.R_i * dt
    G[B_BW, 6:9] = np.eye(3) * dt
    G[B_BA, 9:12] = np.eye(3) * dt
    G[B_RB, 12:15] = np.eye(3) * dt
    return F, G


def predict_covariance(s: FilterState, P, Q, imu: ImuSample, dt: float) -> np.ndarray:
    """P <- F P F^T + G Q G^T, symmetrized."""
    P = np.asarray(P, dtype=float)
    if not np.all(np.isfinite(P)):
        raise FilterError("covariance is not finite")
    F, G = transition_jacobians(s, imu, dt)
    P_new = F @ P @ F.T + G @ Q @ G.T
    return 0.5 * (P_new + P_new.T)


# ----------------------------------------------------------------------
# Observation
# ----------------------------------------------------------------------

def predict_observation(s: FilterState) -> np.ndarray:
    """Velocity in the walking frame, (R_i R_bi)^T v_i."""
    return s.R_bi.T @ (s.R_i.T @ s.v_i)


def observation_matrix(s: FilterState) -> np.ndarray:
    """Exact Jacobian H of the walking-frame velocity under the retraction.

    A world-frame attitude error rotates the velocity and its frame
    together, so the attitude block vanishes identically; only the velocity
    and misalignment blocks remain.
    """
    y_hat = predict_observation(s)
    H = np.zeros((3, STATE_DIM))
    H[:, B_V] = (s.R_i @ s.R_bi).T
    H[:, B_RB] = skew(y_hat)
    return H


def build_pseudo_measurement(history, v0, t, cfg: FilterConfig, rate_hz=None) -> np.ndarray:
    """Manufactured observation [forward speed, 0, 0].

    The forward speed is the planar displacement over the averaging window
    divided by the window length, clamped to the walking range.  ``history``
    holds past position estimates at the filter rate, most recent last
    (including the current one).  Early on the window shrinks down to
    ``min_window_s``; before that the planar speed of v0 is used.
    """
    rate = cfg.sample_rate_hz if rate_hz is None else rate_hz
    if t < cfg.min_window_s or len(history) < 2:
        speed = float(np.hypot(v0[0], v0[1]))
    else:
        w_s = max(min(cfg.window_s, t), cfg.min_window_s)
        k = int(round(w_s * rate))
        k = max(1, min(k, len(history) - 1))
        disp = history[-1] - history[-1 - k]
        speed = float(np.hypot(disp[0], disp[1])) / (k / rate)
    speed = min(max(speed, 0.0), cfg.speed_clamp_mps)
    return np.array([speed, 0.0, 0.0])


def update(s: FilterState, P, obs: PseudoObservation, observe_forward=True):
    """Kalman update with the pseudo-observation; Joseph-form covariance.

    With ``observe_forward`` false only the lateral and vertical components
    are used (the ablated two-scalar observation).
    """
    P = np.asarray(P, dtype=float)
    H = observation_matrix(s)
    innovation = obs.y - predict_observation(s)
    N = obs.N
    if not observe_forward:
        H, innovation, N = H[1:], innovation[1:], N[1:, 1:]

    S = H @ P @ H.T + N
    try:
        K = np.linalg.solve(S, (P @ H.T).T).T
    except np.linalg.LinAlgError as exc:
        raise FilterError(f"innovation covariance not invertible: {exc}") from None

    delta = K @ innovation
    s_new = retract(s, delta)
    I_KH = np.eye(STATE_DIM) - K @ H
    P_new = I_KH @ P @ I_KH.T + K @ N @ K.T
    return s_new, 0.5 * (P_new + P_new.T)


# ----------------------------------------------------------------------
# Sequence driver
# ----------------------------------------------------------------------

def run_sequence(data, cfg: FilterConfig, adapter, *, init_pose=None, v0=None):
    """Run the filter over a full sequence.

    ``data`` is an AlignedSequence (initial pose and v0 default to its first
    ground-truth frame) or a bare ImuSequence (both must be given).
    ``adapter`` supplies the per-step measurement covariance; passing None,
    or setting ``cfg.updates_enabled`` false, disables the update step, which
    turns the run into naive integration (the covariance is then left at its
    initial value rather than marched, since nothing consumes it).

    Returns one (FilterState, covariance) pair per input timestamp.
    """
    if isinstance(data, AlignedSequence):
        imu = data.imu()
        if init_pose is None:
            init_pose = GroundTruthSample(
                int(data.t_ns[0]), data.pos[0], data.rot[0], data.vel_world[0]
            )
        if v0 is None:
            v0 = data.vel_world[0]
    else:
        imu = data
        if init_pose is None or v0 is None:
            raise ValueError("an IMU-only run needs init_pose and v0")

    n = len(imu)
    if n == 0:
        return []

    v0 = np.asarray(v0, dtype=float)
    s = init_state(init_pose, v0)
    P = cfg.initial_covariance()
    Q = cfg.process_noise()
    do_updates = cfg.updates_enabled and adapter is not None
    if adapter is not None:
        adapter.reset()

    t_ns = imu.t_ns
    rate = 1e9 / float(np.median(np.diff(t_ns))) if n > 1 else cfg.sample_rate_hz
    history = deque(maxlen=int(round(cfg.window_s * rate)) + 1)
    history.append(s.p_i.copy())
    out = [(s.copy(), P.copy())]

    for k in range(1, n):
        sample = imu.sample(k - 1)
        dt = float(t_ns[k] - t_ns[k - 1]) * 1e-9
        try:
            if do_updates:
                P = predict_covariance(s, P, Q, sample, dt)
            s = propagate(s, sample, dt)
            history.append(s.p_i.copy())
            if do_updates:
                t_el = float(t_ns[k] - t_ns[0]) * 1e-9
                y = build_pseudo_measurement(history, v0, t_el, cfg, rate_hz=rate)
                obs = PseudoObservation(y=y, N=adapter.covariance(sample))
                s, P = update(s, P, obs, observe_forward=cfg.observe_forward)
                history[-1] = s.p_i.copy()
            if cfg.reproject_every and k % cfg.reproject_every == 0:
                s = replace(s, R_i=project_to_so3(s.R_i), R_bi=project_to_so3(s.R_bi))
            if not s.is_finite():
                raise FilterError("state is not finite")
        except FilterError as exc:
            raise FilterError(str(exc), t_ns=int(t_ns[k])) from None
        out.append((s.copy(), P.copy()))
    return out
