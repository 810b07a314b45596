"""Differentiable mirror of the runtime filter, batched over sequences.

The estimator being trained through is a Kalman filter on an 18-dimensional
world-frame error state (attitude, velocity, position, two biases, walking
frame misalignment), driven by strapdown propagation and corrected every
sample by a manufactured walking-frame velocity observation: forward speed
from the displacement of the last few seconds, zero lateral and vertical
velocity.  The per-step measurement covariance N is the network output, and
gradients flow from the body-frame velocity loss through the whole
recursion back into the network (optionally with the gain detached).

All math is float64 so a run with the constant baseline reproduces the
runtime implementation to rounding; parity is pinned by a fixture test
against the runtime's state dump.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

# error-state block offsets: dR, dv, dp, dbw, dba, dRb
STATE_DIM = 18


@dataclass
class MirrorConfig:
    """Filter constants; defaults match the runtime's reference setup."""

    p0_diag: tuple = (1e-6, 1e-5, 0.0, 1e-6, 1e-3, 1e-5)  # per 3-block
    q_diag: tuple = (2e-4, 1e-3, 1e-6, 2e-5, 1e-3)  # per 3-block
    sigma0: tuple = (3.0, 2.0, 0.2)
    window_s: float = 5.0
    min_window_s: float = 1.0
    speed_clamp: float = 2.0
    detach_gain: bool = False


def skew(v: torch.Tensor) -> torch.Tensor:
    """(B, 3) -> (B, 3, 3)."""
    b = v.shape[0]
    S = v.new_zeros(b, 3, 3)
    S[:, 0, 1], S[:, 0, 2] = -v[:, 2], v[:, 1]
    S[:, 1, 0], S[:, 1, 2] = v[:, 2], -v[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -v[:, 1], v[:, 0]
    return S


def _taylor_coeffs(theta: torch.Tensor):
    """Smooth sin/cos coefficient ratios with small-angle series."""
    small = theta < 1e-8
    safe = torch.where(small, torch.ones_like(theta), theta)
    t2 = theta * theta
    sin_t = torch.where(small, 1.0 - t2 / 6.0, torch.sin(safe) / safe)
    cos_t = torch.where(small, 0.5 - t2 / 24.0, (1.0 - torch.cos(safe)) / safe**2)
    tms_t = torch.where(small, 1.0 / 6.0 - t2 / 120.0, (safe - torch.sin(safe)) / safe**3)
    return sin_t, cos_t, tms_t


def so3_exp(w: torch.Tensor) -> torch.Tensor:
    """(B, 3) rotation vectors -> (B, 3, 3), differentiable through zero."""
    theta = w.norm(dim=1)
    sin_t, cos_t, _ = _taylor_coeffs(theta)
    S = skew(w)
    eye = torch.eye(3, dtype=w.dtype, device=w.device).expand_as(S)
    return eye + sin_t[:, None, None] * S + cos_t[:, None, None] * (S @ S)


def so3_right_jacobian(w: torch.Tensor) -> torch.Tensor:
    theta = w.norm(dim=1)
    _, cos_t, tms_t = _taylor_coeffs(theta)
    S = skew(w)
    eye = torch.eye(3, dtype=w.dtype, device=w.device).expand_as(S)
    return eye - cos_t[:, None, None] * S + tms_t[:, None, None] * (S @ S)


def so3_left_jacobian(w: torch.Tensor) -> torch.Tensor:
    return so3_right_jacobian(w).transpose(1, 2)


@dataclass
class MirrorState:
    R: torch.Tensor  # (B, 3, 3) sensor to world
    v: torch.Tensor  # (B, 3)
    p: torch.Tensor  # (B, 3)
    bw: torch.Tensor  # (B, 3)
    ba: torch.Tensor  # (B, 3)
    Rb: torch.Tensor  # (B, 3, 3) walking frame w.r.t. sensor
    P: torch.Tensor  # (B, 18, 18)
    history: list = field(default_factory=list)  # past positions, most recent last
    step: int = 0

    def detached(self) -> "MirrorState":
        return MirrorState(
            self.R.detach(), self.v.detach(), self.p.detach(),
            self.bw.detach(), self.ba.detach(), self.Rb.detach(),
            self.P.detach(), [h.detach() for h in self.history], self.step,
        )


def heading_rotation(v0: torch.Tensor) -> torch.Tensor:
    """Pure-yaw walking frame of the initial velocity; identity near rest."""
    b = v0.shape[0]
    planar = torch.hypot(v0[:, 0], v0[:, 1])
    yaw = torch.atan2(v0[:, 1], v0[:, 0])
    c, s = torch.cos(yaw), torch.sin(yaw)
    R = torch.zeros(b, 3, 3, dtype=v0.dtype)
    R[:, 0, 0], R[:, 0, 1] = c, -s
    R[:, 1, 0], R[:, 1, 1] = s, c
    R[:, 2, 2] = 1.0
    eye = torch.eye(3, dtype=v0.dtype).expand_as(R)
    still = (planar < 1e-3)[:, None, None]
    return torch.where(still, eye, R)


def init_state(R0: torch.Tensor, p0: torch.Tensor, v0: torch.Tensor, cfg: MirrorConfig) -> MirrorState:
    b = R0.shape[0]
    Rb0 = heading_rotation(v0)
    P = torch.zeros(b, STATE_DIM, STATE_DIM, dtype=torch.float64)
    for blk, var in enumerate(cfg.p0_diag):
        i = 3 * blk
        P[:, i:i + 3, i:i + 3] = var * torch.eye(3, dtype=torch.float64)
    state = MirrorState(
        R=R0.clone(), v=v0.clone(), p=p0.clone(),
        bw=torch.zeros(b, 3, dtype=torch.float64),
        ba=torch.zeros(b, 3, dtype=torch.float64),
        Rb=R0.transpose(1, 2) @ Rb0,
        P=P,
    )
    state.history.append(state.p.clone())
    return state


def _process_noise(cfg: MirrorConfig) -> torch.Tensor:
    q = torch.empty(15, dtype=torch.float64)
    for blk, var in enumerate(cfg.q_diag):
        q[3 * blk:3 * blk + 3] = var
    return torch.diag(q)


def step(state: MirrorState, gyro, accel, dt: float, N_diag, y_forward, cfg: MirrorConfig, Q=None) -> MirrorState:
    """One propagate + update cycle.

    gyro, accel: (B, 3) raw rates driving the step; N_diag: (B, 3) network
    covariance diagonal; y_forward: (B,) forward pseudo-observation.
    """
    if Q is None:
        Q = _process_noise(cfg)
    b = gyro.shape[0]
    eye3 = torch.eye(3, dtype=torch.float64)

    w = gyro - state.bw
    a = accel - state.ba
    phi = w * dt
    M = so3_exp(phi)
    R_next = state.R @ M
    v_next = state.v + (state.R @ a.unsqueeze(-1)).squeeze(-1) * dt
    p_next = state.p + state.v * dt

    # covariance march with the exact step Jacobians
    RJr_dt = (R_next @ so3_right_jacobian(phi)) * dt
    F = torch.eye(STATE_DIM, dtype=torch.float64).expand(b, -1, -1).clone()
    F[:, 0:3, 9:12] = -RJr_dt
    F[:, 3:6, 9:12] = -skew(v_next) @ RJr_dt
    F[:, 6:9, 9:12] = -skew(p_next) @ RJr_dt
    F[:, 3:6, 12:15] = -state.R * dt
    F[:, 6:9, 3:6] = dt * eye3
    G = torch.zeros(b, STATE_DIM, 15, dtype=torch.float64)
    G[:, 0:3, 0:3] = -RJr_dt
    G[:, 3:6, 0:3] = -skew(v_next) @ RJr_dt
    G[:, 6:9, 0:3] = -skew(p_next) @ RJr_dt
    G[:, 3:6, 3:6] = -state.R * dt
    G[:, 9:12, 6:9] = dt * eye3
    G[:, 12:15, 9:12] = dt * eye3
    G[:, 15:18, 12:15] = dt * eye3
    P = F @ state.P @ F.transpose(1, 2) + G @ Q @ G.transpose(1, 2)
    P = 0.5 * (P + P.transpose(1, 2))

    history = state.history + [p_next]

    # observation: walking-frame velocity with zero lateral/vertical
    B_mat = R_next @ state.Rb
    y_hat = (B_mat.transpose(1, 2) @ v_next.unsqueeze(-1)).squeeze(-1)
    y = torch.stack([y_forward, torch.zeros_like(y_forward), torch.zeros_like(y_forward)], dim=1)
    H = torch.zeros(b, 3, STATE_DIM, dtype=torch.float64)
    H[:, :, 3:6] = B_mat.transpose(1, 2)
    H[:, :, 15:18] = skew(y_hat)
    N = torch.diag_embed(N_diag)

    S = H @ P @ H.transpose(1, 2) + N
    PHt = P @ H.transpose(1, 2)
    K = torch.linalg.solve(S.transpose(1, 2), PHt.transpose(1, 2)).transpose(1, 2)
    if cfg.detach_gain:
        K = K.detach()
    delta = (K @ (y - y_hat).unsqueeze(-1)).squeeze(-1)

    # world-frame retraction on (R, v, p), additive biases, right-multiplied
    # walking-frame correction
    E = so3_exp(delta[:, 0:3])
    Jl = so3_left_jacobian(delta[:, 0:3])
    R_up = E @ R_next
    v_up = (E @ v_next.unsqueeze(-1)).squeeze(-1) + (Jl @ delta[:, 3:6].unsqueeze(-1)).squeeze(-1)
    p_up = (E @ p_next.unsqueeze(-1)).squeeze(-1) + (Jl @ delta[:, 6:9].unsqueeze(-1)).squeeze(-1)
    bw_up = state.bw + delta[:, 9:12]
    ba_up = state.ba + delta[:, 12:15]
    Rb_up = state.Rb @ so3_exp(delta[:, 15:18])

    I_KH = torch.eye(STATE_DIM, dtype=torch.float64) - K @ H
    P_up = I_KH @ P @ I_KH.transpose(1, 2) + K @ N @ K.transpose(1, 2)
    P_up = 0.5 * (P_up + P_up.transpose(1, 2))

    history[-1] = p_up
    return MirrorState(R_up, v_up, p_up, bw_up, ba_up, Rb_up, P_up, history, state.step + 1)


def body_velocity(state: MirrorState) -> torch.Tensor:
    """(B, 3) velocity in the walking frame, the quantity the loss compares."""
    B_mat = state.R @ state.Rb
    return (B_mat.transpose(1, 2) @ state.v.unsqueeze(-1)).squeeze(-1)


def run_chunk(state: MirrorState, gyro, accel, n_diag, t0: float, dt: float, v0, cfg: MirrorConfig):
    """Run the mirror over one chunk of frames.

    gyro, accel, n_diag: (B, T, 3); the k-th entries drive the transition
    into frame k (they belong to the previous sample, like the runtime).
    Returns the per-frame body-frame velocities (B, T, 3) including the
    entry state, and the final state.

    The history window is trimmed to the averaging span to bound memory.
    """
    rate = 1.0 / dt
    keep = int(round(cfg.window_s * rate)) + 1
    Q = _process_noise(cfg)
    outputs = [body_velocity(state)]
    T = gyro.shape[1]
    for k in range(1, T):
        t_el = t0 + k * dt
        y_fw = pseudo_speed_pre(state, v0, t_el, rate, cfg)
        state = step(state, gyro[:, k - 1], accel[:, k - 1], dt, n_diag[:, k - 1], y_fw, cfg, Q=Q)
        if len(state.history) > keep:
            del state.history[: len(state.history) - keep]
        outputs.append(body_velocity(state))
    return torch.stack(outputs, dim=1), state


def pseudo_speed_pre(state: MirrorState, v0, t_el, rate, cfg) -> torch.Tensor:
    """Forward observation evaluated at the predicted position of this step.

    The runtime builds the measurement after propagating, so the window's
    newest endpoint is the predicted position; reproduce that here.
    """
    p_pred = state.p + state.v * (1.0 / rate)
    if t_el < cfg.min_window_s or len(state.history) < 1:
        speed = torch.hypot(v0[:, 0], v0[:, 1])
    else:
        w_s = max(min(cfg.window_s, t_el), cfg.min_window_s)
        k = int(round(w_s * rate))
        k = max(1, min(k, len(state.history)))
        disp = p_pred - state.history[-k]
        speed = torch.hypot(disp[:, 0], disp[:, 1]) / (k / rate)
    return torch.clamp(speed, 0.0, cfg.speed_clamp)
