"""SO(3) primitives shared by the simulator, the filter, and the metrics.

Rotations are plain 3x3 numpy arrays (orthonormal, det +1).  Quaternions are
deliberately absent here; they only appear in dataset ingestion and in test
oracles.  All functions are pure and safe to call from any thread.
"""

from __future__ import annotations

import numpy as np

# Below this rotation angle the closed forms switch to truncated series to
# avoid dividing by a vanishing norm.
SMALL_ANGLE = 1e-8

# Planar speeds below this are treated as "standing still" when deriving a
# walking heading; the degenerate heading is the identity.
MIN_HEADING_SPEED = 1e-3


def skew(v):
    """Skew-symmetric matrix S with S @ u == np.cross(v, u)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def exp_so3(w):
    """Rotation matrix for a rotation vector ``w`` (radians).

    Rodrigues closed form; below SMALL_ANGLE a second-order series is used so
    the map stays smooth through zero.
    """
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    S = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + S + 0.5 * (S @ S)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * S
        + ((1.0 - np.cos(theta)) / theta**2) * (S @ S)
    )


def log_so3(R):
    """Rotation vector of ``R``, the inverse of :func:`exp_so3`.

    Only defined for rotation angles below ``pi - 1e-6``; near-pi rotations
    raise ValueError because the axis becomes numerically ambiguous.
    """
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta > np.pi - 1e-6:
        raise ValueError(f"rotation angle {theta:.9f} too close to pi for log_so3")
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        # sin(theta)/theta ~ 1 - theta^2/6
        return vee * (1.0 + theta**2 / 6.0)
    return vee * (theta / np.sin(theta))


def right_jacobian_so3(w):
    """Right Jacobian of SO(3): exp(w + dw) == exp(w) @ exp(J_r(w) @ dw) + O(dw^2)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    S = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * S + (1.0 / 6.0) * (S @ S)
    return (
        np.eye(3)
        - ((1.0 - np.cos(theta)) / theta**2) * S
        + ((theta - np.sin(theta)) / theta**3) * (S @ S)
    )


def left_jacobian_so3(w):
    """Left Jacobian of SO(3): exp(w + dw) == exp(J_l(w) @ dw) @ exp(w) + O(dw^2).

    Transpose of the right Jacobian at the same argument.
    """
    return right_jacobian_so3(w).T


def project_to_so3(M):
    """Nearest rotation to ``M`` in Frobenius norm (polar decomposition).

    Requires det(M) > 0; repeated products drift away from orthonormality and
    this snaps them back.
    """
    M = np.asarray(M, dtype=float)
    if np.linalg.det(M) <= 0.0:
        raise ValueError("cannot project a matrix with non-positive determinant")
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


def heading_rotation(v0):
    """Pure-yaw rotation whose transpose sends ``v0`` to [planar speed, 0, vz].

    This is the walking-direction frame: x along the horizontal velocity,
    z up.  When the planar speed is below MIN_HEADING_SPEED the heading is
    undefined and the identity is returned so callers can initialize from
    rest.
    """
    v0 = np.asarray(v0, dtype=float)
    planar = np.hypot(v0[0], v0[1])
    if planar < MIN_HEADING_SPEED:
        return np.eye(3)
    yaw = np.arctan2(v0[1], v0[0])
    return rot_z(yaw)


def rot_z(yaw):
    """Rotation by ``yaw`` radians about the world z axis."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation(R, tol=1e-9):
    """True if ``R`` is orthonormal with determinant +1 within ``tol``."""
    R = np.asarray(R)
    if R.shape != (3, 3):
        return False
    return (
        np.linalg.norm(R.T @ R - np.eye(3)) < tol
        and abs(np.linalg.det(R) - 1.0) < tol
    )
