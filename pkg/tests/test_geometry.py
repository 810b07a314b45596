import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation as ScipyRotation

from pdrkit import geometry


def rotvecs(max_norm=3.0):
    """Rotation-vector strategy bounded away from the log_so3 cut at pi."""
    comp = st.floats(-max_norm / np.sqrt(3), max_norm / np.sqrt(3), allow_nan=False)
    return st.tuples(comp, comp, comp).map(np.array)


class TestSkew:
    def test_definition(self):
        S = geometry.skew([1.0, 2.0, 3.0])
        expected = np.array([[0, -3, 2], [3, 0, -1], [-2, 1, 0]], dtype=float)
        np.testing.assert_array_equal(S, expected)

    def test_zero(self):
        np.testing.assert_array_equal(geometry.skew([0, 0, 0]), np.zeros((3, 3)))

    def test_cross_product(self):
        np.testing.assert_allclose(
            geometry.skew([0, 0, 1]) @ np.array([1, 0, 0]), [0, 1, 0]
        )

    @given(rotvecs(10.0), rotvecs(10.0))
    def test_matches_np_cross(self, v, u):
        np.testing.assert_allclose(geometry.skew(v) @ u, np.cross(v, u), atol=1e-12)

    @given(rotvecs(10.0))
    def test_antisymmetry_kills_own_vector(self, v):
        # S v = v x v = 0, exactly by antisymmetric structure
        S = geometry.skew(v)
        np.testing.assert_array_equal(S + S.T, np.zeros((3, 3)))


class TestExpSo3:
    def test_zero_is_identity(self):
        np.testing.assert_array_equal(geometry.exp_so3([0, 0, 0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        R = geometry.exp_so3([0, 0, np.pi / 2])
        np.testing.assert_allclose(R @ np.array([1, 0, 0]), [0, 1, 0], atol=1e-15)

    def test_inverse_composition(self):
        # DERIVED oracle: quaternion composition via scipy
        w = np.array([0.3, -0.2, 0.7])
        np.testing.assert_allclose(
            geometry.exp_so3(w) @ geometry.exp_so3(-w), np.eye(3), atol=1e-15
        )
        oracle = ScipyRotation.from_rotvec(w).as_matrix()
        np.testing.assert_allclose(geometry.exp_so3(w), oracle, atol=1e-14)

    @given(rotvecs())
    @settings(max_examples=200)
    def test_matches_quaternion_oracle(self, w):
        oracle = ScipyRotation.from_rotvec(w).as_matrix()
        np.testing.assert_allclose(geometry.exp_so3(w), oracle, atol=1e-13)

    def test_small_angle_branch_is_orthonormal(self):
        R = geometry.exp_so3([1e-9, -2e-10, 5e-10])
        assert geometry.is_rotation(R, tol=1e-12)


class TestLogSo3:
    def test_identity(self):
        np.testing.assert_array_equal(geometry.log_so3(np.eye(3)), np.zeros(3))

    def test_quarter_turn(self):
        R = geometry.rot_z(np.pi / 2)
        np.testing.assert_allclose(geometry.log_so3(R), [0, 0, np.pi / 2], atol=1e-14)

    @given(rotvecs())
    @settings(max_examples=200)
    def test_round_trip(self, w):
        # DERIVED: exp/log round trip for |w| <= 3
        np.testing.assert_allclose(
            geometry.log_so3(geometry.exp_so3(w)), w, atol=1e-9
        )

    def test_near_pi_raises(self):
        R = geometry.exp_so3([np.pi - 1e-9, 0, 0])
        with pytest.raises(ValueError):
            geometry.log_so3(R)


class TestProjectToSo3:
    def test_rotation_is_fixed_point(self):
        R = geometry.exp_so3([0.4, -0.1, 0.9])
        np.testing.assert_allclose(geometry.project_to_so3(R), R, atol=1e-12)

    def test_perturbed_rotation_is_reorthonormalized(self):
        R = geometry.exp_so3([0.4, -0.1, 0.9])
        out = geometry.project_to_so3(R + 1e-6)
        assert geometry.is_rotation(out, tol=1e-12)

    def test_uniform_scaling(self):
        np.testing.assert_allclose(
            geometry.project_to_so3(np.diag([2.0, 2.0, 2.0])), np.eye(3), atol=1e-15
        )

    def test_negative_determinant_raises(self):
        with pytest.raises(ValueError):
            geometry.project_to_so3(np.diag([1.0, 1.0, -1.0]))

    @given(rotvecs())
    def test_idempotent(self, w):
        once = geometry.project_to_so3(geometry.exp_so3(w) + 1e-7)
        twice = geometry.project_to_so3(once)
        np.testing.assert_allclose(once, twice, atol=1e-12)


class TestHeadingRotation:
    def test_forced_by_planar_decomposition(self):
        v0 = np.array([3.0, 4.0, 1.0])
        R = geometry.heading_rotation(v0)
        np.testing.assert_allclose(R, geometry.rot_z(np.arctan2(4, 3)), atol=1e-15)
        np.testing.assert_allclose(R.T @ v0, [5.0, 0.0, 1.0], atol=1e-14)

    def test_along_x_is_identity(self):
        np.testing.assert_allclose(
            geometry.heading_rotation([1, 0, 0]), np.eye(3), atol=1e-15
        )

    def test_degenerate_convention(self):
        # standing still (or moving only vertically) keeps the identity heading
        np.testing.assert_array_equal(
            geometry.heading_rotation([0, 0, 0.3]), np.eye(3)
        )

    @given(
        st.floats(-10, 10, allow_nan=False),
        st.floats(-10, 10, allow_nan=False),
        st.floats(-2, 2, allow_nan=False),
    )
    def test_pure_yaw_and_planar_norm(self, vx, vy, vz):
        v0 = np.array([vx, vy, vz])
        R = geometry.heading_rotation(v0)
        np.testing.assert_array_equal(R[:, 2], [0, 0, 1])
        np.testing.assert_array_equal(R[2, :], [0, 0, 1])
        body = R.T @ v0
        np.testing.assert_allclose(body[2], vz, atol=1e-12)
        if np.hypot(vx, vy) >= geometry.MIN_HEADING_SPEED:
            np.testing.assert_allclose(body[0], np.hypot(vx, vy), atol=1e-9)
            np.testing.assert_allclose(body[1], 0.0, atol=1e-9)


class TestRightJacobian:
    def test_zero_is_identity(self):
        np.testing.assert_array_equal(geometry.right_jacobian_so3([0, 0, 0]), np.eye(3))

    @given(rotvecs(2.0))
    @settings(max_examples=100)
    def test_first_order_property(self, w):
        # exp(w + dw) ~ exp(w) exp(Jr(w) dw); check against a small finite step
        Jr = geometry.right_jacobian_so3(w)
        dw = np.array([1e-7, -2e-7, 1.5e-7])
        lhs = geometry.exp_so3(w + dw)
        rhs = geometry.exp_so3(w) @ geometry.exp_so3(Jr @ dw)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
