"""Acceptance suite: one test per release criterion.

Each test prints a PASS line (visible with ``pytest -s``) and enforces both
the numeric tolerance and the runtime budget of its criterion.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from pdrkit import dataio, geometry
from pdrkit.adapter import (
    ConstantNoiseAdapter,
    LearnedNoiseAdapter,
    WindowBuffer,
    infer_z,
    load_weights,
    measurement_noise,
)
from pdrkit.dataio import ImuSample, ImuSequence
from pdrkit.evaluate import Trajectory, ate, ndi_baseline, rte, trajectory_from_states
from pdrkit.filter import (
    FilterConfig,
    FilterState,
    observation_matrix,
    predict_observation,
    propagate,
    propagate_noisy,
    retract,
    run_sequence,
    state_difference,
    transition_jacobians,
)
from pdrkit.simulate import (
    GroundTruthSample,
    ImuNoiseSpec,
    Segment,
    TrajectorySpec,
    generate_trajectory,
    synthesize_imu,
)

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "adapter"


def report(name, elapsed, budget, detail=""):
    print(f"\nACCEPTANCE {name}: PASS ({elapsed:.2f}s < {budget:.0f}s) {detail}")


def reference_noise():
    """Sensor realization for the desk-scale end-to-end runs.

    White-noise levels of a fused phone linear-acceleration channel plus
    small constant biases, sized so the uncorrected double-integration drift
    lands at the reference scale (tens of meters over two minutes).
    """
    return ImuNoiseSpec(
        gyro_white_std=1.5e-3,
        accel_white_std=2e-3,
        gyro_bias0=[3e-5, -2e-5, 4e-5],
        accel_bias0=[1e-3, -5e-3, 4e-3],
    )


def walk_120s():
    turn = np.deg2rad(10.0 / 3.0)
    return TrajectorySpec(
        segments=[
            Segment(50.0, 1.2, 0.0),
            Segment(3.0, 1.2, turn),
            Segment(30.0, 1.2, 0.0),
            Segment(3.0, 1.2, -turn),
            Segment(34.0, 1.2, 0.0),
        ]
    )


class TestAcceptance:
    def test_jacobian_gate(self):
        """Analytic F, G, H match finite differences of the
        retraction-composed maps on 100 random states (rel err < 1e-5)."""
        t0 = time.perf_counter()
        rng = np.random.default_rng(1234)
        eps, dt = 1e-6, 0.005
        worst = 0.0
        for _ in range(100):
            s = FilterState(
                R_i=geometry.exp_so3(rng.normal(0, 1.0, 3)),
                v_i=rng.normal(0, 1.5, 3),
                p_i=rng.normal(0, 5.0, 3),
                b_w=rng.normal(0, 1e-2, 3),
                b_a=rng.normal(0, 0.1, 3),
                R_bi=geometry.exp_so3(rng.normal(0, 0.5, 3)),
            )
            imu = ImuSample(0, rng.normal(0, 1.0, 3), rng.normal(0, 1.0, 3))
            F, G = transition_jacobians(s, imu, dt)
            base = propagate(s, imu, dt)
            F_fd = np.empty_like(F)
            for j in range(18):
                e = np.zeros(18)
                e[j] = eps
                plus = propagate(retract(s, e), imu, dt)
                minus = propagate(retract(s, -e), imu, dt)
                F_fd[:, j] = (state_difference(plus, base) - state_difference(minus, base)) / (2 * eps)
            G_fd = np.empty_like(G)
            for j in range(15):
                w = np.zeros(15)
                w[j] = eps
                plus = propagate_noisy(s, imu, dt, w)
                minus = propagate_noisy(s, imu, dt, -w)
                G_fd[:, j] = (state_difference(plus, base) - state_difference(minus, base)) / (2 * eps)
            H = observation_matrix(s)
            H_fd = np.empty_like(H)
            for j in range(18):
                e = np.zeros(18)
                e[j] = eps
                H_fd[:, j] = (
                    predict_observation(retract(s, e)) - predict_observation(retract(s, -e))
                ) / (2 * eps)
            worst = max(
                worst,
                np.abs(F - F_fd).max() / np.abs(F_fd).max(),
                np.abs(G - G_fd).max() / np.abs(G_fd).max(),
                np.abs(H - H_fd).max() / np.abs(H_fd).max(),
            )
        elapsed = time.perf_counter() - t0
        assert worst < 1e-5
        assert elapsed < 10.0
        report("jacobian-gate", elapsed, 10, f"max rel err {worst:.2e}")

    def test_integration_order_gate(self):
        """Zero-noise round trip at 200 vs 400 Hz: position error ratio in
        [1.7, 2.3] over a 60 s walk with two turns."""
        t0 = time.perf_counter()

        def round_trip_error(rate):
            spec = TrajectorySpec(
                segments=[
                    Segment(20.0, 1.2, 0.0),
                    Segment(5.0, 1.0, np.pi / 10),
                    Segment(15.0, 1.2, 0.0),
                    Segment(5.0, 1.0, -np.pi / 10),
                    Segment(15.0, 1.2, 0.0),
                ],
                rate_hz=rate,
            )
            gt = generate_trajectory(spec)
            imu = synthesize_imu(gt, ImuNoiseSpec(), seed=0)
            cfg = FilterConfig(updates_enabled=False, sample_rate_hz=rate)
            run = run_sequence(imu, cfg, None, init_pose=gt.sample(0), v0=gt.vel[0])
            pos = np.array([s.p_i for s, _ in run])
            return np.max(np.linalg.norm(pos - gt.pos, axis=1))

        ratio = round_trip_error(200.0) / round_trip_error(400.0)
        elapsed = time.perf_counter() - t0
        assert 1.7 <= ratio <= 2.3
        assert elapsed < 5.0
        report("integration-order-gate", elapsed, 5, f"ratio {ratio:.3f}")

    def test_drift_law(self):
        """Double integration of a constant 0.1 m/s^2 bias at rest matches
        bias*t^2/2 within 1% at t = 10 s."""
        t0 = time.perf_counter()
        rate, sigma, t_end = 200.0, 0.1, 10.0
        n = int(rate * t_end) + 1
        t_ns = (np.arange(n) * round(1e9 / rate)).astype(np.int64)
        imu = ImuSequence(t_ns, np.zeros((n, 3)), np.tile([sigma, 0.0, 0.0], (n, 1)))
        pose = GroundTruthSample(0, np.zeros(3), np.eye(3), np.zeros(3))
        traj = ndi_baseline(imu, pose, np.zeros(3))
        expected = sigma * t_end**2 / 2.0
        rel = abs(traj.pos[-1, 0] - expected) / expected
        elapsed = time.perf_counter() - t0
        assert rel < 0.01
        assert elapsed < 1.0
        report("drift-law", elapsed, 1, f"rel err {rel:.2e}")

    def test_end_to_end_filtering(self):
        """120 s noisy walk: filter ATE < 2 m and at least 10x better than
        naive double integration."""
        t0 = time.perf_counter()
        gt = generate_trajectory(walk_120s())
        imu = synthesize_imu(gt, reference_noise(), seed=0)
        gtraj = Trajectory(t_ns=gt.t_ns, pos=gt.pos)
        run = run_sequence(imu, FilterConfig(), ConstantNoiseAdapter(),
                           init_pose=gt.sample(0), v0=gt.vel[0])
        ate_iekf = ate(trajectory_from_states(gt.t_ns, run), gtraj)
        ate_ndi = ate(ndi_baseline(imu, gt.sample(0), gt.vel[0]), gtraj)
        elapsed = time.perf_counter() - t0
        assert ate_iekf < 2.0
        assert ate_ndi >= 10.0 * ate_iekf
        assert elapsed < 30.0
        report("end-to-end-filtering", elapsed, 30,
               f"ATE {ate_iekf:.3f} m vs NDI {ate_ndi:.1f} m ({ate_ndi/ate_iekf:.1f}x)")

    def test_pseudo_measurement_behavior(self):
        """Dropping the forward observation at least triples the
        forward-velocity RMS error."""
        t0 = time.perf_counter()
        gt = generate_trajectory(TrajectorySpec(segments=[Segment(60.0, 1.2, 0.0)]))
        noise = ImuNoiseSpec(gyro_white_std=1.5e-3, accel_white_std=2e-3,
                             accel_bias0=[0.05, 0.0, 0.0])
        imu = synthesize_imu(gt, noise, seed=2)
        speed_gt = np.linalg.norm(gt.vel, axis=1)

        def forward_rms(cfg):
            run = run_sequence(imu, cfg, ConstantNoiseAdapter(),
                               init_pose=gt.sample(0), v0=gt.vel[0])
            fwd = np.array([predict_observation(s)[0] for s, _ in run])
            return float(np.sqrt(np.mean((fwd - speed_gt) ** 2)))

        rms_on = forward_rms(FilterConfig())
        rms_off = forward_rms(FilterConfig(observe_forward=False))
        elapsed = time.perf_counter() - t0
        assert rms_off >= 3.0 * rms_on
        assert elapsed < 30.0
        report("pseudo-measurement-behavior", elapsed, 30,
               f"forward RMS {rms_on:.3f} -> {rms_off:.3f} m/s ({rms_off/max(rms_on,1e-12):.1f}x)")

    def test_covariance_health(self):
        """12,000 randomized steps keep P symmetric PSD and the rotations
        within 1e-6 of orthonormal."""
        t0 = time.perf_counter()
        rng = np.random.default_rng(77)
        n = 12_000
        t_ns = (np.arange(n) * 5_000_000).astype(np.int64)
        imu = ImuSequence(t_ns, rng.normal(0, 0.5, (n, 3)), rng.normal(0, 1.0, (n, 3)))
        pose = GroundTruthSample(0, np.zeros(3), np.eye(3), np.zeros(3))
        run = run_sequence(imu, FilterConfig(), ConstantNoiseAdapter(),
                           init_pose=pose, v0=np.array([1.0, 0.2, 0.0]))
        assert len(run) == n
        worst_eig, worst_sym, worst_rot = 0.0, 0.0, 0.0
        for s, P in run[::50]:
            worst_sym = max(worst_sym, np.abs(P - P.T).max())
            worst_eig = min(worst_eig, np.linalg.eigvalsh(P).min())
            worst_rot = max(
                worst_rot,
                np.linalg.norm(s.R_i.T @ s.R_i - np.eye(3)),
                np.linalg.norm(s.R_bi.T @ s.R_bi - np.eye(3)),
            )
        elapsed = time.perf_counter() - t0
        assert worst_sym < 1e-9
        assert worst_eig >= -1e-9
        assert worst_rot < 1e-6
        assert elapsed < 10.0
        report("covariance-health", elapsed, 10,
               f"eigmin {worst_eig:.1e}, rot err {worst_rot:.1e}")

    def test_adapter_parity(self):
        """Learned inference reproduces the shipped reference forward pass to
        1e-6, and zero scores give exactly the baseline covariance."""
        t0 = time.perf_counter()
        N0 = measurement_noise([0.0, 0.0, 0.0], (3.0, 2.0, 0.2))
        assert np.array_equal(N0, np.diag([3.0, 2.0, 0.2]))

        weights = load_weights(FIXTURE_DIR / "weights.json")
        data = np.loadtxt(FIXTURE_DIR / "parity_window.csv", delimiter=",", skiprows=1)
        expected = np.loadtxt(FIXTURE_DIR / "parity_z.csv", delimiter=",", skiprows=1)
        buf = WindowBuffer(weights.window)
        for row in data:
            buf.push(row[:3], row[3:])
        z = infer_z(buf, weights)
        err = np.abs(z - expected).max()
        # the full adapter path produces the matching covariance
        adapter = LearnedNoiseAdapter(weights)
        for row in data:
            N = adapter.covariance(ImuSample(0, row[:3], row[3:]))
        np.testing.assert_allclose(N, measurement_noise(z, weights.sigma0), atol=1e-12)
        elapsed = time.perf_counter() - t0
        assert err < 1e-6
        assert elapsed < 1.0
        report("adapter-parity", elapsed, 1, f"max |dz| {err:.2e}")

    def test_metrics_unit_suite(self):
        """Closed-form metric checks: offset ATE and linear-ramp RTE."""
        t0 = time.perf_counter()
        rate = 200.0
        n = int(rate * 60)
        t_ns = (np.arange(n) * round(1e9 / rate)).astype(np.int64)
        line = np.column_stack([1.2 * np.arange(n) / rate, np.zeros(n), np.zeros(n)])
        gt = Trajectory(t_ns=t_ns, pos=line)

        offset = Trajectory(t_ns=t_ns, pos=line + np.array([3.0, 4.0, 0.0]))
        assert abs(ate(offset, gt) - 5.0) < 1e-9

        drift = 0.01
        ramp = drift * np.arange(n) / rate
        est = Trajectory(t_ns=t_ns, pos=line + np.column_stack([ramp, np.zeros(n), np.zeros(n)]))
        value = rte(est, gt, 60.0)
        assert abs(value - np.sqrt(np.mean(ramp**2))) < 1e-9
        assert abs(value - 0.346) < 1e-3
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0
        report("metrics-unit-suite", elapsed, 1, f"ramp RTE {value:.4f} m")

    def test_ridi_ingestion_optional(self):
        """With a real recorded sequence available, the filter's windowed
        error stays below 1.5 m; skipped when the dataset is absent."""
        root = os.environ.get("PDRKIT_RIDI_DIR")
        if not root:
            pytest.skip("set PDRKIT_RIDI_DIR to a directory with RIDI-format CSVs")
        files = sorted(Path(root).glob("*.csv"))
        if not files:
            pytest.skip(f"no CSV files under {root}")
        t0 = time.perf_counter()
        imu, poses = dataio.load_sequence(files[0], fmt="ridi")
        seq = dataio.synchronize(imu, poses)
        run = run_sequence(seq, FilterConfig(), ConstantNoiseAdapter())
        est = trajectory_from_states(seq.t_ns, run)
        gtraj = Trajectory(t_ns=seq.t_ns, pos=seq.pos)
        value = rte(est, gtraj, 60.0)
        elapsed = time.perf_counter() - t0
        assert value < 1.5
        report("ridi-ingestion", elapsed, 60, f"RTE {value:.3f} m")
