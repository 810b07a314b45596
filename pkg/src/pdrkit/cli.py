"""Command-line entry point: simulate, align, run, eval.

Exit codes: 0 success, 2 usage or input problem, 3 weight-file problem,
4 data/timebase mismatch, 5 numeric failure inside the filter.

Filter constants can be overridden with an INI config file; every default
matches the reference walking setup (see README for the key list).
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import adapter as adapter_mod
from . import dataio, evaluate, simulate
from .filter import FilterConfig, FilterError, predict_observation, run_sequence

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_WEIGHTS = 3
EXIT_MISMATCH = 4
EXIT_NUMERIC = 5

_CONFIG_KEYS = {
    "filter": {
        "sample_rate_hz": "sample_rate_hz",
        "window_s": "window_s",
        "min_window_s": "min_window_s",
        "speed_clamp_mps": "speed_clamp_mps",
        "observe_forward": "observe_forward",
        "reproject_every": "reproject_every",
    },
    "initial_covariance": {
        "orientation": "orientation_var0",
        "velocity": "velocity_var0",
        "position": "position_var0",
        "gyro_bias": "gyro_bias_var0",
        "accel_bias": "accel_bias_var0",
        "misalignment": "misalignment_var0",
    },
    "process_noise": {
        "gyro_white": "gyro_white_var",
        "accel_white": "accel_white_var",
        "gyro_bias_walk": "gyro_walk_var",
        "accel_bias_walk": "accel_walk_var",
        "misalignment_walk": "misalignment_walk_var",
    },
}


def load_config(path=None) -> FilterConfig:
    """FilterConfig from an INI file; missing keys keep their defaults."""
    cfg = FilterConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    overrides = {}
    for section, keys in _CONFIG_KEYS.items():
        if not parser.has_section(section):
            continue
        for ini_key, field_name in keys.items():
            if parser.has_option(section, ini_key):
                if field_name in ("observe_forward",):
                    overrides[field_name] = parser.getboolean(section, ini_key)
                elif field_name in ("reproject_every",):
                    overrides[field_name] = parser.getint(section, ini_key)
                else:
                    overrides[field_name] = parser.getfloat(section, ini_key)
    if parser.has_section("measurement"):
        sigma = list(FilterConfig().sigma0)
        for i, key in enumerate(("forward_var", "lateral_var", "vertical_var")):
            if parser.has_option("measurement", key):
                sigma[i] = parser.getfloat("measurement", key)
        overrides["sigma0"] = tuple(sigma)
    return replace(cfg, **overrides)


def _parse_vector(text):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated numbers, got {text!r}")
    return np.array([float(p) for p in parts])


def _make_adapter(spec: str, cfg: FilterConfig):
    if spec == "constant":
        return adapter_mod.ConstantNoiseAdapter(cfg.sigma0)
    weights = adapter_mod.load_weights(spec)
    return adapter_mod.LearnedNoiseAdapter(weights)


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        doc = json.loads(Path(args.spec).read_text())
        spec = simulate.TrajectorySpec.from_dict(doc.get("trajectory", doc))
        noise = simulate.ImuNoiseSpec.from_dict(doc.get("noise", {}))
    except (OSError, json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
        print(f"error: bad simulation spec: {exc}", file=sys.stderr)
        return EXIT_INPUT

    gt = simulate.generate_trajectory(spec)
    imu = simulate.synthesize_imu(gt, noise, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_imu_csv(out / "imu.csv", imu)
    dataio.write_pose_csv(out / "pose.csv", gt.t_ns, gt.pos, gt.rot)
    meta = {
        "seed": args.seed,
        "rate_hz": spec.rate_hz,
        "n_samples": len(gt),
        "spec_file": str(args.spec),
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'imu.csv'}, {out / 'pose.csv'}, {out / 'metadata.json'}")
    return EXIT_OK


def cmd_align(args) -> int:
    try:
        imu, poses = dataio.load_sequence(args.imu, args.pose, fmt=args.format)
        seq = dataio.synchronize(
            imu, poses, meta={"imu_source": str(args.imu), "pose_source": str(args.pose or args.imu)}
        )
    except (OSError, dataio.DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    dataio.write_aligned_csv(args.out, seq)
    print(f"wrote {args.out} ({len(seq)} frames at {seq.meta['rate_hz']:.1f} Hz)")
    return EXIT_OK


def _load_run_input(args) -> dataio.AlignedSequence:
    if args.aligned:
        return dataio.load_aligned_csv(args.aligned)
    if not args.imu or not args.pose:
        raise dataio.DataFormatError("run needs either --aligned or both --imu and --pose")
    imu, poses = dataio.load_sequence(args.imu, args.pose, fmt=args.format)
    return dataio.synchronize(imu, poses)


def _write_states_csv(path, t_ns, run):
    """Full state dump (diagnostics and cross-tool parity checks)."""
    header = (
        "t_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz,"
        "bwx,bwy,bwz,bax,bay,baz,qbw,qbx,qby,qbz,vbx,vby,vbz"
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(header + "\n")
        for t, (s, _) in zip(t_ns, run):
            q = dataio.matrix_to_quat(s.R_i)
            qb = dataio.matrix_to_quat(s.R_bi)
            vb = predict_observation(s)
            vals = [str(int(t))]
            for chunk in (s.p_i, q, s.v_i, s.b_w, s.b_a, qb, vb):
                vals += [format(v, ".17g") for v in chunk]
            fh.write(",".join(vals) + "\n")


def cmd_run(args) -> int:
    try:
        seq = _load_run_input(args)
        v0 = _parse_vector(args.init_velocity)
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    cfg = replace(cfg, sample_rate_hz=seq.meta.get("rate_hz", 1e9 / (seq.t_ns[1] - seq.t_ns[0])))
    if args.no_forward_obs:
        cfg = replace(cfg, observe_forward=False)

    try:
        adapter = _make_adapter(args.adapter, cfg)
    except adapter_mod.WeightsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    except OSError as exc:
        print(f"error: cannot read weights: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS

    try:
        run = run_sequence(seq, cfg, adapter, v0=v0)
    except FilterError as exc:
        print(f"error: filter diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    iekf = evaluate.trajectory_from_states(seq.t_ns, run)
    inter = evaluate.inter_trajectory(run, seq.pos[0], seq.dt_s, t_ns=seq.t_ns)
    evaluate.write_trajectory_csv(out / "iekf.csv", iekf)
    evaluate.write_trajectory_csv(out / "inter.csv", inter)
    written = ["iekf.csv", "inter.csv"]
    if args.with_ndi:
        init_pose = simulate.GroundTruthSample(
            int(seq.t_ns[0]), seq.pos[0], seq.rot[0], seq.vel_world[0]
        )
        ndi = evaluate.ndi_baseline(seq.imu(), init_pose, v0)
        evaluate.write_trajectory_csv(out / "ndi.csv", ndi)
        written.append("ndi.csv")
    if args.states:
        _write_states_csv(args.states, seq.t_ns, run)
        written.append(str(args.states))
    print(f"wrote {', '.join(written)} in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        gt = evaluate.load_trajectory_csv(args.gt)
        methods = {}
        for item in args.est:
            if "=" in item:
                name, path = item.split("=", 1)
            else:
                name, path = Path(item).stem, item
            methods[name] = evaluate.load_trajectory_csv(path)
    except (OSError, dataio.DataFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    try:
        methods = {name: est.resampled(gt.t_ns) for name, est in methods.items()}
        report = evaluate.compare(methods, gt, interval_s=args.interval)
    except evaluate.TimebaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH

    print(report.format_table())
    if args.out:
        report.to_csv(args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdrkit", description="Pedestrian dead reckoning from phone IMU signals."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic walk (pose + IMU CSVs)")
    p.add_argument("--spec", required=True, help="JSON file with trajectory and noise spec")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("align", help="synchronize IMU and pose streams into an aligned CSV")
    p.add_argument("--imu", required=True)
    p.add_argument("--pose", default=None)
    p.add_argument("--format", choices=["canonical", "ridi"], default="canonical")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("run", help="run the filter over a sequence")
    p.add_argument("--aligned", default=None, help="aligned sequence CSV")
    p.add_argument("--imu", default=None)
    p.add_argument("--pose", default=None)
    p.add_argument("--format", choices=["canonical", "ridi"], default="canonical")
    p.add_argument("--init-velocity", required=True, help='initial world velocity "vx,vy,vz"')
    p.add_argument("--config", default=None, help="INI file overriding filter constants")
    p.add_argument("--adapter", default="constant", help='"constant" or a weight-file path')
    p.add_argument("--out", required=True, help="output directory for trajectory CSVs")
    p.add_argument("--states", default=None, help="optional full state-dump CSV")
    p.add_argument("--with-ndi", action="store_true", help="also write the NDI baseline")
    p.add_argument("--no-forward-obs", action="store_true", help="lateral/vertical observation only")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="ATE/RTE report for one or more trajectories")
    p.add_argument("--est", action="append", required=True, help="NAME=trajectory.csv (repeatable)")
    p.add_argument("--gt", required=True, help="ground-truth trajectory CSV")
    p.add_argument("--interval", type=float, default=evaluate.DEFAULT_RTE_INTERVAL_S)
    p.add_argument("--out", default=None, help="report CSV path")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
