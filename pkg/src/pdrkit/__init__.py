"""Pedestrian dead reckoning from phone IMU signals.

Planar position, velocity, and heading estimation with an extended Kalman
filter over an 18-dimensional manifold error state, a pluggable
measurement-noise adapter (constant or learned), a walking simulator,
dataset ingestion, and ATE/RTE trajectory metrics.
"""

__version__ = "0.1.0"

from .adapter import ConstantNoiseAdapter, LearnedNoiseAdapter, load_weights
from .dataio import AlignedSequence, ImuSample, ImuSequence, PoseSequence, synchronize
from .evaluate import EvalReport, Trajectory, ate, compare, ndi_baseline, rte
from .filter import FilterConfig, FilterState, PseudoObservation, run_sequence
from .simulate import (
    ImuNoiseSpec,
    Segment,
    TrajectorySpec,
    generate_trajectory,
    synthesize_imu,
)

__all__ = [
    "AlignedSequence",
    "ConstantNoiseAdapter",
    "EvalReport",
    "FilterConfig",
    "FilterState",
    "ImuNoiseSpec",
    "ImuSample",
    "ImuSequence",
    "LearnedNoiseAdapter",
    "PoseSequence",
    "PseudoObservation",
    "Segment",
    "Trajectory",
    "TrajectorySpec",
    "ate",
    "compare",
    "generate_trajectory",
    "load_weights",
    "ndi_baseline",
    "rte",
    "run_sequence",
    "synchronize",
    "synthesize_imu",
]
