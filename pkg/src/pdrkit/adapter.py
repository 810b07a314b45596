"""Measurement-noise adapters: constant baseline and learned network.

The learned adapter is a small 1-D temporal convolutional network evaluated
on a sliding window of raw IMU samples (6 channels: gyro xyz then accel
xyz).  Its three outputs are squashed to z-scores in [-3, 3] and scale the
baseline variances by powers of ten, so the covariance can grow to 1000x or
shrink to 0.001x of the baseline:

    N = diag(sigma0) * 10**Z

Weights travel in a JSON document (see WEIGHT_FORMAT_VERSION and the README
for the exact schema); inference here is plain numpy so the runtime carries
no deep-learning dependency.  Weights are immutable after load and shareable
across threads; the window buffer is per-filter-instance.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WEIGHT_FORMAT_VERSION = 1
N_CHANNELS = 6
CONV1 = {"out": 32, "in": 6, "kernel": 6, "dilation": 2}
CONV2 = {"out": 32, "in": 32, "kernel": 5, "dilation": 3}
HEAD_OUT = 3
# (kernel-1)*dilation taps per layer; the smallest window that leaves one
# output frame after both convolutions
MIN_WINDOW = 1 + (CONV1["kernel"] - 1) * CONV1["dilation"] + (CONV2["kernel"] - 1) * CONV2["dilation"]
Z_SCALE = 3.0


class WeightsError(ValueError):
    """Weight file is unusable."""


class WeightsVersionError(WeightsError):
    """Unknown weight-file format version."""


class WeightsShapeError(WeightsError):
    """A tensor in the weight file has the wrong shape."""


class WeightsValueError(WeightsError):
    """A value in the weight file is out of range (e.g. non-positive std)."""


@dataclass(frozen=True)
class AdapterWeights:
    window: int
    norm_mean: np.ndarray  # (6,)
    norm_std: np.ndarray  # (6,)
    conv1_weight: np.ndarray  # (32, 6, 6)
    conv1_bias: np.ndarray  # (32,)
    conv2_weight: np.ndarray  # (32, 32, 5)
    conv2_bias: np.ndarray  # (32,)
    fc_weight: np.ndarray  # (3, 32)
    fc_bias: np.ndarray  # (3,)
    sigma0: np.ndarray  # (3,) baseline variances (forward, lateral, vertical)


def _tensor(doc, key, shape, subkey=None):
    node = doc.get(key)
    if subkey is not None:
        node = (node or {}).get(subkey)
        key = f"{key}.{subkey}"
    if node is None:
        raise WeightsShapeError(f"weight file is missing '{key}'")
    arr = np.asarray(node, dtype=float)
    if arr.shape != shape:
        raise WeightsShapeError(f"'{key}' has shape {arr.shape}, expected {shape}")
    return arr


def load_weights(path) -> AdapterWeights:
    """Parse and validate a weight file.

    Shape mismatches, non-positive normalization stds, and unknown format
    versions raise distinct error types so callers can report precisely.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise WeightsError(f"{path}: not valid JSON: {exc}") from None

    version = doc.get("format_version")
    if version != WEIGHT_FORMAT_VERSION:
        raise WeightsVersionError(
            f"{path}: unknown format version {version!r} (expected {WEIGHT_FORMAT_VERSION})"
        )
    if doc.get("activation") != "relu":
        raise WeightsError(f"{path}: unsupported activation {doc.get('activation')!r}")

    window = int(doc.get("window", 0))
    if window < MIN_WINDOW:
        raise WeightsShapeError(f"{path}: window {window} below minimum {MIN_WINDOW}")

    w = AdapterWeights(
        window=window,
        norm_mean=_tensor(doc, "norm_mean", (N_CHANNELS,)),
        norm_std=_tensor(doc, "norm_std", (N_CHANNELS,)),
        conv1_weight=_tensor(doc, "conv1", (CONV1["out"], CONV1["in"], CONV1["kernel"]), "weight"),
        conv1_bias=_tensor(doc, "conv1", (CONV1["out"],), "bias"),
        conv2_weight=_tensor(doc, "conv2", (CONV2["out"], CONV2["in"], CONV2["kernel"]), "weight"),
        conv2_bias=_tensor(doc, "conv2", (CONV2["out"],), "bias"),
        fc_weight=_tensor(doc, "fc", (HEAD_OUT, CONV2["out"]), "weight"),
        fc_bias=_tensor(doc, "fc", (HEAD_OUT,), "bias"),
        sigma0=_tensor(doc, "sigma0", (HEAD_OUT,)),
    )
    if np.any(w.norm_std <= 0):
        raise WeightsValueError(f"{path}: normalization std must be positive")
    if np.any(w.sigma0 <= 0):
        raise WeightsValueError(f"{path}: sigma0 variances must be positive")
    return w


class WindowBuffer:
    """Ring buffer of the last W IMU samples (6 channels each).

    The first pushed sample is replicated to pre-fill the buffer, so the
    adapter produces defined output from the first step.
    """

    def __init__(self, window: int):
        self.window = window
        self._buf = deque(maxlen=window)

    def push(self, gyro, accel):
        row = np.concatenate([gyro, accel]).astype(float)
        if not self._buf:
            for _ in range(self.window):
                self._buf.append(row)
        else:
            self._buf.append(row)

    @property
    def full(self) -> bool:
        return len(self._buf) == self.window

    def array(self) -> np.ndarray:
        """(W, 6) array, oldest sample first."""
        return np.array(self._buf)


def _conv1d(x, weight, bias, dilation):
    """Valid (no padding) dilated 1-D convolution.

    x: (C_in, T); weight: (C_out, C_in, K).  Returns (C_out, T_out) with
    T_out = T - (K-1)*dilation.
    """
    k = weight.shape[2]
    t_out = x.shape[1] - (k - 1) * dilation
    taps = np.arange(t_out)[:, None] + dilation * np.arange(k)[None, :]
    gathered = x[:, taps]  # (C_in, T_out, K)
    return np.einsum("ock,ctk->ot", weight, gathered) + bias[:, None]


def infer_z(window: WindowBuffer, weights: AdapterWeights) -> np.ndarray:
    """Forward pass: z-scores in [-3, 3] for a full window."""
    if not window.full:
        raise ValueError("window buffer is not full yet")
    x = window.array()  # (W, 6)
    if x.shape[0] != weights.window:
        raise ValueError(
            f"window length {x.shape[0]} does not match weights ({weights.window})"
        )
    x = ((x - weights.norm_mean) / weights.norm_std).T  # (6, W)
    h = np.maximum(_conv1d(x, weights.conv1_weight, weights.conv1_bias, CONV1["dilation"]), 0.0)
    h = np.maximum(_conv1d(h, weights.conv2_weight, weights.conv2_bias, CONV2["dilation"]), 0.0)
    feat = h[:, -1]  # most recent remaining frame (the only one at W=23)
    return Z_SCALE * np.tanh(weights.fc_weight @ feat + weights.fc_bias)


def measurement_noise(z, sigma0) -> np.ndarray:
    """Diagonal covariance diag(sigma0) scaled by powers of ten from z."""
    z = np.asarray(z, dtype=float)
    return np.diag(np.asarray(sigma0, dtype=float) * 10.0**z)


class ConstantNoiseAdapter:
    """Baseline adapter: the same diagonal covariance every step."""

    def __init__(self, sigma0=(3.0, 2.0, 0.2)):
        sigma0 = np.asarray(sigma0, dtype=float)
        if sigma0.shape != (3,) or np.any(sigma0 <= 0):
            raise ValueError("sigma0 must be three positive variances")
        self._N = np.diag(sigma0)

    def reset(self):
        pass

    def covariance(self, sample) -> np.ndarray:
        return self._N.copy()


class LearnedNoiseAdapter:
    """Network-backed adapter evaluated on a sliding raw-IMU window."""

    def __init__(self, weights: AdapterWeights):
        self.weights = weights
        self._window = WindowBuffer(weights.window)

    def reset(self):
        self._window = WindowBuffer(self.weights.window)

    def covariance(self, sample) -> np.ndarray:
        self._window.push(sample.gyro, sample.accel)
        z = infer_z(self._window, self.weights)
        return measurement_noise(z, self.weights.sigma0)
