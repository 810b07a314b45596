"""Weight-file and parity-fixture export.

The weight document is JSON with every number printed at 17 significant
digits, which round-trips float64 exactly; the import side anywhere can
reconstruct bit-identical parameters.  Files are written atomically
(temp file + rename).
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return format(x, ".17g")
    if isinstance(x, str):
        import json

        return json.dumps(x)
    if isinstance(x, dict):
        inner = ",".join(f"{_fmt(str(k))}:{_fmt(v)}" for k, v in x.items())
        return "{" + inner + "}"
    if isinstance(x, (list, tuple)):
        return "[" + ",".join(_fmt(v) for v in x) + "]"
    raise TypeError(f"cannot serialize {type(x)!r}")


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def weights_document(net, sigma0=(3.0, 2.0, 0.2), window=23) -> dict:
    t = lambda x: np.asarray(x.detach().cpu(), dtype=float).tolist()
    return {
        "format_version": FORMAT_VERSION,
        "activation": "relu",
        "window": window,
        "norm_mean": t(net.norm_mean),
        "norm_std": t(net.norm_std),
        "conv1": {"weight": t(net.conv1.weight), "bias": t(net.conv1.bias)},
        "conv2": {"weight": t(net.conv2.weight), "bias": t(net.conv2.bias)},
        "fc": {"weight": t(net.fc.weight), "bias": t(net.fc.bias)},
        "sigma0": [float(s) for s in sigma0],
    }


def save_weights(path, net, sigma0=(3.0, 2.0, 0.2)) -> Path:
    path = Path(path)
    _atomic_write(path, _fmt(weights_document(net, sigma0)) + "\n")
    return path


def save_parity_fixture(weights_path, net, window_input: torch.Tensor):
    """Reference forward pass for cross-implementation checks.

    Writes ``<stem>_parity_window.csv`` (the raw 23x6 input window) and
    ``<stem>_parity_z.csv`` (the expected scores) next to the weight file.
    """
    weights_path = Path(weights_path)
    stem = weights_path.with_suffix("")
    window_input = window_input.to(torch.float64)
    net.eval()
    with torch.no_grad():
        z = net(window_input.T.unsqueeze(0)).squeeze(0)

    lines = ["wx,wy,wz,ax,ay,az"]
    for row in window_input:
        lines.append(",".join(format(float(v), ".17g") for v in row))
    _atomic_write(Path(f"{stem}_parity_window.csv"), "\n".join(lines) + "\n")
    _atomic_write(
        Path(f"{stem}_parity_z.csv"),
        "z_fw,z_lat,z_up\n" + ",".join(format(float(v), ".17g") for v in z) + "\n",
    )
    return Path(f"{stem}_parity_window.csv"), Path(f"{stem}_parity_z.csv")


def load_weights_into(net, path):
    """Read a weight document back into a network (for round-trip checks)."""
    import json

    doc = json.loads(Path(path).read_text())
    if doc["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unknown format version {doc['format_version']}")
    with torch.no_grad():
        net.conv1.weight.copy_(torch.tensor(doc["conv1"]["weight"], dtype=torch.float64))
        net.conv1.bias.copy_(torch.tensor(doc["conv1"]["bias"], dtype=torch.float64))
        net.conv2.weight.copy_(torch.tensor(doc["conv2"]["weight"], dtype=torch.float64))
        net.conv2.bias.copy_(torch.tensor(doc["conv2"]["bias"], dtype=torch.float64))
        net.fc.weight.copy_(torch.tensor(doc["fc"]["weight"], dtype=torch.float64))
        net.fc.bias.copy_(torch.tensor(doc["fc"]["bias"], dtype=torch.float64))
        net.set_normalization(doc["norm_mean"], doc["norm_std"])
    return np.array(doc["sigma0"])
