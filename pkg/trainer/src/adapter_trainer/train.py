"""Training loop: body-frame velocity regression through the filter.

Each optimizer step runs the mirrored filter over fixed-length chunks of the
training sequences (batched in lockstep), with the network supplying the
per-frame measurement covariance, and minimizes the mean squared error
between the filter's body-frame velocity and the ground-truth labels.
Gradients are truncated at chunk boundaries: the chunk's entry state is
treated as a constant.

Adam with plateau decay of the learning rate down to a floor; dropout is
active on the convolution outputs during training only.  Runs are
deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass

import numpy as np
import torch

from .data import load_directory, normalization_stats
from .export import save_parity_fixture, save_weights
from .mirror import MirrorConfig, init_state, run_chunk
from .network import WINDOW, NoiseAdapterNet, sliding_windows


@dataclass
class TrainerConfig:
    lr: float = 1e-3
    min_lr: float = 1e-5
    dropout_keep: float = 0.5
    epochs: int = 10
    chunk_len: int = 2000
    seed: int = 0
    detach_gain: bool = False
    sigma0: tuple = (3.0, 2.0, 0.2)

    def __post_init__(self):
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout keep probability must be in (0, 1]")
        if self.min_lr > self.lr:
            raise ValueError("learning-rate floor above the initial rate")


class TrainingDiverged(RuntimeError):
    pass


def batch_sequences(seqs, chunk_len):
    """Stack sequences into lockstep chunks.

    All sequences are cut to the shortest length, then split into
    consecutive chunks of ``chunk_len`` frames.  Returns per-chunk tensors
    plus the per-sequence initial conditions.
    """
    t_min = min(len(s) for s in seqs)
    n_chunks = max(1, t_min // chunk_len)
    t_used = n_chunks * chunk_len
    gyro = torch.stack([s.gyro[:t_used] for s in seqs])
    accel = torch.stack([s.accel[:t_used] for s in seqs])
    labels = torch.stack([s.labels[:t_used] for s in seqs])
    windows = torch.stack(
        [sliding_windows(torch.cat([s.gyro[:t_used], s.accel[:t_used]], dim=1)) for s in seqs]
    )  # (B, T, 6, W)
    R0 = torch.stack([s.rot0 for s in seqs])
    p0 = torch.stack([s.pos[0] for s in seqs])
    v0 = torch.stack([s.vel_world[0] for s in seqs])
    dt = seqs[0].dt
    return {
        "gyro": gyro, "accel": accel, "labels": labels, "windows": windows,
        "R0": R0, "p0": p0, "v0": v0, "dt": dt,
        "n_chunks": n_chunks, "chunk_len": chunk_len,
    }


def epoch_pass(net, batch, mirror_cfg, sigma0, optimizer=None):
    """One pass over all chunks; returns the mean per-frame loss.

    With an optimizer, backpropagates and steps once per chunk; without,
    runs in eval mode (dropout off) for a pure evaluation pass.
    """
    training = optimizer is not None
    net.train(training)
    dt = batch["dt"]
    B, T = batch["gyro"].shape[0], batch["n_chunks"] * batch["chunk_len"]
    sigma0_t = torch.tensor(sigma0, dtype=torch.float64)
    state = init_state(batch["R0"], batch["p0"], batch["v0"], mirror_cfg)
    total, frames = 0.0, 0
    for c in range(batch["n_chunks"]):
        lo, hi = c * batch["chunk_len"], (c + 1) * batch["chunk_len"]
        windows = batch["windows"][:, lo:hi]  # (B, T_c, 6, W)
        z = net(windows.reshape(-1, 6, WINDOW)).reshape(B, hi - lo, 3)
        n_diag = sigma0_t * torch.pow(10.0, z)
        vb, state = run_chunk(
            state, batch["gyro"][:, lo:hi], batch["accel"][:, lo:hi],
            n_diag, lo * dt, dt, batch["v0"], mirror_cfg,
        )
        loss = ((vb - batch["labels"][:, lo:hi]) ** 2).sum(dim=2).mean()
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss in chunk {c} (frames {lo}..{hi})")
        if training:
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        state = state.detached()  # truncate gradients at the chunk boundary
        total += float(loss.detach()) * (hi - lo)
        frames += hi - lo
    return total / frames


def train(seqs, cfg: TrainerConfig, out_path=None, log=print):
    """Fit the adapter on aligned training sequences; returns (net, history)."""
    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed)

    net = NoiseAdapterNet(dropout_p=1.0 - cfg.dropout_keep)
    mean, std = normalization_stats(seqs)
    net.set_normalization(mean, std)

    mirror_cfg = MirrorConfig(sigma0=cfg.sigma0, detach_gain=cfg.detach_gain)
    batch = batch_sequences(seqs, cfg.chunk_len)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=0.5, patience=2, min_lr=cfg.min_lr
    )

    history = []
    for epoch in range(cfg.epochs):
        loss = epoch_pass(net, batch, mirror_cfg, cfg.sigma0, optimizer)
        scheduler.step(loss)
        history.append(loss)
        lr_now = optimizer.param_groups[0]["lr"]
        log(f"epoch {epoch + 1:3d}/{cfg.epochs}  loss {loss:.6f}  lr {lr_now:.2e}")

    if out_path is not None:
        save_weights(out_path, net, cfg.sigma0)
        parity_in = torch.cat([batch["gyro"][0, :WINDOW], batch["accel"][0, :WINDOW]], dim=1)
        save_parity_fixture(out_path, net, parity_in)
    return net, history


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pdr-train-adapter",
        description="Train the measurement-noise adapter on aligned walking sequences.",
    )
    parser.add_argument("--data", required=True, help="directory of aligned CSVs")
    parser.add_argument("--out", required=True, help="weight-file path (JSON)")
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--chunk", type=int, default=2000)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--min-lr", type=float, default=1e-5)
    parser.add_argument("--dropout-keep", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--detach-gain", action="store_true",
                        help="treat the Kalman gain as a constant during backprop")
    args = parser.parse_args(argv)

    cfg = TrainerConfig(
        lr=args.lr, min_lr=args.min_lr, dropout_keep=args.dropout_keep,
        epochs=args.epochs, chunk_len=args.chunk, seed=args.seed,
        detach_gain=args.detach_gain,
    )
    try:
        seqs = load_directory(args.data)
        _, history = train(seqs, cfg, out_path=args.out)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 5
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if len(history) >= 2 and history[-1] > history[0] * 2 and not math.isnan(history[-1]):
        print("warning: loss increased over training", file=sys.stderr)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
