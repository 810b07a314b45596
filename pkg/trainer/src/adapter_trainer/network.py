"""The adapter network: two dilated 1-D convolutions and a small head.

Input is a window of 23 raw IMU frames (6 channels: gyro xyz, accel xyz);
the two valid convolutions (kernel 6 dilation 2, then kernel 5 dilation 3)
collapse the window to a single feature frame, and the head maps it to three
scores squashed into [-3, 3].  The runtime turns the scores into a diagonal
covariance diag(sigma0) * 10**z.

Dropout sits after each convolution and is active only in training mode.
"""

from __future__ import annotations

import torch
from torch import nn

WINDOW = 23
N_CHANNELS = 6
Z_SCALE = 3.0


class NoiseAdapterNet(nn.Module):
    def __init__(self, dropout_p: float = 0.5):
        super().__init__()
        self.conv1 = nn.Conv1d(6, 32, kernel_size=6, dilation=2)
        self.conv2 = nn.Conv1d(32, 32, kernel_size=5, dilation=3)
        self.fc = nn.Linear(32, 3)
        self.drop = nn.Dropout(p=dropout_p)
        self.register_buffer("norm_mean", torch.zeros(6, dtype=torch.float64))
        self.register_buffer("norm_std", torch.ones(6, dtype=torch.float64))
        self.double()
        # start at the constant baseline: zero head means z = 0 everywhere
        nn.init.zeros_(self.fc.weight)
        nn.init.zeros_(self.fc.bias)

    def set_normalization(self, mean, std):
        self.norm_mean.copy_(torch.as_tensor(mean, dtype=torch.float64))
        self.norm_std.copy_(torch.as_tensor(std, dtype=torch.float64))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (batch, 6, W) raw IMU windows -> (batch, 3) scores in [-3, 3]."""
        x = (x - self.norm_mean[:, None]) / self.norm_std[:, None]
        h = self.drop(torch.relu(self.conv1(x)))
        h = self.drop(torch.relu(self.conv2(h)))
        return Z_SCALE * torch.tanh(self.fc(h[:, :, -1]))


def sliding_windows(channels: torch.Tensor, window: int = WINDOW) -> torch.Tensor:
    """Per-frame input windows over a raw stream.

    channels: (T, 6).  Frame k gets the window of samples (k-W+1 .. k); the
    start of the stream is padded by replicating the first sample, matching
    the runtime's pre-fill policy.  Returns (T, 6, W).
    """
    first = channels[0:1].expand(window - 1, -1)
    padded = torch.cat([first, channels], dim=0)  # (T + W - 1, 6)
    # unfold leaves the window as the trailing dim: (T, 6, W)
    return padded.unfold(0, window, 1)
