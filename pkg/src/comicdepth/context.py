"""Attention building blocks for the depth network.

The pieces here are the fixed Laplacian edge operator, the
ASPP-based spatial attention branch with Laplacian edge gating, a
squeeze-excitation style channel attention branch, the Local Context
Module combining both residually, and the Global Context Module
(spatial self-attention plus channel attention at the bottleneck).

All blocks preserve the (B, C, H, W) shape of their input and run in
double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError
from .tensors import DTYPE

LAPLACIAN_KERNEL = ((0.0, 1.0, 0.0), (1.0, -4.0, 1.0), (0.0, 1.0, 0.0))

GATING_MODES = ("one_plus_abs", "raw")


def _check_feature(f: torch.Tensor) -> None:
    if f.dim() != 4:
        raise ShapeError(f"expected (B, C, H, W) feature, got shape {tuple(f.shape)}")


def laplacian_filter(f: torch.Tensor) -> torch.Tensor:
    """4-neighbor Laplacian under replicate padding, applied per channel.

    Computed as the sum of neighbor-minus-center differences, which is
    the same convolution but keeps constant inputs at exactly zero.
    Not trainable; shape preserved.
    """
    _check_feature(f)
    p = F.pad(f, (1, 1, 1, 1), mode="replicate")
    center = p[..., 1:-1, 1:-1]
    return (
        (p[..., :-2, 1:-1] - center)
        + (p[..., 2:, 1:-1] - center)
        + (p[..., 1:-1, :-2] - center)
        + (p[..., 1:-1, 2:] - center)
    )


@dataclass(frozen=True)
class AsppConfig:
    """Dilation rates and per-branch width for the ASPP stack.

    ``branch_channels=None`` derives C // 4 (min 1) at module construction.
    """

    dilation_rates: tuple[int, ...] = (1, 6, 12, 18)
    branch_channels: int | None = None

    def __post_init__(self):
        rates = tuple(int(r) for r in self.dilation_rates)
        if not rates or rates[0] != 1:
            raise ConfigError(f"first ASPP rate must be 1, got {rates}")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ConfigError(f"ASPP rates must be strictly increasing, got {rates}")
        if any(r < 1 for r in rates):
            raise ConfigError(f"ASPP rates must be positive, got {rates}")
        if self.branch_channels is not None and self.branch_channels < 1:
            raise ConfigError("branch_channels must be >= 1")
        object.__setattr__(self, "dilation_rates", rates)

    def resolve_branch_channels(self, in_channels: int) -> int:
        if self.branch_channels is not None:
            return self.branch_channels
        return max(in_channels // 4, 1)


class SpatialAttention(nn.Module):
    """ASPP spatial gating with a Laplacian edge gain.

    Parallel dilated 3x3 convolutions are concatenated and fused by a
    1x1 convolution into a single-channel sigmoid map A_s. The output is
    f * A_s * gain, where gain is 1 + |laplacian(f)| normalized per
    channel to [0, 1] (mode "one_plus_abs", the default) or the raw
    Laplacian response (mode "raw").
    """

    def __init__(
        self,
        in_channels: int,
        aspp: AsppConfig | None = None,
        gating: str = "one_plus_abs",
    ):
        super().__init__()
        if gating not in GATING_MODES:
            raise ConfigError(f"gating must be one of {GATING_MODES}, got {gating!r}")
        self.in_channels = in_channels
        self.aspp = aspp if aspp is not None else AsppConfig()
        self.gating = gating
        branch_ch = self.aspp.resolve_branch_channels(in_channels)
        self.branches = nn.ModuleList(
            nn.Conv2d(in_channels, branch_ch, 3, padding=r, dilation=r, dtype=DTYPE)
            for r in self.aspp.dilation_rates
        )
        self.fuse = nn.Conv2d(branch_ch * len(self.branches), 1, 1, dtype=DTYPE)

    def attention_map(self, f: torch.Tensor) -> torch.Tensor:
        pooled = torch.cat([branch(f) for branch in self.branches], dim=1)
        return torch.sigmoid(self.fuse(pooled))

    def edge_gain(self, f: torch.Tensor) -> torch.Tensor:
        lap = laplacian_filter(f)
        if self.gating == "raw":
            return lap
        mag = lap.abs()
        peak = mag.amax(dim=(2, 3), keepdim=True)
        scale = torch.where(peak > 0, peak, torch.ones_like(peak))
        return 1.0 + mag / scale

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        _check_feature(f)
        if f.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected {self.in_channels} channels, got {f.shape[1]}"
            )
        return f * self.attention_map(f) * self.edge_gain(f)


class ChannelAttention(nn.Module):
    """Squeeze-excitation channel gating: GAP, two FC layers, sigmoid."""

    def __init__(self, in_channels: int, reduction: int = 4):
        super().__init__()
        self.in_channels = in_channels
        hidden = max(in_channels // reduction, 1)
        self.fc1 = nn.Linear(in_channels, hidden, dtype=DTYPE)
        self.fc2 = nn.Linear(hidden, in_channels, dtype=DTYPE)

    def gate(self, f: torch.Tensor) -> torch.Tensor:
        squeezed = f.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(squeezed))))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        _check_feature(f)
        a_c = self.gate(f)
        return f * a_c[:, :, None, None]


class LocalContextModule(nn.Module):
    """Skip-connection attention: f + spatial branch + channel branch.

    Each branch contribution passes through a learnable scalar gain so
    that zeroing all parameters makes the block an exact identity.
    """

    def __init__(
        self,
        channels: int,
        aspp: AsppConfig | None = None,
        reduction: int = 4,
        gating: str = "one_plus_abs",
    ):
        super().__init__()
        self.channels = channels
        self.spatial = SpatialAttention(channels, aspp, gating)
        self.channel = ChannelAttention(channels, reduction)
        self.spatial_gain = nn.Parameter(torch.ones((), dtype=DTYPE))
        self.channel_gain = nn.Parameter(torch.ones((), dtype=DTYPE))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        _check_feature(f)
        return (
            f
            + self.spatial_gain * self.spatial(f)
            + self.channel_gain * self.channel(f)
        )


class GlobalContextModule(nn.Module):
    """Bottleneck attention over the whole scene.

    Single-head scaled dot-product self-attention across flattened
    spatial positions (1x1 query/key/value projections), added
    residually to the input, then channel attention.
    """

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        self.channels = channels
        self.query = nn.Conv2d(channels, channels, 1, dtype=DTYPE)
        self.key = nn.Conv2d(channels, channels, 1, dtype=DTYPE)
        self.value = nn.Conv2d(channels, channels, 1, dtype=DTYPE)
        self.channel = ChannelAttention(channels, reduction)

    def attention_weights(self, f: torch.Tensor) -> torch.Tensor:
        """(B, N, N) row-stochastic position attention, N = H * W."""
        q = self.query(f).flatten(2)
        k = self.key(f).flatten(2)
        logits = q.transpose(1, 2) @ k / (self.channels ** 0.5)
        return torch.softmax(logits, dim=-1)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        _check_feature(f)
        b, c, h, w = f.shape
        attn = self.attention_weights(f)
        v = self.value(f).flatten(2)
        attended = (v @ attn.transpose(1, 2)).reshape(b, c, h, w)
        return self.channel(f + attended)
