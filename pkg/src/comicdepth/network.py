"""Encoder-decoder depth estimator with attention-augmented skips.

The encoder downsamples ``levels`` times (channel width doubling per
level), the bottleneck passes through the Global Context Module, every
skip connection passes through a Local Context Module before being
concatenated into the decoder, and the head predicts log-depth r with
depth = exp(r), making positivity structural.

Twin estimators for the real and translated branches are two module
instances over one shared parameter storage (`make_twin`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .context import AsppConfig, GlobalContextModule, LocalContextModule
from .data import DepthMap, ImageTensor
from .errors import ConfigError, NumericalError, ShapeError
from .tensors import DTYPE, image_to_tensor, tensor_to_depth


@dataclass(frozen=True)
class DepthNetConfig:
    levels: int = 4
    base_channels: int = 32
    aspp: AsppConfig = field(default_factory=AsppConfig)
    channel_reduction: int = 4
    laplacian_gating: str = "one_plus_abs"
    input_size: tuple[int, int] | None = None

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if self.input_size is not None:
            h, w = self.input_size
            if h % (1 << self.levels) or w % (1 << self.levels):
                raise ConfigError(
                    f"input_size {self.input_size} must be divisible by 2^levels"
                )

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels << self.levels

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "base_channels": self.base_channels,
            "aspp_rates": list(self.aspp.dilation_rates),
            "aspp_branch_channels": self.aspp.branch_channels,
            "channel_reduction": self.channel_reduction,
            "laplacian_gating": self.laplacian_gating,
            "input_size": list(self.input_size) if self.input_size else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DepthNetConfig":
        return cls(
            levels=int(d["levels"]),
            base_channels=int(d["base_channels"]),
            aspp=AsppConfig(
                dilation_rates=tuple(d["aspp_rates"]),
                branch_channels=d.get("aspp_branch_channels"),
            ),
            channel_reduction=int(d["channel_reduction"]),
            laplacian_gating=d["laplacian_gating"],
            input_size=tuple(d["input_size"]) if d.get("input_size") else None,
        )


@dataclass(frozen=True)
class ForwardResult:
    """Depth prediction plus the bottleneck feature fed to the feature GAN."""

    depth: torch.Tensor       # (B, 1, H, W), strictly positive
    bottleneck: torch.Tensor  # (B, C', H/2^levels, W/2^levels)


class ConvBlock(nn.Module):
    """Two 3x3 conv + norm + ELU stages."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1, dtype=DTYPE)
        self.norm1 = nn.GroupNorm(1, out_ch, dtype=DTYPE)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, dtype=DTYPE)
        self.norm2 = nn.GroupNorm(1, out_ch, dtype=DTYPE)

    def forward(self, x):
        x = F.elu(self.norm1(self.conv1(x)))
        return F.elu(self.norm2(self.conv2(x)))


def _he_normal(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class DepthNet(nn.Module):
    def __init__(self, config: DepthNetConfig = DepthNetConfig()):
        super().__init__()
        self.config = config
        b, lv = config.base_channels, config.levels

        self.stem = ConvBlock(3, b)
        downs, enc_blocks, skips_lcm = [], [], []
        ch = b
        for _ in range(lv):
            skips_lcm.append(
                LocalContextModule(
                    ch,
                    aspp=config.aspp,
                    reduction=config.channel_reduction,
                    gating=config.laplacian_gating,
                )
            )
            downs.append(nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1, dtype=DTYPE))
            enc_blocks.append(ConvBlock(ch * 2, ch * 2))
            ch *= 2
        self.downs = nn.ModuleList(downs)
        self.enc_blocks = nn.ModuleList(enc_blocks)
        self.skip_lcms = nn.ModuleList(skips_lcm)
        self.gcm = GlobalContextModule(ch, reduction=config.channel_reduction)
        dec_blocks = []
        for i in reversed(range(lv)):
            skip_ch = b << i
            dec_blocks.append(ConvBlock(skip_ch * 2 + skip_ch, skip_ch))
        self.dec_blocks = nn.ModuleList(dec_blocks)
        self.head = nn.Conv2d(b, 1, 1, dtype=DTYPE)
        self.apply(_he_normal)

    def _pad(self, x: torch.Tensor) -> tuple[torch.Tensor, int, int]:
        mult = 1 << self.config.levels
        h, w = x.shape[2], x.shape[3]
        if h < mult or w < mult:
            raise ShapeError(f"input {h}x{w} smaller than 2^levels = {mult}")
        ph = (-h) % mult
        pw = (-w) % mult
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect")
        return x, h, w

    @staticmethod
    def _finite(name: str, t: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(t.detach()).all():
            raise NumericalError(f"non-finite activation after {name}")
        return t

    def forward(self, x: torch.Tensor) -> ForwardResult:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        self._finite("input", x)
        x, h0, w0 = self._pad(x)

        h = self._finite("stem", self.stem(x))
        skips = []
        for i, (down, block) in enumerate(zip(self.downs, self.enc_blocks)):
            skips.append(h)
            h = self._finite(f"enc{i}", block(down(h)))
        bottleneck = self._finite("gcm", self.gcm(h))

        h = bottleneck
        for j, dec in enumerate(self.dec_blocks):
            i = self.config.levels - 1 - j
            up = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
            skip = self._finite(f"lcm{i}", self.skip_lcms[i](skips[i]))
            h = self._finite(f"dec{i}", dec(torch.cat([up, skip], dim=1)))

        r = self._finite("head", self.head(h))
        depth = torch.exp(r)[:, :, :h0, :w0]
        return ForwardResult(depth=depth, bottleneck=bottleneck)


def make_twin(net: DepthNet) -> DepthNet:
    """Second forward path over the same parameter storage.

    Parameter tensors are shared (aliased), so an update through either
    view is visible through both and gradients accumulate jointly;
    forward passes hold no shared state.
    """
    with torch.random.fork_rng(devices=[]):
        twin = DepthNet(net.config)
    twin_modules = dict(twin.named_modules())
    for name, param in net.named_parameters():
        mod_name, _, attr = name.rpartition(".")
        setattr(twin_modules[mod_name] if mod_name else twin, attr, param)
    for name, buf in net.named_buffers():
        mod_name, _, attr = name.rpartition(".")
        (twin_modules[mod_name] if mod_name else twin).register_buffer(attr, buf)
    return twin


def shares_parameters(a: nn.Module, b: nn.Module) -> bool:
    """True iff both modules alias exactly the same parameter tensors."""
    pa = dict(a.named_parameters())
    pb = dict(b.named_parameters())
    return pa.keys() == pb.keys() and all(pa[k] is pb[k] for k in pa)


def estimate_depth(net: DepthNet, image: ImageTensor) -> DepthMap:
    """Run the network on one image and return its depth map."""
    with torch.no_grad():
        result = net(image_to_tensor(image))
    return tensor_to_depth(result.depth)
