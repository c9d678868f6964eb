"""Discriminator over encoder bottleneck features and the GAN alternation.

The discriminator emits per-location realness probabilities (patch
style); its objective is the feature-GAN value

    L_adv = E[log(1 - D(f_translated))] + E[log D(f_real)],

which the discriminator maximizes and the encoder plays against
through its translated-branch features. Alternation is 1:1 and each
phase touches only its own parameters.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError
from .losses import (
    PROB_CLAMP,
    adversarial_feature_loss,
    generator_adversarial_loss,
)
from .tensors import DTYPE


class FeatureDiscriminator(nn.Module):
    """Three stride-2 convolutions with leaky activations and a sigmoid head."""

    def __init__(self, in_channels: int, base_channels: int = 32):
        super().__init__()
        self.in_channels = in_channels
        b = base_channels
        self.conv1 = nn.Conv2d(in_channels, b, 3, stride=2, padding=1, dtype=DTYPE)
        self.conv2 = nn.Conv2d(b, b * 2, 3, stride=2, padding=1, dtype=DTYPE)
        self.conv3 = nn.Conv2d(b * 2, b * 4, 3, stride=2, padding=1, dtype=DTYPE)
        self.head = nn.Conv2d(b * 4, 1, 1, dtype=DTYPE)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.dim() != 4:
            raise ShapeError(f"expected (B, C, H, W) feature, got {tuple(f.shape)}")
        if f.shape[1] != self.in_channels:
            raise ShapeError(
                f"discriminator expects {self.in_channels} channels, got {f.shape[1]}"
            )
        h = F.leaky_relu(self.conv1(f), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        h = F.leaky_relu(self.conv3(h), 0.2)
        return torch.sigmoid(self.head(h)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)


def discriminate(disc: FeatureDiscriminator, f: torch.Tensor) -> torch.Tensor:
    """Per-location realness probabilities in [PROB_CLAMP, 1 - PROB_CLAMP]."""
    return disc(f)


def discriminator_step(
    disc: FeatureDiscriminator,
    disc_opt: torch.optim.Optimizer,
    f_real: torch.Tensor,
    f_translated: torch.Tensor,
) -> float:
    """One discriminator update maximizing the feature-GAN value.

    Features are detached, so no encoder parameter receives gradient.
    Returns the pre-update loss value.
    """
    d_loss = adversarial_feature_loss(
        disc(f_translated.detach()), disc(f_real.detach())
    )
    disc_opt.zero_grad()
    (-d_loss).backward()
    disc_opt.step()
    return float(d_loss.detach())


def generator_objective(
    disc: FeatureDiscriminator,
    f_translated: torch.Tensor,
    gan_mode: str = "minimax",
) -> torch.Tensor:
    """Encoder-side adversarial term with the discriminator frozen.

    Gradients flow into whatever produced ``f_translated``; discriminator
    parameters are excluded from the graph.
    """
    frozen = [p for p in disc.parameters() if p.requires_grad]
    for p in frozen:
        p.requires_grad_(False)
    try:
        return generator_adversarial_loss(disc(f_translated), gan_mode)
    finally:
        for p in frozen:
            p.requires_grad_(True)


def adversarial_step(
    disc: FeatureDiscriminator,
    disc_opt: torch.optim.Optimizer,
    encoder_opt: torch.optim.Optimizer | None,
    f_real: torch.Tensor,
    f_translated: torch.Tensor,
    gan_mode: str = "minimax",
) -> tuple[float, float]:
    """One 1:1 GAN alternation: discriminator phase then encoder phase.

    Phase 2 runs only when ``encoder_opt`` is given and ``f_translated``
    is attached to an autograd graph; otherwise the generator loss is
    evaluated without any update. Returns both losses as computed
    before their respective updates.
    """
    d_loss = discriminator_step(disc, disc_opt, f_real, f_translated)
    if encoder_opt is not None and f_translated.requires_grad:
        g_loss = generator_objective(disc, f_translated, gan_mode)
        encoder_opt.zero_grad()
        g_loss.backward()
        encoder_opt.step()
        g_value = float(g_loss.detach())
    else:
        with torch.no_grad():
            g_value = float(generator_adversarial_loss(disc(f_translated), gan_mode))
    return d_loss, g_value
