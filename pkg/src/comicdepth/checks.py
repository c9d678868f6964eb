"""Finite-difference verification suite over every trainable block.

Each entry builds a small double-precision instance, wires a scalar
probe loss over its output, and compares analytic gradients against
central differences. Tolerances: 1e-4 for individual blocks and
losses, 1e-3 for the composed depth network (whose parameters are
checked on a seeded subsample to bound runtime).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch

from .context import (
    AsppConfig,
    ChannelAttention,
    GlobalContextModule,
    LocalContextModule,
    SpatialAttention,
)
from .feature_gan import FeatureDiscriminator
from .losses import (
    adversarial_feature_loss,
    depth_loss,
    gradcheck,
    masked_l1_loss,
)
from .network import DepthNet, DepthNetConfig
from .text import TextSegmenter

BLOCK_TOL = 1e-4
NETWORK_TOL = 1e-3

# A probe of O(1) magnitude with this step keeps the cancellation noise
# of central differences (machine_eps * |loss| / step) far below the
# relative-error floor even for parameters whose true gradient is
# exactly zero (e.g. the GCM key bias, which softmax shift invariance
# cancels out).
_SUITE_STEP = 1e-4

_TEST_ASPP = AsppConfig(dilation_rates=(1, 2, 3), branch_channels=2)


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _probe(output: torch.Tensor, seed: int) -> torch.Tensor:
    """Fixed random weighting making the probe sensitive to every output."""
    g = torch.Generator().manual_seed(seed)
    w = torch.randn(output.shape, generator=g, dtype=torch.float64)
    return (output * w).mean()


def _module_check(
    name: str,
    module: torch.nn.Module,
    feature: torch.Tensor,
    tol: float = BLOCK_TOL,
    max_entries: int | None = None,
    probe: Callable[[torch.Tensor], torch.Tensor] | None = None,
) -> CheckResult:
    params = [p for p in module.parameters() if p.requires_grad]
    if probe is None:
        probe = lambda out: _probe(out, seed=99)
    err = gradcheck(
        lambda: probe(module(feature)),
        params,
        step=_SUITE_STEP,
        max_entries=max_entries,
    )
    return CheckResult(name, err, tol)


def run_gradient_checks(net_max_entries: int = 25) -> list[CheckResult]:
    torch.manual_seed(1234)
    results = []

    f4 = torch.randn(1, 4, 6, 6, dtype=torch.float64)
    results.append(
        _module_check("spatial_attention", SpatialAttention(4, _TEST_ASPP), f4)
    )
    results.append(_module_check("channel_attention", ChannelAttention(4), f4))
    results.append(
        _module_check("local_context", LocalContextModule(4, _TEST_ASPP), f4)
    )
    results.append(_module_check("global_context", GlobalContextModule(4), f4))

    torch.manual_seed(7)
    net = DepthNet(DepthNetConfig(levels=2, base_channels=4, aspp=_TEST_ASPP))
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    target = torch.exp(torch.randn(1, 1, 16, 16, dtype=torch.float64) * 0.3)
    results.append(
        CheckResult(
            "depth_net",
            gradcheck(
                lambda: depth_loss(net(x).depth, target),
                [p for p in net.parameters() if p.requires_grad],
                step=_SUITE_STEP,
                max_entries=net_max_entries,
            ),
            NETWORK_TOL,
        )
    )

    torch.manual_seed(21)
    disc = FeatureDiscriminator(4, base_channels=4)
    f_disc = torch.randn(1, 4, 8, 8, dtype=torch.float64)
    results.append(_module_check("discriminator", disc, f_disc))

    torch.manual_seed(31)
    seg = TextSegmenter(base_channels=4)
    x_seg = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    results.append(
        _module_check("segmenter", seg, x_seg, max_entries=60)
    )

    g = torch.Generator().manual_seed(55)
    pred = torch.exp(torch.randn(3, 3, generator=g, dtype=torch.float64) * 0.4)
    tgt = torch.exp(torch.randn(3, 3, generator=g, dtype=torch.float64) * 0.4)
    pred_leaf = pred.clone().requires_grad_(True)
    results.append(
        CheckResult(
            "depth_loss",
            gradcheck(lambda: depth_loss(pred_leaf, tgt), [pred_leaf]),
            BLOCK_TOL,
        )
    )

    mask = (torch.rand(3, 3, generator=g, dtype=torch.float64) < 0.4).double()
    m_leaf = pred.clone().requires_grad_(True)
    results.append(
        CheckResult(
            "masked_l1_loss",
            gradcheck(lambda: masked_l1_loss(m_leaf, tgt, mask), [m_leaf]),
            BLOCK_TOL,
        )
    )

    p_tr = (0.1 + 0.8 * torch.rand(2, 5, generator=g, dtype=torch.float64)).requires_grad_(True)
    p_re = (0.1 + 0.8 * torch.rand(2, 5, generator=g, dtype=torch.float64)).requires_grad_(True)
    results.append(
        CheckResult(
            "adversarial_feature_loss",
            gradcheck(
                lambda: adversarial_feature_loss(p_tr, p_re), [p_tr, p_re]
            ),
            BLOCK_TOL,
        )
    )
    return results
