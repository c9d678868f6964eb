"""Scalar training objectives and the finite-difference gradient checker.

The depth loss is the shift/scale-invariant log loss

    L(y, y*) = (1/n) sum_i d_i^2 - (lambda_si / n^2) (sum_i d_i)^2,
    d_i = log(y_i) - log(y_i*).

``lambda_si=0.5`` reproduces the published coefficient 1/(2 n^2); at
``lambda_si=1`` the expression equals the variance of d and is exactly
invariant under rescaling either argument by a positive constant.

All functions accept torch tensors (gradients flow through), numpy
arrays, or the matching domain types.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .data import DepthMap, TextMask
from .errors import ConfigError, DomainError, NumericalError, ShapeError

# Discriminator outputs are sigmoid-clamped into this interval before
# logs, so the adversarial loss can never hit log(0).
PROB_CLAMP = 1e-7

GAN_MODES = ("minimax", "nonsaturating")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined objective alpha_adv * L_adv + alpha_depth * L_depth."""

    alpha_adv: float = 0.01
    alpha_depth: float = 1.0
    lambda_si: float = 0.5

    def __post_init__(self):
        if self.alpha_adv < 0 or self.alpha_depth < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.alpha_adv == 0 and self.alpha_depth == 0:
            raise ConfigError("alpha_adv and alpha_depth cannot both be zero")
        if not (0.0 <= self.lambda_si <= 1.0):
            raise ConfigError("lambda_si must lie in [0, 1]")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    if isinstance(x, DepthMap):
        return torch.from_numpy(np.asarray(x.values))
    if isinstance(x, TextMask):
        return torch.from_numpy(x.values.astype(np.float64))
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def depth_loss(pred, target, lambda_si: float = 0.5) -> torch.Tensor:
    """Shift/scale-invariant log loss between positive depth maps."""
    p, t = _as_tensor(pred), _as_tensor(target)
    if p.shape != t.shape:
        raise ShapeError(f"shape mismatch {tuple(p.shape)} vs {tuple(t.shape)}")
    if p.detach().min() <= 0 or t.detach().min() <= 0:
        raise DomainError("depth_loss requires strictly positive values")
    d = torch.log(p) - torch.log(t)
    n = d.numel()
    return d.square().sum() / n - lambda_si * d.sum().square() / (n * n)


def masked_l1_loss(pred, target, mask) -> torch.Tensor:
    """Mean absolute difference outside the text mask.

    Averaged over all n pixels: (1/n) sum_i (1 - M_i) |pred_i - target_i|;
    target values under the mask cannot influence the result.
    """
    p, t, m = _as_tensor(pred), _as_tensor(target), _as_tensor(mask)
    if p.shape != t.shape or p.shape != m.shape:
        raise ShapeError(
            f"shape mismatch: pred {tuple(p.shape)}, target {tuple(t.shape)}, "
            f"mask {tuple(m.shape)}"
        )
    return ((1.0 - m) * (p - t).abs()).sum() / p.numel()


def adversarial_feature_loss(d_out_translated, d_out_real) -> torch.Tensor:
    """Feature-GAN value: E[log(1 - D(f_translated))] + E[log D(f_real)].

    The discriminator maximizes this; it is always <= 0.
    """
    pt, pr = _as_tensor(d_out_translated), _as_tensor(d_out_real)
    for name, v in (("translated", pt), ("real", pr)):
        dv = v.detach()
        if dv.numel() == 0:
            raise DomainError(f"empty {name} probability grid")
        if dv.min() < 0.0 or dv.max() > 1.0:
            raise DomainError(f"{name} probabilities must lie in [0, 1]")
    pt = pt.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    pr = pr.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    return torch.log1p(-pt).mean() + torch.log(pr).mean()


def generator_adversarial_loss(d_out_translated, mode: str = "minimax") -> torch.Tensor:
    """Encoder-side objective to minimize, per the configured GAN mode."""
    if mode not in GAN_MODES:
        raise ConfigError(f"gan_mode must be one of {GAN_MODES}, got {mode!r}")
    pt = _as_tensor(d_out_translated)
    dv = pt.detach()
    if dv.min() < 0.0 or dv.max() > 1.0:
        raise DomainError("probabilities must lie in [0, 1]")
    pt = pt.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    if mode == "minimax":
        return torch.log1p(-pt).mean()
    return -torch.log(pt).mean()


def total_objective(l_adv, l_depth, weights: LossWeights) -> torch.Tensor:
    """Combined objective alpha_adv * l_adv + alpha_depth * l_depth."""
    return weights.alpha_adv * _as_tensor(l_adv) + weights.alpha_depth * _as_tensor(l_depth)


def gradcheck(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    step: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` is a zero-argument callable that recomputes the scalar
    loss from ``params`` (double-precision leaf tensors). Returns the
    maximum over checked entries of

        |g_an - g_fd| / max(|g_an|, |g_fd|, 1e-8).

    ``max_entries`` bounds the number of entries checked per tensor
    (a seeded random subset); None checks everything.
    """
    params = list(params)
    for p in params:
        if not p.requires_grad:
            raise ConfigError("all parameters must require grad")
        if p.dtype != torch.float64:
            raise ConfigError("gradcheck requires double-precision parameters")
    loss = loss_fn()
    if not torch.isfinite(loss.detach()):
        raise NumericalError(f"loss is non-finite: {loss.item()}")
    if loss.requires_grad:
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        analytic = [
            g if g is not None else torch.zeros_like(p)
            for g, p in zip(grads, params)
        ]
    else:
        analytic = [torch.zeros_like(p) for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g_an in zip(params, analytic):
        flat = p.data.view(-1)
        n = flat.numel()
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idx = np.arange(n)
        g_an_flat = g_an.reshape(-1)
        for i in idx:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + step
            plus = float(loss_fn().detach())
            with torch.no_grad():
                flat[i] = orig - step
            minus = float(loss_fn().detach())
            with torch.no_grad():
                flat[i] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericalError("perturbed loss is non-finite")
            g_fd = (plus - minus) / (2.0 * step)
            g = float(g_an_flat[i])
            err = abs(g - g_fd) / max(abs(g), abs(g_fd), 1e-8)
            worst = max(worst, err)
    return worst
