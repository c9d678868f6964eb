"""Conversions between domain types and torch tensors, plus checksums.

Everything in this package runs at double precision: the gradient
checker operates on float64, and checkpoints store raw float64 tensors.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

from .data import DepthMap, ImageTensor, TextMask
from .errors import ShapeError

DTYPE = torch.float64


def image_to_tensor(image: ImageTensor) -> torch.Tensor:
    """ImageTensor -> (1, 3, H, W) float64 tensor."""
    arr = np.array(image.pixels.transpose(2, 0, 1), copy=True)
    return torch.from_numpy(arr).unsqueeze(0).to(DTYPE)


def tensor_to_image(t: torch.Tensor) -> ImageTensor:
    """(1, 3, H, W) or (3, H, W) tensor -> ImageTensor, clipped to [0, 1]."""
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ShapeError(f"expected batch size 1, got {t.shape[0]}")
        t = t[0]
    arr = t.detach().cpu().numpy().transpose(1, 2, 0)
    return ImageTensor(np.clip(arr, 0.0, 1.0))


def depth_to_tensor(depth: DepthMap) -> torch.Tensor:
    """DepthMap -> (1, 1, H, W) float64 tensor."""
    arr = np.array(depth.values, copy=True)
    return torch.from_numpy(arr).to(DTYPE).unsqueeze(0).unsqueeze(0)


def tensor_to_depth(t: torch.Tensor) -> DepthMap:
    """(1, 1, H, W), (1, H, W) or (H, W) tensor -> DepthMap."""
    while t.dim() > 2:
        if t.shape[0] != 1:
            raise ShapeError(f"expected singleton leading dims, got {tuple(t.shape)}")
        t = t[0]
    return DepthMap(t.detach().cpu().numpy())


def mask_to_tensor(mask: TextMask) -> torch.Tensor:
    """TextMask -> (1, 1, H, W) float64 tensor with values 0/1."""
    arr = mask.values.astype(np.float64)
    return torch.from_numpy(arr).to(DTYPE).unsqueeze(0).unsqueeze(0)


def param_checksum(module: torch.nn.Module) -> str:
    """SHA-256 over all parameter bytes, in named order."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        h.update(name.encode("utf-8"))
        h.update(p.detach().cpu().numpy().astype("<f8").tobytes())
    return h.hexdigest()
