"""Text/speech-balloon handling.

A small 3-level U-Net segments balloon pixels; the compositor
re-inserts original text regions into a translated image via
(1 - M) A + M B; depth de-texting replaces masked depth pixels with the
epsilon floor; and the crop search shrinks a window one pixel per
dimension until the text area is at most 3% of the crop.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import scenes
from .data import DEPTH_EPSILON, DepthMap, ImageTensor, TextMask
from .errors import NoCleanCropError, ShapeError
from .tensors import DTYPE, image_to_tensor


class TextSegmenter(nn.Module):
    """3-level U-Net emitting per-pixel text probabilities.

    ``forward`` returns the probability map; `segment_text` applies the
    binarization threshold (strict greater-than).
    """

    def __init__(self, base_channels: int = 8, threshold: float = 0.5):
        super().__init__()
        if not (0.0 < threshold < 1.0):
            raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
        b = base_channels
        self.threshold = threshold
        self.enc1 = _block(3, b)
        self.enc2 = _block(b, b * 2)
        self.bottleneck = _block(b * 2, b * 4)
        self.dec2 = _block(b * 4 + b * 2, b * 2)
        self.dec1 = _block(b * 2 + b, b)
        self.head = nn.Conv2d(b, 1, 1, dtype=DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        e1 = self.enc1(x)
        e2 = self.enc2(F.avg_pool2d(e1, 2))
        h = self.bottleneck(F.avg_pool2d(e2, 2))
        h = _up(h)
        h = self.dec2(torch.cat([h, e2], dim=1))
        h = _up(h)
        h = self.dec1(torch.cat([h, e1], dim=1))
        return torch.sigmoid(self.head(h))


def _block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1, dtype=DTYPE),
        nn.GroupNorm(1, out_ch, dtype=DTYPE),
        nn.ELU(),
        nn.Conv2d(out_ch, out_ch, 3, padding=1, dtype=DTYPE),
        nn.GroupNorm(1, out_ch, dtype=DTYPE),
        nn.ELU(),
    )


def _up(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def segment_text(seg: TextSegmenter, image: ImageTensor) -> TextMask:
    """Predict the binary text mask for one image.

    Inputs not divisible by 4 are reflect-padded internally and the
    mask is cropped back.
    """
    x = image_to_tensor(image)
    h, w = x.shape[2], x.shape[3]
    ph, pw = (-h) % 4, (-w) % 4
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    with torch.no_grad():
        probs = seg(x)[0, 0, :h, :w]
    return TextMask((probs > seg.threshold).numpy().astype(np.uint8))


def train_segmenter(
    seg: TextSegmenter,
    fixtures: list[tuple[ImageTensor, TextMask]],
    epochs: int = 30,
    lr: float = 1e-3,
    batch_size: int = 10,
    seed: int = 0,
) -> list[float]:
    """Supervised pixelwise BCE training; returns the per-epoch losses."""
    images = torch.cat([image_to_tensor(img) for img, _ in fixtures])
    targets = torch.stack(
        [torch.from_numpy(m.values.astype(np.float64)) for _, m in fixtures]
    ).unsqueeze(1)
    opt = torch.optim.Adam(seg.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(fixtures))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            probs = seg(images[idx])
            loss = F.binary_cross_entropy(probs, targets[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(idx)
        history.append(epoch_loss / len(fixtures))
    return history


def mask_iou(pred: TextMask, target: TextMask) -> float:
    """Intersection over union of two binary masks (1 when both empty)."""
    p = pred.values.astype(bool)
    t = target.values.astype(bool)
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum()) / float(union)


def compose_text_adder_target(
    a: ImageTensor, b: ImageTensor, mask: TextMask
) -> ImageTensor:
    """Pixelwise (1 - M) A + M B: re-insert text regions B into A."""
    if a.pixels.shape != b.pixels.shape or a.pixels.shape[:2] != mask.values.shape:
        raise ShapeError(
            f"shape mismatch: A {a.pixels.shape}, B {b.pixels.shape}, "
            f"mask {mask.values.shape}"
        )
    m = mask.values.astype(np.float64)[:, :, None]
    return ImageTensor((1.0 - m) * a.pixels + m * b.pixels)


def strip_text_from_depth(depth: DepthMap, mask: TextMask) -> DepthMap:
    """Replace masked depth pixels with the epsilon floor.

    Unmasked pixels are returned bit-identical.
    """
    if depth.values.shape != mask.values.shape:
        raise ShapeError(
            f"shape mismatch: depth {depth.values.shape}, mask {mask.values.shape}"
        )
    return DepthMap(np.where(mask.values == 1, DEPTH_EPSILON, depth.values))


def crop_until_text_ratio(
    image: ImageTensor,
    mask: TextMask,
    max_ratio: float = 0.03,
    start: int = 384,
    seed: int = 0,
    min_size: int = 32,
) -> tuple[ImageTensor, tuple[int, int, int, int]]:
    """Find a square crop whose text ratio is at most ``max_ratio``.

    A seeded random placement is tried at the start size; the size then
    shrinks by one pixel per dimension, scanning placements in a seeded
    raster order, until a window satisfies the ratio. Raises
    NoCleanCropError when no window of size >= ``min_size`` qualifies.
    Returns the crop and its rectangle (x0, y0, width, height).
    """
    if image.pixels.shape[:2] != mask.values.shape:
        raise ShapeError("image and mask extents differ")
    h, w = mask.values.shape
    size = min(start, h, w)
    rng = np.random.default_rng(seed)

    # Summed-area table: window sums in O(1) per placement.
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(mask.values, axis=0), axis=1)

    def window_sum(x0: int, y0: int, s: int) -> int:
        return int(
            integral[y0 + s, x0 + s]
            - integral[y0, x0 + s]
            - integral[y0 + s, x0]
            + integral[y0, x0]
        )

    def crop_at(x0: int, y0: int, s: int):
        sub = ImageTensor(image.pixels[y0 : y0 + s, x0 : x0 + s], meta=image.meta)
        return sub, (x0, y0, s, s)

    x0 = int(rng.integers(0, w - size + 1))
    y0 = int(rng.integers(0, h - size + 1))
    if window_sum(x0, y0, size) <= max_ratio * size * size:
        return crop_at(x0, y0, size)

    while size - 1 >= min_size:
        size -= 1
        ny, nx = h - size + 1, w - size + 1
        n_placements = ny * nx
        offset = int(rng.integers(0, n_placements))
        budget = max_ratio * size * size
        for j in range(n_placements):
            p = (offset + j) % n_placements
            py, px = divmod(p, nx)
            if window_sum(px, py, size) <= budget:
                return crop_at(px, py, size)
    raise NoCleanCropError(
        f"no window of size >= {min_size} has text ratio <= {max_ratio}"
    )


def generate_text_fixtures(
    seed: int, count: int, size: int = 64
) -> list[tuple[ImageTensor, TextMask]]:
    """Deterministic balloon-bearing panels for segmenter training.

    Every fixture has a mask ratio strictly inside (0, 0.3).
    """
    fixtures = []
    for i in range(count):
        scene_seed = np.random.default_rng((seed, i)).integers(0, 2**31 - 1)
        rng = np.random.default_rng((seed, i, 1))
        n_layers = int(rng.integers(1, 4))
        for attempt in range(16):
            image, _, mask, _ = scenes.generate_scene(
                int(scene_seed) + attempt * 65537,
                size=size,
                n_layers=n_layers,
                balloon_prob=1.0,
            )
            if 0.0 < mask.ratio() < 0.3:
                break
        else:
            raise AssertionError("fixture generator failed to place a balloon")
        fixtures.append((image, mask))
    return fixtures
