"""Deterministic synthetic comics-like scenes with analytic depth.

Scenes are flat-shaded layered shapes on a dark background, optionally
carrying elliptical speech balloons filled with glyph noise. Depth
follows the layer rule: background at 1.0, the k-th foreground layer at
1.0 - 0.1 k (floored at 0.1), later layers occluding earlier ones.
Balloons are drawn on top of everything but never alter depth, which is
exactly the text-artifact situation the masking machinery deals with.

Closer layers get brighter colors, so depth is recoverable from local
appearance at toy training scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DepthMap, ImageTensor, TextMask, save_depth, save_image, save_mask
from .errors import ConfigError

LAYER_DEPTH_STEP = 0.1
MIN_LAYER_DEPTH = 0.1
MAX_LAYERS = 9

BALLOON_FILL = 0.97
BALLOON_OUTLINE = 0.05
GLYPH_SHADE = 0.08
# Total balloon area is capped at this fraction of the canvas so text
# fixtures always satisfy a mask ratio < 0.3.
BALLOON_AREA_BUDGET = 0.25


def layer_depth(k: int) -> float:
    """Depth of the k-th foreground layer (k >= 1), floored at 0.1."""
    return max(1.0 - LAYER_DEPTH_STEP * k, MIN_LAYER_DEPTH)


@dataclass(frozen=True)
class Balloon:
    center: tuple[float, float]   # (cx, cy) in pixels
    radii: tuple[float, float]    # (rx, ry)
    glyph_seed: int


@dataclass(frozen=True)
class Layer:
    shape: str                    # "rectangle" | "ellipse"
    center: tuple[float, float]
    size: tuple[float, float]     # half extents (sx, sy)
    color: tuple[float, float, float]
    balloon: Balloon | None = None


@dataclass(frozen=True)
class SceneDescriptor:
    canvas: tuple[int, int]       # (height, width)
    background: tuple[float, float, float]
    layers: tuple[Layer, ...]
    seed: int

    def to_dict(self) -> dict:
        return {
            "canvas": list(self.canvas),
            "background": list(self.background),
            "seed": self.seed,
            "layers": [
                {
                    "shape": l.shape,
                    "center": list(l.center),
                    "size": list(l.size),
                    "color": list(l.color),
                    "balloon": None
                    if l.balloon is None
                    else {
                        "center": list(l.balloon.center),
                        "radii": list(l.balloon.radii),
                        "glyph_seed": l.balloon.glyph_seed,
                    },
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneDescriptor":
        layers = tuple(
            Layer(
                shape=ld["shape"],
                center=tuple(ld["center"]),
                size=tuple(ld["size"]),
                color=tuple(ld["color"]),
                balloon=None
                if ld.get("balloon") is None
                else Balloon(
                    center=tuple(ld["balloon"]["center"]),
                    radii=tuple(ld["balloon"]["radii"]),
                    glyph_seed=int(ld["balloon"]["glyph_seed"]),
                ),
            )
            for ld in d["layers"]
        )
        return cls(
            canvas=tuple(d["canvas"]),
            background=tuple(d["background"]),
            layers=layers,
            seed=int(d["seed"]),
        )


def _shape_region(layer: Layer, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    cx, cy = layer.center
    sx, sy = layer.size
    if layer.shape == "rectangle":
        return (np.abs(xx - cx) <= sx) & (np.abs(yy - cy) <= sy)
    if layer.shape == "ellipse":
        return ((xx - cx) / sx) ** 2 + ((yy - cy) / sy) ** 2 <= 1.0
    raise ConfigError(f"unknown shape type {layer.shape!r}")


def _balloon_regions(balloon: Balloon, yy: np.ndarray, xx: np.ndarray):
    cx, cy = balloon.center
    rx, ry = balloon.radii
    rho = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
    return rho <= 1.0, rho > 0.78  # full interior, outline band

def _draw_glyphs(img: np.ndarray, interior: np.ndarray, balloon: Balloon) -> None:
    rng = np.random.default_rng(balloon.glyph_seed)
    cx, cy = balloon.center
    rx, ry = balloon.radii
    inner = ((np.arange(img.shape[1])[None, :] - cx) / (0.72 * rx)) ** 2 + (
        (np.arange(img.shape[0])[:, None] - cy) / (0.72 * ry)
    ) ** 2 <= 1.0
    ys, xs = np.nonzero(inner)
    if ys.size == 0:
        return
    y0, y1 = ys.min(), ys.max()
    for row in range(y0, y1 + 1, 3):
        cols = xs[ys == row]
        if cols.size < 3:
            continue
        x = int(cols.min())
        x_end = int(cols.max())
        while x <= x_end:
            dash = int(rng.integers(2, 5))
            gap = int(rng.integers(1, 4))
            img[row, x : min(x + dash, x_end + 1), :] = GLYPH_SHADE
            x += dash + gap


def rasterize(descriptor: SceneDescriptor) -> tuple[ImageTensor, DepthMap, TextMask]:
    """Render a descriptor into its image, analytic depth, and text mask."""
    h, w = descriptor.canvas
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:, :] = descriptor.background
    depth = np.full((h, w), 1.0)
    mask = np.zeros((h, w), dtype=np.uint8)

    for k, layer in enumerate(descriptor.layers, start=1):
        region = _shape_region(layer, yy, xx)
        img[region] = layer.color
        depth[region] = layer_depth(k)

    for layer in descriptor.layers:
        if layer.balloon is None:
            continue
        interior, outline = _balloon_regions(layer.balloon, yy, xx)
        img[interior] = BALLOON_FILL
        img[interior & outline] = BALLOON_OUTLINE
        _draw_glyphs(img, interior, layer.balloon)
        mask[interior] = 1

    image = ImageTensor(
        np.clip(img, 0.0, 1.0), meta={"descriptor": descriptor.to_dict()}
    )
    return image, DepthMap(depth), TextMask(mask)


def depth_from_descriptor(descriptor: SceneDescriptor) -> DepthMap:
    """Analytic depth of a descriptor without rendering the image."""
    h, w = descriptor.canvas
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    depth = np.full((h, w), 1.0)
    for k, layer in enumerate(descriptor.layers, start=1):
        depth[_shape_region(layer, yy, xx)] = layer_depth(k)
    return DepthMap(depth)


def generate_scene(
    seed: int,
    size: int = 64,
    n_layers: int = 3,
    balloon_prob: float = 0.6,
) -> tuple[ImageTensor, DepthMap, TextMask, SceneDescriptor]:
    """Sample and render one scene; fully determined by the arguments."""
    if n_layers > MAX_LAYERS:
        raise ConfigError(f"n_layers must be <= {MAX_LAYERS}, got {n_layers}")
    if n_layers < 0:
        raise ConfigError("n_layers must be >= 0")
    rng = np.random.default_rng(seed)
    background = tuple(np.clip(0.2 + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0))

    balloon_budget = BALLOON_AREA_BUDGET * size * size
    balloon_area = 0.0
    layers = []
    for k in range(1, n_layers + 1):
        shape = "rectangle" if rng.random() < 0.5 else "ellipse"
        sx = rng.uniform(0.09, 0.26) * size
        sy = rng.uniform(0.09, 0.26) * size
        cx = rng.uniform(sx, size - 1 - sx)
        cy = rng.uniform(sy, size - 1 - sy)
        # Brightness encodes closeness; jitter stays below half the
        # inter-layer step so the ordering remains strict.
        value = 0.3 + 0.07 * k
        color = tuple(np.clip(value + rng.uniform(-0.025, 0.025, 3), 0.0, 1.0))

        balloon = None
        if rng.random() < balloon_prob:
            rx = rng.uniform(0.10, 0.17) * size
            ry = rng.uniform(0.07, 0.12) * size
            if balloon_area + np.pi * rx * ry <= balloon_budget:
                bx = rng.uniform(rx, size - 1 - rx)
                by = rng.uniform(ry, size - 1 - ry)
                balloon = Balloon(
                    center=(float(bx), float(by)),
                    radii=(float(rx), float(ry)),
                    glyph_seed=int(rng.integers(0, 2**31 - 1)),
                )
                balloon_area += np.pi * rx * ry
        layers.append(
            Layer(
                shape=shape,
                center=(float(cx), float(cy)),
                size=(float(sx), float(sy)),
                color=tuple(float(c) for c in color),
                balloon=balloon,
            )
        )

    descriptor = SceneDescriptor(
        canvas=(size, size),
        background=tuple(float(c) for c in background),
        layers=tuple(layers),
        seed=seed,
    )
    image, depth, mask = rasterize(descriptor)
    return image, depth, mask, descriptor


def emit_corpus(
    out_dir: str | Path,
    seed: int,
    count: int,
    size: int = 64,
    layer_range: tuple[int, int] = (1, 3),
    balloon_prob: float = 0.6,
    with_depth: bool = False,
) -> list[str]:
    """Write ``count`` scenes as image + descriptor sidecar + mask files.

    Layout per scene: ``scene_###.png``, ``scene_###.json``,
    ``scene_###_mask.png``, and optionally ``scene_###_depth.pfm``.
    Returns the scene stems in order.
    """
    lo, hi = layer_range
    if not (0 <= lo <= hi <= MAX_LAYERS):
        raise ConfigError(f"invalid layer range {layer_range}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stems = []
    for i in range(count):
        scene_seed = seed + i
        n_layers = int(np.random.default_rng((seed, i, 7)).integers(lo, hi + 1))
        image, depth, mask, descriptor = generate_scene(
            scene_seed, size=size, n_layers=n_layers, balloon_prob=balloon_prob
        )
        stem = f"scene_{i:03d}"
        save_image(image, out_dir / f"{stem}.png")
        (out_dir / f"{stem}.json").write_text(
            json.dumps(descriptor.to_dict(), sort_keys=True), encoding="utf-8"
        )
        save_mask(mask, out_dir / f"{stem}_mask.png")
        if with_depth:
            save_depth(depth, out_dir / f"{stem}_depth.pfm")
        stems.append(stem)
    return stems
