"""Domain types, invariant validation, and file I/O.

Conventions fixed here and relied on everywhere else:

* images are H x W x 3 float arrays with values in [0, 1];
* depth maps are H x W float arrays, strictly positive, smaller = closer;
* text masks are H x W arrays with values in {0, 1}, 1 = text pixel;
* depth files are little-endian PFM (lossless at float32) or 16-bit
  grayscale PNG with a ``<file>.json`` sidecar recording the
  dequantization range;
* annotation files are CSV with the fixed header ``x,y,l1,l2``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DomainError,
    DuplicateCoordinate,
    InvalidLabel,
    IoError,
    ParseError,
    ShapeError,
)

# Smallest admissible depth. Log losses are taken on depth values, so zero
# depth must be impossible; clamping happens at load time and in the text
# stripping operation.
DEPTH_EPSILON = 1e-6

ANNOTATION_HEADER = ("x", "y", "l1", "l2")


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageTensor:
    """An H x W x 3 image with channel values in [0, 1].

    ``meta`` carries optional provenance (source path, scene descriptor)
    and takes no part in equality or invariants.
    """

    pixels: np.ndarray
    meta: dict[str, Any] | None = field(default=None, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"image must be HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError("image must have height >= 1 and width >= 1")
        if not np.all(np.isfinite(arr)):
            raise DomainError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("image values must lie in [0, 1]")
        object.__setattr__(self, "pixels", _readonly(arr))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def with_meta(self, **extra: Any) -> "ImageTensor":
        meta = dict(self.meta or {})
        meta.update(extra)
        return ImageTensor(self.pixels, meta=meta)


@dataclass(frozen=True)
class DepthMap:
    """An H x W relative depth map; strictly positive, smaller = closer."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"depth map must be HxW, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError("depth map must have height >= 1 and width >= 1")
        if not np.all(np.isfinite(arr)):
            raise DomainError("depth map contains non-finite values")
        if arr.min() <= 0.0:
            raise DomainError("depth values must be strictly positive")
        object.__setattr__(self, "values", _readonly(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TextMask:
    """An H x W binary map; 1 marks text / speech-balloon pixels."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise ShapeError(f"text mask must be HxW, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError("text mask must have height >= 1 and width >= 1")
        uniq = np.unique(arr)
        if not np.all(np.isin(uniq, (0, 1))):
            raise DomainError(f"text mask values must be 0 or 1, got {uniq[:8]}")
        object.__setattr__(self, "values", _readonly(arr.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def ratio(self) -> float:
        """Fraction of pixels marked as text."""
        return float(self.values.sum()) / self.values.size

    def complement(self) -> np.ndarray:
        return (1 - self.values).astype(np.uint8)


class AnnotationEntry(NamedTuple):
    x: int
    y: int
    l1: int
    l2: int

    @property
    def label(self) -> tuple[int, int]:
        """Lexicographic ordering key; lower = closer."""
        return (self.l1, self.l2)


@dataclass(frozen=True)
class OrderingAnnotation:
    """Sparse inter/intra-object depth-ordering labels for one image."""

    entries: tuple[AnnotationEntry, ...]
    image_id: str = ""

    def __post_init__(self):
        entries = tuple(AnnotationEntry(*e) for e in self.entries)
        seen: set[tuple[int, int]] = set()
        for e in entries:
            if e.l1 < 1 or e.l2 < 1:
                raise InvalidLabel(f"labels must be positive, got ({e.l1},{e.l2})")
            if (e.x, e.y) in seen:
                raise DuplicateCoordinate(f"duplicate coordinate ({e.x},{e.y})")
            seen.add((e.x, e.y))
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def validate_bounds(self, height: int, width: int) -> None:
        """Check every entry against the paired image extent."""
        for e in self.entries:
            if not (0 <= e.x < width and 0 <= e.y < height):
                raise DomainError(
                    f"annotation ({e.x},{e.y}) outside {width}x{height} image"
                )


@dataclass(frozen=True)
class MetricsReport:
    """The four standard depth metrics plus ordinal accuracy."""

    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    ordinal_accuracy: float
    n_points: int

    def __post_init__(self):
        if self.n_points >= 1:
            for name in ("abs_rel", "sq_rel", "rmse", "rmse_log"):
                v = getattr(self, name)
                if not (math.isfinite(v) and v >= 0.0):
                    raise DomainError(f"{name} must be finite and nonnegative, got {v}")
            if not (0.0 <= self.ordinal_accuracy <= 1.0):
                raise DomainError("ordinal_accuracy must lie in [0, 1]")


# ---------------------------------------------------------------------------
# Ordering annotations (CSV)
# ---------------------------------------------------------------------------

def parse_annotations(text: str, image_id: str = "") -> OrderingAnnotation:
    """Parse annotation CSV with header ``x,y,l1,l2`` into an annotation.

    Entries are preserved in file order. Raises ParseError (with line
    number), InvalidLabel, or DuplicateCoordinate on malformed input.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty annotation file", line=1) from None
    if tuple(h.strip() for h in header) != ANNOTATION_HEADER:
        raise ParseError(
            f"expected header {','.join(ANNOTATION_HEADER)!r}, got {','.join(header)!r}",
            line=1,
        )
    entries: list[AnnotationEntry] = []
    seen: set[tuple[int, int]] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", line=lineno)
        try:
            x, y, l1, l2 = (int(v.strip()) for v in row)
        except ValueError:
            raise ParseError(f"non-integer field in {row!r}", line=lineno) from None
        if l1 < 1 or l2 < 1:
            raise InvalidLabel(f"labels must be >= 1, got ({l1},{l2})", line=lineno)
        if (x, y) in seen:
            raise DuplicateCoordinate(f"duplicate coordinate ({x},{y})", line=lineno)
        seen.add((x, y))
        entries.append(AnnotationEntry(x, y, l1, l2))
    return OrderingAnnotation(entries=tuple(entries), image_id=image_id)


def serialize_annotations(annotation: OrderingAnnotation) -> str:
    """Inverse of parse_annotations; UTF-8 safe, LF line endings."""
    lines = [",".join(ANNOTATION_HEADER)]
    lines.extend(f"{e.x},{e.y},{e.l1},{e.l2}" for e in annotation.entries)
    return "\n".join(lines) + "\n"


def load_annotations(path: str | Path) -> OrderingAnnotation:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read annotation file {path}: {exc}") from exc
    return parse_annotations(text, image_id=path.stem)


# ---------------------------------------------------------------------------
# Depth file I/O: PFM and 16-bit PNG
# ---------------------------------------------------------------------------

class DepthLoadResult(NamedTuple):
    depth: DepthMap
    clamped: int


def _write_pfm(values: np.ndarray, path: Path) -> None:
    h, w = values.shape
    data = values.astype("<f4")
    # PFM scanlines run bottom-to-top.
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(data).tobytes())


def _read_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise IoError(f"{path}: not a PFM file (header {header!r})")
        if header == b"PF":
            raise IoError(f"{path}: color PFM not supported for depth maps")
        dims = f.readline().decode("ascii", errors="replace")
        m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise IoError(f"{path}: malformed PFM dimension line {dims!r}")
        w, h = int(m.group(1)), int(m.group(2))
        try:
            scale = float(f.readline().decode("ascii"))
        except ValueError:
            raise IoError(f"{path}: malformed PFM scale line") from None
        endian = "<" if scale < 0 else ">"
        raw = f.read(4 * w * h)
        if len(raw) != 4 * w * h:
            raise IoError(f"{path}: truncated PFM payload")
        data = np.frombuffer(raw, dtype=endian + "f4").reshape(h, w)
    return np.flipud(data).astype(np.float64)


def save_depth(
    depth: DepthMap,
    path: str | Path,
    png_range: tuple[float, float] | None = None,
) -> None:
    """Write a depth map as PFM (``.pfm``) or 16-bit PNG (``.png``).

    PNG quantizes into ``png_range`` (default: the map's own min/max) and
    writes a ``<file>.json`` sidecar with the dequantization range.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix == ".pfm":
            _write_pfm(depth.values, path)
        elif suffix == ".png":
            lo, hi = png_range if png_range is not None else (
                float(depth.values.min()),
                float(depth.values.max()),
            )
            if hi < lo:
                raise DomainError(f"invalid png range ({lo}, {hi})")
            span = hi - lo
            if span == 0.0:
                q = np.zeros(depth.values.shape, dtype=np.uint16)
            else:
                scaled = np.clip((depth.values - lo) / span, 0.0, 1.0)
                q = np.round(scaled * 65535.0).astype(np.uint16)
            Image.fromarray(q).save(path)
            sidecar = path.with_name(path.name + ".json")
            sidecar.write_text(json.dumps({"min": lo, "max": hi}), encoding="utf-8")
        else:
            raise IoError(f"unsupported depth format {suffix!r} (use .pfm or .png)")
    except OSError as exc:
        raise IoError(f"cannot write depth file {path}: {exc}") from exc


def load_depth(path: str | Path) -> DepthLoadResult:
    """Read a PFM or 16-bit PNG depth file.

    Non-positive stored values are clamped to the DEPTH_EPSILON floor;
    the number of clamped pixels is reported in the result.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        values = _read_pfm(path)
    elif suffix == ".png":
        sidecar = path.with_name(path.name + ".json")
        try:
            rng = json.loads(sidecar.read_text(encoding="utf-8"))
            lo, hi = float(rng["min"]), float(rng["max"])
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise IoError(f"missing or malformed sidecar {sidecar}: {exc}") from exc
        try:
            with Image.open(path) as im:
                arr = np.array(im)
        except (OSError, UnidentifiedImageError) as exc:
            raise IoError(f"cannot read depth PNG {path}: {exc}") from exc
        if arr.dtype != np.uint16:
            raise IoError(f"{path}: expected 16-bit grayscale PNG, got {arr.dtype}")
        values = lo + (arr.astype(np.float64) / 65535.0) * (hi - lo)
    else:
        raise IoError(f"unsupported depth format {suffix!r} (use .pfm or .png)")
    if not np.all(np.isfinite(values)):
        raise IoError(f"{path}: depth file contains non-finite values")
    clamped = int(np.count_nonzero(values < DEPTH_EPSILON))
    if clamped:
        warnings.warn(
            f"{path}: clamped {clamped} non-positive depth value(s) to {DEPTH_EPSILON}",
            stacklevel=2,
        )
        values = np.maximum(values, DEPTH_EPSILON)
    return DepthLoadResult(DepthMap(values), clamped)


# ---------------------------------------------------------------------------
# Image I/O
# ---------------------------------------------------------------------------

def load_image(path: str | Path, load_sidecar: bool = True) -> ImageTensor:
    """Read a PNG or JPEG into an ImageTensor scaled to [0, 1].

    Grayscale inputs are replicated to three channels. If a ``<stem>.json``
    sidecar exists (scene descriptors), it is attached as
    ``meta["descriptor"]``.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise IoError(f"{path}: unsupported image format {im.format!r}")
            if im.mode in ("I;16", "I"):
                arr = np.array(im).astype(np.float64) / 65535.0
                arr = np.repeat(arr[:, :, None], 3, axis=2)
            else:
                rgb = im.convert("RGB")
                arr = np.asarray(rgb).astype(np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise IoError(f"cannot read image {path}: {exc}") from exc
    meta: dict[str, Any] = {"source_path": str(path)}
    if load_sidecar:
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            try:
                meta["descriptor"] = json.loads(sidecar.read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise IoError(f"malformed sidecar {sidecar}: {exc}") from exc
    return ImageTensor(np.clip(arr, 0.0, 1.0), meta=meta)


def save_image(image: ImageTensor, path: str | Path) -> None:
    """Write an ImageTensor as an 8-bit PNG."""
    path = Path(path)
    arr = np.round(image.pixels * 255.0).astype(np.uint8)
    try:
        Image.fromarray(arr).save(path)
    except OSError as exc:
        raise IoError(f"cannot write image {path}: {exc}") from exc


def load_mask(path: str | Path) -> TextMask:
    """Read an 8-bit mask PNG (0/255 or 0/1) into a TextMask."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.array(im.convert("L"))
    except (OSError, UnidentifiedImageError) as exc:
        raise IoError(f"cannot read mask {path}: {exc}") from exc
    return TextMask((arr > 127).astype(np.uint8) if arr.max() > 1 else arr)


def save_mask(mask: TextMask, path: str | Path) -> None:
    """Write a TextMask as an 8-bit PNG with values 0/255."""
    path = Path(path)
    try:
        Image.fromarray((mask.values * 255).astype(np.uint8)).save(path)
    except OSError as exc:
        raise IoError(f"cannot write mask {path}: {exc}") from exc
