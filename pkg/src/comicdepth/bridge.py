"""Pluggable comics-to-real translator and pseudo-ground-truth provider.

Both seams are name-registered so an externally supplied translator or
depth estimator can be swapped in through configuration alone. The
bundled implementations are deterministic stubs: an identity
translator, a channel-statistics recoloring translator, an analytic
depth provider for generated scenes, and a provider reading
precomputed depth files from a directory.

Pseudo ground truth is computed once per image and cached as
``<cache>/pseudo_gt/<stem>.pfm`` with create-then-rename writes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .data import DepthMap, ImageTensor, load_depth, save_depth
from .errors import ConfigError, IoError, UnsupportedInput
from .scenes import SceneDescriptor, depth_from_descriptor


@runtime_checkable
class Translator(Protocol):
    name: str

    def translate(self, image: ImageTensor) -> ImageTensor: ...


@runtime_checkable
class PseudoGtProvider(Protocol):
    name: str

    def estimate(self, image: ImageTensor) -> DepthMap: ...


class IdentityTranslator:
    """Pass-through stand-in for the image-to-image translation model."""

    name = "identity"

    def translate(self, image: ImageTensor) -> ImageTensor:
        return image


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and standard deviation of a reference corpus."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]


def compute_reference_stats(images: list[ImageTensor]) -> ChannelStats:
    if not images:
        raise ConfigError("cannot compute reference stats of an empty corpus")
    pixels = np.concatenate([img.pixels.reshape(-1, 3) for img in images])
    return ChannelStats(
        mean=tuple(float(v) for v in pixels.mean(axis=0)),
        std=tuple(float(v) for v in pixels.std(axis=0)),
    )


class StatsTranslator:
    """Per-channel affine recoloring onto reference statistics.

    Channels with (near-)zero source variance keep unit scale, so a
    constant channel is only mean-shifted. Output is clipped to [0, 1].
    """

    name = "stats"

    def __init__(self, reference: ChannelStats):
        self.reference = reference

    def translate(self, image: ImageTensor) -> ImageTensor:
        out = np.empty_like(image.pixels)
        for c in range(3):
            chan = image.pixels[:, :, c]
            mu, sigma = chan.mean(), chan.std()
            scale = self.reference.std[c] / sigma if sigma > 1e-12 else 1.0
            out[:, :, c] = (chan - mu) * scale + self.reference.mean[c]
        return ImageTensor(np.clip(out, 0.0, 1.0), meta=image.meta)


class SyntheticGtProvider:
    """Analytic depth for images generated by the scene generator.

    Not a general estimator: the image must carry a scene descriptor in
    its metadata (in memory or via the ``<stem>.json`` sidecar).
    """

    name = "synthetic"

    def estimate(self, image: ImageTensor) -> DepthMap:
        meta = image.meta or {}
        if "descriptor" not in meta:
            raise UnsupportedInput(
                "synthetic provider needs a scene descriptor in image metadata"
            )
        descriptor = SceneDescriptor.from_dict(meta["descriptor"])
        if descriptor.canvas != (image.height, image.width):
            raise UnsupportedInput(
                f"descriptor canvas {descriptor.canvas} does not match image "
                f"{(image.height, image.width)}"
            )
        return depth_from_descriptor(descriptor)


class DirectoryGtProvider:
    """Reads precomputed depth files keyed by image filename stem."""

    name = "from_directory"

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def estimate(self, image: ImageTensor) -> DepthMap:
        meta = image.meta or {}
        source = meta.get("source_path")
        if source is None:
            raise UnsupportedInput("from_directory provider needs a source path")
        path = self.directory / (Path(source).stem + ".pfm")
        if not path.exists():
            raise IoError(f"no precomputed depth at {path}")
        return load_depth(path).depth


_TRANSLATORS: dict[str, Callable[..., Translator]] = {}
_PROVIDERS: dict[str, Callable[..., PseudoGtProvider]] = {}


def register_translator(name: str, factory: Callable[..., Translator]) -> None:
    _TRANSLATORS[name] = factory


def register_provider(name: str, factory: Callable[..., PseudoGtProvider]) -> None:
    _PROVIDERS[name] = factory


def create_translator(name: str, **options) -> Translator:
    if name not in _TRANSLATORS:
        raise ConfigError(
            f"unknown translator {name!r}; registered: {sorted(_TRANSLATORS)}"
        )
    return _TRANSLATORS[name](**options)


def create_provider(name: str, **options) -> PseudoGtProvider:
    if name not in _PROVIDERS:
        raise ConfigError(
            f"unknown provider {name!r}; registered: {sorted(_PROVIDERS)}"
        )
    return _PROVIDERS[name](**options)


def _make_stats_translator(**options) -> StatsTranslator:
    if "mean" in options and "std" in options:
        return StatsTranslator(
            ChannelStats(mean=tuple(options["mean"]), std=tuple(options["std"]))
        )
    raise ConfigError("stats translator needs 'mean' and 'std' options")


register_translator("identity", lambda **_: IdentityTranslator())
register_translator("stats", _make_stats_translator)
register_provider("synthetic", lambda **_: SyntheticGtProvider())
register_provider(
    "from_directory", lambda directory, **_: DirectoryGtProvider(directory)
)


class PseudoGtCache:
    """Once-only pseudo-GT computation with an on-disk PFM cache.

    Writes go to a temporary file first and are renamed into place, so
    concurrent preparation runs cannot leave corrupt entries.
    """

    def __init__(self, root: str | Path):
        self.dir = Path(root) / "pseudo_gt"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def path_for(self, stem: str) -> Path:
        return self.dir / f"{stem}.pfm"

    def get_or_compute(
        self, stem: str, image: ImageTensor, provider: PseudoGtProvider
    ) -> DepthMap:
        path = self.path_for(stem)
        if path.exists():
            self.hits += 1
            return load_depth(path).depth
        depth = provider.estimate(image)
        tmp = self.dir / f".{stem}.{os.getpid()}.tmp.pfm"
        save_depth(depth, tmp)
        os.replace(tmp, path)
        self.misses += 1
        return load_depth(path).depth
