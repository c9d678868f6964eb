"""Training orchestration: preparation, twin training, checkpoints, predict.

The loop follows the combined objective: per step, the real batch goes
through one twin view and is scored with the shift/scale-invariant log
loss against cached pseudo ground truth; the comics batch is translated
and goes through the weight-shared view, scored with the text-masked L1
loss; the feature discriminator takes one update on the two bottleneck
batches; and the encoder update applies alpha_adv * L_adv +
alpha_depth * L_depth via Adam.

Everything is deterministic given (seed, config, corpus): batch order
comes from one seeded generator whose state is checkpointed, pseudo
ground truth is always read back from the cache files, and checkpoints
are byte-stable zips of float64 tensors.
"""

from __future__ import annotations

import json
import math
import os
import sys
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import bridge
from .data import (
    DepthMap,
    ImageTensor,
    TextMask,
    load_depth,
    load_image,
    load_mask,
    save_mask,
)
from .context import AsppConfig
from .errors import ComicDepthError, ConfigError, NumericalError
from .feature_gan import FeatureDiscriminator, discriminator_step, generator_objective
from .losses import GAN_MODES, LossWeights, depth_loss, masked_l1_loss, total_objective
from .network import DepthNet, DepthNetConfig, make_twin, shares_parameters
from .tensors import depth_to_tensor, image_to_tensor, mask_to_tensor, tensor_to_depth
from .text import TextSegmenter, segment_text, strip_text_from_depth

LOG_HEADER = "step,epoch,l_depth,l_masked,l_adv_d,l_adv_g,l_total"

PRESETS = {
    "toy": {"epochs": 30, "learning_rate": 1e-3, "levels": 3, "base_channels": 8},
    "paper": {"epochs": 100, "learning_rate": 1e-6, "levels": 4, "base_channels": 32},
}

SUPERVISION_MODES = ("pseudo_gt", "none")

CHECKPOINT_FORMAT_VERSION = 1
# Fixed timestamp so checkpoint archives are byte-stable.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class TrainConfig:
    comics_dir: Path
    real_dir: Path
    cache_dir: Path
    checkpoint_dir: Path
    preset: str = "toy"
    epochs: int | None = None
    learning_rate: float | None = None
    levels: int | None = None
    base_channels: int | None = None
    batch_size: int = 4
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    gan_mode: str = "minimax"
    translated_supervision: str = "pseudo_gt"
    translator: str = "identity"
    translator_options: dict = field(default_factory=dict)
    provider: str = "synthetic"
    provider_options: dict = field(default_factory=dict)
    aspp_rates: tuple[int, ...] = (1, 6, 12, 18)
    laplacian_gating: str = "one_plus_abs"
    log_path: Path | None = None
    segmenter_checkpoint: Path | None = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        preset = PRESETS[self.preset]
        for name in ("epochs", "learning_rate", "levels", "base_channels"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, preset[name])
        for name in ("comics_dir", "real_dir", "cache_dir", "checkpoint_dir"):
            object.__setattr__(self, name, Path(getattr(self, name)))
        if self.log_path is not None:
            object.__setattr__(self, "log_path", Path(self.log_path))
        if self.segmenter_checkpoint is not None:
            object.__setattr__(
                self, "segmenter_checkpoint", Path(self.segmenter_checkpoint)
            )
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.gan_mode not in GAN_MODES:
            raise ConfigError(f"gan_mode must be one of {GAN_MODES}")
        if self.translated_supervision not in SUPERVISION_MODES:
            raise ConfigError(
                f"translated_supervision must be one of {SUPERVISION_MODES}"
            )

    def net_config(self) -> DepthNetConfig:
        return DepthNetConfig(
            levels=self.levels,
            base_channels=self.base_channels,
            aspp=AsppConfig(dilation_rates=self.aspp_rates),
            laplacian_gating=self.laplacian_gating,
        )

    def resolved_log_path(self) -> Path:
        return self.log_path if self.log_path else self.cache_dir / "loss_log.csv"

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "levels": self.levels,
            "base_channels": self.base_channels,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "adam_betas": list(self.adam_betas),
            "adam_eps": self.adam_eps,
            "alpha_adv": self.weights.alpha_adv,
            "alpha_depth": self.weights.alpha_depth,
            "lambda_si": self.weights.lambda_si,
            "gan_mode": self.gan_mode,
            "translated_supervision": self.translated_supervision,
            "translator": self.translator,
            "translator_options": self.translator_options,
            "provider": self.provider,
            "provider_options": self.provider_options,
            "aspp_rates": list(self.aspp_rates),
            "laplacian_gating": self.laplacian_gating,
            "comics_dir": str(self.comics_dir),
            "real_dir": str(self.real_dir),
            "cache_dir": str(self.cache_dir),
            "checkpoint_dir": str(self.checkpoint_dir),
            "log_path": str(self.log_path) if self.log_path else None,
            "segmenter_checkpoint": str(self.segmenter_checkpoint)
            if self.segmenter_checkpoint
            else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(
            comics_dir=Path(d["comics_dir"]),
            real_dir=Path(d["real_dir"]),
            cache_dir=Path(d["cache_dir"]),
            checkpoint_dir=Path(d["checkpoint_dir"]),
            preset=d.get("preset", "toy"),
            epochs=d.get("epochs"),
            learning_rate=d.get("learning_rate"),
            levels=d.get("levels"),
            base_channels=d.get("base_channels"),
            batch_size=d.get("batch_size", 4),
            seed=d.get("seed", 0),
            adam_betas=tuple(d.get("adam_betas", (0.9, 0.999))),
            adam_eps=d.get("adam_eps", 1e-8),
            weights=LossWeights(
                alpha_adv=d.get("alpha_adv", 0.01),
                alpha_depth=d.get("alpha_depth", 1.0),
                lambda_si=d.get("lambda_si", 0.5),
            ),
            gan_mode=d.get("gan_mode", "minimax"),
            translated_supervision=d.get("translated_supervision", "pseudo_gt"),
            translator=d.get("translator", "identity"),
            translator_options=d.get("translator_options", {}),
            provider=d.get("provider", "synthetic"),
            provider_options=d.get("provider_options", {}),
            aspp_rates=tuple(d.get("aspp_rates", (1, 6, 12, 18))),
            laplacian_gating=d.get("laplacian_gating", "one_plus_abs"),
            log_path=Path(d["log_path"]) if d.get("log_path") else None,
            segmenter_checkpoint=Path(d["segmenter_checkpoint"])
            if d.get("segmenter_checkpoint")
            else None,
        )


def load_config(path: str | Path) -> TrainConfig:
    """Read a TOML config; relative paths resolve against the file."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc

    train = dict(doc.get("train", {}))
    net = dict(doc.get("net", {}))
    br = dict(doc.get("bridge", {}))
    paths = dict(doc.get("paths", {}))
    base = path.parent

    def _resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    required = ("comics_dir", "real_dir", "cache_dir", "checkpoint_dir")
    missing = [k for k in required if k not in paths]
    if missing:
        raise ConfigError(f"[paths] missing keys: {missing}")

    return TrainConfig(
        comics_dir=_resolve(paths["comics_dir"]),
        real_dir=_resolve(paths["real_dir"]),
        cache_dir=_resolve(paths["cache_dir"]),
        checkpoint_dir=_resolve(paths["checkpoint_dir"]),
        log_path=_resolve(paths["log"]) if "log" in paths else None,
        segmenter_checkpoint=_resolve(paths["segmenter_checkpoint"])
        if "segmenter_checkpoint" in paths
        else None,
        preset=train.get("preset", "toy"),
        epochs=train.get("epochs"),
        learning_rate=train.get("learning_rate"),
        batch_size=train.get("batch_size", 4),
        seed=train.get("seed", 0),
        adam_betas=tuple(train.get("adam_betas", (0.9, 0.999))),
        adam_eps=train.get("adam_eps", 1e-8),
        weights=LossWeights(
            alpha_adv=train.get("alpha_adv", 0.01),
            alpha_depth=train.get("alpha_depth", 1.0),
            lambda_si=train.get("lambda_si", 0.5),
        ),
        gan_mode=train.get("gan_mode", "minimax"),
        translated_supervision=train.get("translated_supervision", "pseudo_gt"),
        translator=br.get("translator", "identity"),
        translator_options=dict(br.get("translator_options", {})),
        provider=br.get("provider", "synthetic"),
        provider_options=dict(br.get("provider_options", {})),
        levels=net.get("levels"),
        base_channels=net.get("base_channels"),
        aspp_rates=tuple(net.get("aspp_rates", (1, 6, 12, 18))),
        laplacian_gating=net.get("laplacian_gating", "one_plus_abs"),
    )


# ---------------------------------------------------------------------------
# Corpus listing and preparation
# ---------------------------------------------------------------------------

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def list_images(directory: Path) -> list[Path]:
    """Sorted corpus images, skipping mask/depth companion files."""
    out = []
    for p in sorted(Path(directory).iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        if p.stem.endswith("_mask") or p.stem.endswith("_depth"):
            continue
        out.append(p)
    return out


@dataclass
class PrepareSummary:
    n_real: int = 0
    n_comics: int = 0
    pseudo_gt_computed: int = 0
    pseudo_gt_cached: int = 0
    masks_from_files: int = 0
    masks_from_model: int = 0
    masks_empty: int = 0
    failures: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [
            f"real images: {self.n_real}",
            f"comics images: {self.n_comics}",
            f"pseudo-gt computed: {self.pseudo_gt_computed}",
            f"pseudo-gt cache hits: {self.pseudo_gt_cached}",
            f"text masks from files: {self.masks_from_files}",
            f"text masks from model: {self.masks_from_model}",
            f"text masks empty: {self.masks_empty}",
        ]
        out.extend(f"failed: {f}" for f in self.failures)
        return out


def translated_stem(stem: str) -> str:
    return stem + "__translated"


def prepare(config: TrainConfig) -> PrepareSummary:
    """Cache pseudo ground truth and text masks ahead of training.

    Pseudo GT is computed at most once per image; re-running with an
    unchanged corpus performs zero estimator calls.
    """
    provider = bridge.create_provider(config.provider, **config.provider_options)
    translator = bridge.create_translator(
        config.translator, **config.translator_options
    )
    cache = bridge.PseudoGtCache(config.cache_dir)
    summary = PrepareSummary()

    real_paths = list_images(config.real_dir)
    comics_paths = list_images(config.comics_dir)
    if not real_paths or not comics_paths:
        raise ConfigError(
            f"no training images (real: {len(real_paths)}, comics: {len(comics_paths)})"
        )
    summary.n_real = len(real_paths)
    summary.n_comics = len(comics_paths)

    ok = 0
    for p in real_paths:
        try:
            cache.get_or_compute(p.stem, load_image(p), provider)
            ok += 1
        except ComicDepthError as exc:
            summary.failures.append(f"{p.name}: {exc}")
    if ok == 0:
        raise ConfigError("pseudo-GT generation failed for every real image")

    if config.translated_supervision == "pseudo_gt":
        for p in comics_paths:
            try:
                translated = translator.translate(load_image(p))
                cache.get_or_compute(translated_stem(p.stem), translated, provider)
            except ComicDepthError as exc:
                summary.failures.append(f"{p.name} (translated): {exc}")

    segmenter = None
    if config.segmenter_checkpoint is not None:
        segmenter = load_segmenter(config.segmenter_checkpoint)

    mask_dir = config.cache_dir / "text_masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    for p in comics_paths:
        target = mask_dir / f"{p.stem}.png"
        sibling = p.with_name(f"{p.stem}_mask.png")
        if sibling.exists():
            mask = load_mask(sibling)
            summary.masks_from_files += 1
        elif segmenter is not None:
            mask = segment_text(segmenter, load_image(p))
            summary.masks_from_model += 1
        else:
            img = load_image(p, load_sidecar=False)
            mask = TextMask(np.zeros((img.height, img.width), dtype=np.uint8))
            summary.masks_empty += 1
        save_mask(mask, target)

    summary.pseudo_gt_computed = cache.misses
    summary.pseudo_gt_cached = cache.hits
    return summary


# ---------------------------------------------------------------------------
# Checkpoint archive
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: dict
    epoch: int
    tensors: dict[str, np.ndarray]
    rng_state: dict | None


def _write_archive(path: Path, files: dict[str, bytes]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(files):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_STORED
            info.external_attr = 0o644 << 16
            zf.writestr(info, files[name])
    os.replace(tmp, path)


def save_checkpoint_raw(
    path: str | Path,
    config_dict: dict,
    tensors: dict[str, np.ndarray],
    epoch: int,
    rng_state: dict | None,
) -> None:
    entries = []
    files: dict[str, bytes] = {}
    for i, name in enumerate(sorted(tensors)):
        arr = np.asarray(tensors[name], dtype="<f8")
        fname = f"tensors/{i:05d}.bin"
        entries.append({"name": name, "shape": list(arr.shape), "file": fname})
        files[fname] = arr.tobytes()
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "epoch": epoch,
        "dtype": "<f8",
        "entries": entries,
        "rng_state": rng_state,
    }
    files["manifest.json"] = (
        json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n"
    ).encode("utf-8")
    files["config.json"] = (
        json.dumps(config_dict, sort_keys=True, separators=(",", ":")) + "\n"
    ).encode("utf-8")
    _write_archive(Path(path), files)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            config_dict = json.loads(zf.read("config.json"))
            tensors = {}
            for entry in manifest["entries"]:
                raw = zf.read(entry["file"])
                tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(
                    entry["shape"]
                ).copy()
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    return Checkpoint(
        config=config_dict,
        epoch=int(manifest["epoch"]),
        tensors=tensors,
        rng_state=manifest.get("rng_state"),
    )


def _module_tensors(prefix: str, module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {
        f"{prefix}/{name}": p.detach().cpu().numpy().astype("<f8")
        for name, p in module.named_parameters()
    }


def _optimizer_tensors(prefix: str, opt: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for idx, state in opt.state_dict()["state"].items():
        for key, value in state.items():
            arr = (
                np.asarray(float(value), dtype="<f8")
                if not isinstance(value, torch.Tensor) or value.dim() == 0
                else value.detach().cpu().numpy().astype("<f8")
            )
            out[f"{prefix}/{idx}/{key}"] = arr
    return out


def _load_module_tensors(
    prefix: str, module: torch.nn.Module, tensors: dict[str, np.ndarray]
) -> None:
    with torch.no_grad():
        for name, p in module.named_parameters():
            key = f"{prefix}/{name}"
            if key not in tensors:
                raise ConfigError(f"checkpoint missing tensor {key}")
            arr = tensors[key]
            if tuple(arr.shape) != tuple(p.shape):
                raise ConfigError(
                    f"checkpoint tensor {key} has shape {arr.shape}, expected {tuple(p.shape)}"
                )
            p.copy_(torch.from_numpy(arr.copy()))


def _load_optimizer_tensors(
    prefix: str, opt: torch.optim.Optimizer, tensors: dict[str, np.ndarray]
) -> None:
    state: dict[int, dict] = {}
    plen = len(prefix) + 1
    for key, arr in tensors.items():
        if not key.startswith(prefix + "/"):
            continue
        idx_str, field_name = key[plen:].split("/", 1)
        entry = state.setdefault(int(idx_str), {})
        if field_name == "step":
            entry[field_name] = torch.tensor(float(arr), dtype=torch.float32)
        else:
            entry[field_name] = torch.from_numpy(arr.copy())
    if not state:
        return
    sd = opt.state_dict()
    sd["state"] = state
    opt.load_state_dict(sd)


def save_training_checkpoint(
    path: str | Path,
    config: TrainConfig,
    net: DepthNet,
    disc: FeatureDiscriminator,
    opt_net: torch.optim.Optimizer,
    opt_disc: torch.optim.Optimizer,
    epoch: int,
    rng: np.random.Generator,
    segmenter: TextSegmenter | None = None,
) -> None:
    tensors = {}
    tensors.update(_module_tensors("net", net))
    tensors.update(_module_tensors("disc", disc))
    tensors.update(_optimizer_tensors("opt_net", opt_net))
    tensors.update(_optimizer_tensors("opt_disc", opt_disc))
    config_dict = config.to_dict()
    if segmenter is not None:
        tensors.update(_module_tensors("segmenter", segmenter))
        config_dict["segmenter"] = {
            "base_channels": segmenter.enc1[0].out_channels,
            "threshold": segmenter.threshold,
        }
    save_checkpoint_raw(
        path,
        config_dict,
        tensors,
        epoch,
        json.loads(json.dumps(rng.bit_generator.state)),
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class StepState:
    """Snapshot passed to the per-step callback."""

    step: int
    epoch: int
    net: DepthNet
    twin: DepthNet
    disc: FeatureDiscriminator
    losses: dict[str, float]


class _Corpus:
    def __init__(self, config: TrainConfig):
        cache = bridge.PseudoGtCache(config.cache_dir)
        translator = bridge.create_translator(
            config.translator, **config.translator_options
        )
        self.translator = translator
        mask_dir = config.cache_dir / "text_masks"

        self.real: list[tuple[torch.Tensor, torch.Tensor]] = []
        for p in list_images(config.real_dir):
            gt_path = cache.path_for(p.stem)
            if not gt_path.exists():
                raise ConfigError(
                    f"missing pseudo-GT for {p.name}; run prepare first"
                )
            self.real.append(
                (
                    image_to_tensor(load_image(p)),
                    depth_to_tensor(load_depth(gt_path).depth),
                )
            )

        self.comics: list[dict] = []
        for p in list_images(config.comics_dir):
            entry: dict = {"image": load_image(p)}
            if config.translated_supervision == "pseudo_gt":
                gt_path = cache.path_for(translated_stem(p.stem))
                if not gt_path.exists():
                    raise ConfigError(
                        f"missing translated pseudo-GT for {p.name}; run prepare first"
                    )
                mask_path = mask_dir / f"{p.stem}.png"
                if not mask_path.exists():
                    raise ConfigError(f"missing text mask for {p.name}; run prepare first")
                entry["gt"] = depth_to_tensor(load_depth(gt_path).depth)
                entry["mask"] = mask_to_tensor(load_mask(mask_path))
            self.comics.append(entry)

        if not self.real or not self.comics:
            raise ConfigError("no training images")


def train(
    config: TrainConfig,
    resume: str | Path | None = None,
    step_callback: Callable[[StepState], None] | None = None,
) -> Path:
    """Run the full training schedule; returns the final checkpoint path.

    With ``resume``, parameters, optimizer states, epoch counter, and
    batch-order RNG are restored and the loss log is appended, making
    the combined run identical to an uninterrupted one.
    """
    corpus = _Corpus(config)

    torch.manual_seed(config.seed)
    net = DepthNet(config.net_config())
    twin = make_twin(net)
    disc = FeatureDiscriminator(config.net_config().bottleneck_channels)
    opt_net = torch.optim.Adam(
        net.parameters(),
        lr=config.learning_rate,
        betas=config.adam_betas,
        eps=config.adam_eps,
    )
    opt_disc = torch.optim.Adam(
        disc.parameters(),
        lr=config.learning_rate,
        betas=config.adam_betas,
        eps=config.adam_eps,
    )
    rng = np.random.default_rng(config.seed)
    segmenter = (
        load_segmenter(config.segmenter_checkpoint)
        if config.segmenter_checkpoint is not None
        else None
    )

    start_epoch = 0
    log_path = config.resolved_log_path()
    log_path.parent.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        ckpt = load_checkpoint(resume)
        _load_module_tensors("net", net, ckpt.tensors)
        _load_module_tensors("disc", disc, ckpt.tensors)
        _load_optimizer_tensors("opt_net", opt_net, ckpt.tensors)
        _load_optimizer_tensors("opt_disc", opt_disc, ckpt.tensors)
        if ckpt.rng_state is not None:
            rng.bit_generator.state = ckpt.rng_state
        start_epoch = ckpt.epoch
        log_file = open(log_path, "a", encoding="utf-8")
    else:
        log_file = open(log_path, "w", encoding="utf-8")
        log_file.write(LOG_HEADER + "\n")

    assert shares_parameters(net, twin)
    n_real = len(corpus.real)
    n_comics = len(corpus.comics)
    steps_per_epoch = math.ceil(n_real / config.batch_size)
    w = config.weights
    ckpt_path: Path | None = (
        Path(resume) if resume is not None else None
    )

    try:
        for epoch in range(start_epoch, config.epochs):
            real_order = rng.permutation(n_real)
            comics_order = rng.permutation(n_comics)
            for s in range(steps_per_epoch):
                step = epoch * steps_per_epoch + s
                real_idx = real_order[s * config.batch_size : (s + 1) * config.batch_size]
                comics_idx = [
                    comics_order[(s * config.batch_size + t) % n_comics]
                    for t in range(len(real_idx))
                ]

                x_real = torch.cat([corpus.real[i][0] for i in real_idx])
                gt_real = torch.cat([corpus.real[i][1] for i in real_idx])
                out_real = net(x_real)
                l_depth = torch.stack(
                    [
                        depth_loss(out_real.depth[i], gt_real[i], w.lambda_si)
                        for i in range(len(real_idx))
                    ]
                ).mean()

                translated = [
                    corpus.translator.translate(corpus.comics[i]["image"])
                    for i in comics_idx
                ]
                x_tr = torch.cat([image_to_tensor(t) for t in translated])
                out_tr = twin(x_tr)
                if config.translated_supervision == "pseudo_gt":
                    l_masked = torch.stack(
                        [
                            masked_l1_loss(
                                out_tr.depth[b],
                                corpus.comics[i]["gt"][0],
                                corpus.comics[i]["mask"][0],
                            )
                            for b, i in enumerate(comics_idx)
                        ]
                    ).mean()
                else:
                    l_masked = torch.zeros((), dtype=torch.float64)

                if w.alpha_adv > 0:
                    l_adv_d = discriminator_step(
                        disc, opt_disc, out_real.bottleneck, out_tr.bottleneck
                    )
                    l_adv_g = generator_objective(
                        disc, out_tr.bottleneck, config.gan_mode
                    )
                else:
                    l_adv_d = 0.0
                    l_adv_g = torch.zeros((), dtype=torch.float64)

                l_total = total_objective(l_adv_g, l_depth + l_masked, w)
                if not torch.isfinite(l_total.detach()):
                    last = ckpt_path if ckpt_path else "none saved yet"
                    raise NumericalError(
                        f"non-finite loss at step {step}; last good checkpoint: {last}"
                    )
                opt_net.zero_grad()
                l_total.backward()
                opt_net.step()

                values = {
                    "l_depth": float(l_depth.detach()),
                    "l_masked": float(l_masked.detach()),
                    "l_adv_d": float(l_adv_d),
                    "l_adv_g": float(l_adv_g.detach()),
                    "l_total": float(l_total.detach()),
                }
                log_file.write(
                    f"{step},{epoch},{values['l_depth']!r},{values['l_masked']!r},"
                    f"{values['l_adv_d']!r},{values['l_adv_g']!r},{values['l_total']!r}\n"
                )
                if step_callback is not None:
                    step_callback(
                        StepState(
                            step=step,
                            epoch=epoch,
                            net=net,
                            twin=twin,
                            disc=disc,
                            losses=values,
                        )
                    )

            ckpt_path = config.checkpoint_dir / f"epoch_{epoch + 1:04d}.zip"
            save_training_checkpoint(
                ckpt_path,
                config,
                net,
                disc,
                opt_net,
                opt_disc,
                epoch + 1,
                rng,
                segmenter,
            )
    finally:
        log_file.close()
    return ckpt_path


# ---------------------------------------------------------------------------
# Prediction and segmenter checkpoints
# ---------------------------------------------------------------------------

def load_net_from_checkpoint(path: str | Path) -> tuple[DepthNet, Checkpoint]:
    ckpt = load_checkpoint(path)
    config = TrainConfig.from_dict(ckpt.config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(0)
        net = DepthNet(config.net_config())
    _load_module_tensors("net", net, ckpt.tensors)
    net.eval()
    return net, ckpt


def predict(
    checkpoint_path: str | Path,
    image: ImageTensor,
    use_translator: bool = False,
    use_text_mask: bool = False,
) -> DepthMap:
    """Depth for one image from a training checkpoint.

    Optionally routes the image through the configured translator first
    and strips segmented text regions from the result.
    """
    net, ckpt = load_net_from_checkpoint(checkpoint_path)
    config = TrainConfig.from_dict(ckpt.config)
    if use_translator:
        translator = bridge.create_translator(
            config.translator, **config.translator_options
        )
        forwarded = translator.translate(image)
    else:
        forwarded = image
    with torch.no_grad():
        result = net(image_to_tensor(forwarded))
    depth = tensor_to_depth(result.depth)
    if use_text_mask:
        segmenter = _segmenter_from_checkpoint(ckpt, config)
        mask = segment_text(segmenter, image)
        depth = strip_text_from_depth(depth, mask)
    return depth


def _segmenter_from_checkpoint(ckpt: Checkpoint, config: TrainConfig) -> TextSegmenter:
    if any(k.startswith("segmenter/") for k in ckpt.tensors):
        meta = ckpt.config.get("segmenter", {})
        seg = TextSegmenter(
            base_channels=int(meta.get("base_channels", 8)),
            threshold=float(meta.get("threshold", 0.5)),
        )
        _load_module_tensors("segmenter", seg, ckpt.tensors)
        seg.eval()
        return seg
    if config.segmenter_checkpoint is not None:
        return load_segmenter(config.segmenter_checkpoint)
    raise ConfigError("no segmenter available in checkpoint or config")


def save_segmenter(path: str | Path, seg: TextSegmenter) -> None:
    base = seg.enc1[0].out_channels
    save_checkpoint_raw(
        path,
        {"segmenter": {"base_channels": base, "threshold": seg.threshold}},
        _module_tensors("segmenter", seg),
        epoch=0,
        rng_state=None,
    )


def load_segmenter(path: str | Path) -> TextSegmenter:
    ckpt = load_checkpoint(path)
    meta = ckpt.config.get("segmenter", {})
    seg = TextSegmenter(
        base_channels=int(meta.get("base_channels", 8)),
        threshold=float(meta.get("threshold", 0.5)),
    )
    _load_module_tensors("segmenter", seg, ckpt.tensors)
    seg.eval()
    return seg
