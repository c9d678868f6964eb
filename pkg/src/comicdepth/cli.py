"""Command-line interface wiring all components together.

Exit codes: 0 success, 1 usage error, 2 runtime error. Output is plain
text without ANSI escapes, so NO_COLOR needs no special handling.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, scenes
from .checks import run_gradient_checks
from .data import (
    DepthMap,
    load_annotations,
    load_depth,
    load_image,
    save_depth,
    save_image,
    save_mask,
)
from .data import ImageTensor
from .errors import ComicDepthError
from .evaluator import AlignmentMode, evaluate, report_json, report_table
from .text import segment_text
from .trainer import load_config, load_segmenter, predict, prepare, train


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="comicdepth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="cache pseudo ground truth and text masks")
    p.add_argument("--config", required=True, type=Path)

    p = sub.add_parser("train", help="train the twin depth estimators")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--resume", type=Path, default=None)

    p = sub.add_parser("predict", help="predict depth for one image")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--out", type=Path, default=None, help="depth output (.pfm or .png)")
    p.add_argument("--out-png", type=Path, default=None, help="color visualization")
    p.add_argument("--translate", action="store_true")
    p.add_argument("--strip-text", action="store_true")

    p = sub.add_parser("evaluate", help="score a prediction against annotations")
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--ann", required=True, type=Path)
    p.add_argument("--align", choices=("median", "none"), default="median")
    p.add_argument("--json", type=Path, default=None)

    p = sub.add_parser("segment-text", help="predict a text mask for one image")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("gen-fixtures", help="emit a synthetic scene corpus")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--min-layers", type=int, default=1)
    p.add_argument("--max-layers", type=int, default=3)
    p.add_argument("--balloon-prob", type=float, default=0.6)
    p.add_argument("--with-depth", action="store_true")

    p = sub.add_parser("validate-annotations", help="check an annotation file")
    p.add_argument("--ann", required=True, type=Path)

    p = sub.add_parser("gradcheck", help="run the gradient-check suite")
    p.add_argument(
        "--net-entries",
        type=int,
        default=25,
        help="entries sampled per tensor for the full-network check",
    )

    sub.add_parser("version", help="print the package version")
    return parser


def _depth_to_colormap(depth: DepthMap) -> ImageTensor:
    """Warm-near / cool-far rendering of a depth map."""
    v = depth.values
    lo, hi = float(v.min()), float(v.max())
    t = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)  # 0 near, 1 far
    near = np.array([1.00, 0.45, 0.05])
    mid = np.array([0.97, 0.93, 0.55])
    far = np.array([0.15, 0.30, 0.80])
    t3 = t[:, :, None]
    out = np.where(
        t3 < 0.5,
        near + (mid - near) * (2.0 * t3),
        mid + (far - mid) * (2.0 * t3 - 1.0),
    )
    return ImageTensor(np.clip(out, 0.0, 1.0))


def _cmd_prepare(args) -> int:
    summary = prepare(load_config(args.config))
    for line in summary.lines():
        print(line)
    return 0


def _cmd_train(args) -> int:
    config = load_config(args.config)
    ckpt = train(config, resume=args.resume)
    print(f"checkpoint: {ckpt}")
    print(f"loss log: {config.resolved_log_path()}")
    return 0


def _cmd_predict(args) -> int:
    image = load_image(args.image)
    depth = predict(
        args.ckpt,
        image,
        use_translator=args.translate,
        use_text_mask=args.strip_text,
    )
    if args.out is None and args.out_png is None:
        raise ComicDepthError("predict needs --out and/or --out-png")
    if args.out is not None:
        save_depth(depth, args.out)
        print(f"depth: {args.out}")
    if args.out_png is not None:
        save_image(_depth_to_colormap(depth), args.out_png)
        print(f"visualization: {args.out_png}")
    return 0


def _cmd_evaluate(args) -> int:
    depth = load_depth(args.pred).depth
    annotation = load_annotations(args.ann)
    mode = AlignmentMode.MEDIAN_SCALE if args.align == "median" else AlignmentMode.NONE
    report = evaluate(depth, annotation, mode)
    sys.stdout.write(report_table(report))
    if args.json is not None:
        args.json.write_text(report_json(report), encoding="utf-8")
        print(f"json: {args.json}")
    return 0


def _cmd_segment_text(args) -> int:
    seg = load_segmenter(args.ckpt)
    mask = segment_text(seg, load_image(args.image))
    save_mask(mask, args.out)
    print(f"mask: {args.out} (text ratio {mask.ratio():.4f})")
    return 0


def _cmd_gen_fixtures(args) -> int:
    stems = scenes.emit_corpus(
        args.out,
        seed=args.seed,
        count=args.count,
        size=args.size,
        layer_range=(args.min_layers, args.max_layers),
        balloon_prob=args.balloon_prob,
        with_depth=args.with_depth,
    )
    print(f"wrote {len(stems)} scenes to {args.out}")
    return 0


def _cmd_validate_annotations(args) -> int:
    annotation = load_annotations(args.ann)
    print(f"OK: {len(annotation)} entries")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradient_checks(net_max_entries=args.net_entries)
    worst_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(
            f"{r.name:26s} max_rel_error={r.max_rel_error:.3e} "
            f"tol={r.tolerance:.0e} {status}"
        )
        worst_ok = worst_ok and r.passed
    return 0 if worst_ok else 2


_HANDLERS = {
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "segment-text": _cmd_segment_text,
    "gen-fixtures": _cmd_gen_fixtures,
    "validate-annotations": _cmd_validate_annotations,
    "gradcheck": _cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    if args.command == "version":
        print(__version__)
        return 0
    try:
        return _HANDLERS[args.command](args)
    except ComicDepthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
