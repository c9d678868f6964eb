"""Depth metrics and the ordinal-annotation evaluation harness.

The four standard metrics (AbsRel, SqRel, RMSE, RMSE log) are computed
over the annotated points. Ordering annotations are converted to
reference depths by ranking the distinct (l1, l2) labels
lexicographically and mapping rank k of K to depth k / K in (0, 1];
this uniform-rank convention is a stated substitute for measured depth,
not a reproduction of any published protocol. Predictions are
median-scale aligned by default since they are relative depths.
"""

from __future__ import annotations

import enum
import json

import numpy as np

from .data import DepthMap, MetricsReport, OrderingAnnotation
from .errors import DomainError, EmptyEvaluation, OutOfBounds


class AlignmentMode(enum.Enum):
    NONE = "none"
    MEDIAN_SCALE = "median_scale"


def _validate(pred, gt, pred_positive: bool = False):
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    g = np.asarray(gt, dtype=np.float64).reshape(-1)
    if p.size == 0 or g.size == 0:
        raise EmptyEvaluation("no points to evaluate")
    if p.size != g.size:
        raise DomainError(f"length mismatch: pred {p.size} vs gt {g.size}")
    if g.min() <= 0:
        raise DomainError("ground-truth values must be strictly positive")
    if pred_positive and p.min() <= 0:
        raise DomainError("predicted values must be strictly positive")
    return p, g


def abs_rel(pred, gt) -> float:
    """Mean of |y - y*| / y* over the points."""
    p, g = _validate(pred, gt)
    return float(np.mean(np.abs(p - g) / g))


def sq_rel(pred, gt) -> float:
    """Mean of (y - y*)^2 / y* over the points."""
    p, g = _validate(pred, gt)
    return float(np.mean((p - g) ** 2 / g))


def rmse(pred, gt) -> float:
    """Root mean squared error over the points."""
    p, g = _validate(pred, gt)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def rmse_log(pred, gt) -> float:
    """Root mean squared error of log y - log y* over the points."""
    p, g = _validate(pred, gt, pred_positive=True)
    return float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2)))


def ordering_to_depth(annotation: OrderingAnnotation) -> np.ndarray:
    """Reference depths at the annotated pixels, aligned with entries.

    Distinct (l1, l2) labels are ranked lexicographically 1..K and each
    entry gets depth rank / K; equal labels share a value and the map
    is strictly increasing in the lexicographic order.
    """
    if len(annotation) == 0:
        raise EmptyEvaluation("empty annotation")
    labels = sorted({e.label for e in annotation.entries})
    k = len(labels)
    rank = {label: (i + 1) / k for i, label in enumerate(labels)}
    return np.array([rank[e.label] for e in annotation.entries], dtype=np.float64)


def align(pred, gt, mode: AlignmentMode = AlignmentMode.MEDIAN_SCALE) -> np.ndarray:
    """Scale predictions onto the ground truth per the alignment mode."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    if mode is AlignmentMode.NONE:
        return p
    g = np.asarray(gt, dtype=np.float64).reshape(-1)
    med_p, med_g = np.median(p), np.median(g)
    if med_p == 0 or med_g == 0:
        raise DomainError("median alignment requires nonzero medians")
    return p * (med_g / med_p)


def ordinal_accuracy(pred, annotation: OrderingAnnotation) -> float:
    """Fraction of label-distinct entry pairs ordered consistently.

    A pair is correct iff sign(pred_i - pred_j) matches the sign of the
    lexicographic label comparison; prediction ties against a strict
    label order count as incorrect.
    """
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    entries = annotation.entries
    if p.size != len(entries):
        raise DomainError(f"{p.size} predictions for {len(entries)} entries")
    correct = 0
    comparable = 0
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            li, lj = entries[i].label, entries[j].label
            if li == lj:
                continue
            comparable += 1
            gt_sign = -1 if li < lj else 1
            pred_sign = int(np.sign(p[i] - p[j]))
            if pred_sign == gt_sign:
                correct += 1
    if comparable == 0:
        raise EmptyEvaluation("no comparable annotation pairs")
    return correct / comparable


def sample_at_annotations(pred: DepthMap, annotation: OrderingAnnotation) -> np.ndarray:
    """Prediction values at the annotated pixels, in entry order."""
    values = np.empty(len(annotation), dtype=np.float64)
    for i, e in enumerate(annotation.entries):
        if not (0 <= e.x < pred.width and 0 <= e.y < pred.height):
            raise OutOfBounds(
                f"annotation ({e.x},{e.y}) outside {pred.width}x{pred.height} prediction"
            )
        values[i] = pred.values[e.y, e.x]
    return values


def evaluate(
    pred: DepthMap,
    annotation: OrderingAnnotation,
    mode: AlignmentMode = AlignmentMode.MEDIAN_SCALE,
) -> MetricsReport:
    """Score a prediction against an ordering annotation."""
    if len(annotation) == 0:
        raise EmptyEvaluation("empty annotation")
    sampled = sample_at_annotations(pred, annotation)
    gt = ordering_to_depth(annotation)
    aligned = align(sampled, gt, mode)
    return MetricsReport(
        abs_rel=abs_rel(aligned, gt),
        sq_rel=sq_rel(aligned, gt),
        rmse=rmse(aligned, gt),
        rmse_log=rmse_log(aligned, gt),
        ordinal_accuracy=ordinal_accuracy(sampled, annotation),
        n_points=len(annotation),
    )


def report_json(report: MetricsReport) -> str:
    """Schema-stable JSON rendering of a report."""
    payload = {
        "abs_rel": report.abs_rel,
        "sq_rel": report.sq_rel,
        "rmse": report.rmse,
        "rmse_log": report.rmse_log,
        "ordinal_accuracy": report.ordinal_accuracy,
        "n_points": report.n_points,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def report_table(report: MetricsReport) -> str:
    """Aligned text table in the AbsRel / SqRel / RMSE / RMSE log column order."""
    headers = ["AbsRel", "SqRel", "RMSE", "RMSE log", "OrdAcc", "N"]
    values = [
        f"{report.abs_rel:.4f}",
        f"{report.sq_rel:.4f}",
        f"{report.rmse:.4f}",
        f"{report.rmse_log:.4f}",
        f"{report.ordinal_accuracy:.4f}",
        str(report.n_points),
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    header = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
    return header + "\n" + row + "\n"
