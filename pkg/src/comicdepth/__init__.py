"""Depth estimation for comics panels.

A desk-scale pipeline: a context-attention encoder-decoder depth
network with Laplacian-guided local attention, trained with a
shift/scale-invariant log loss and a feature-level adversarial loss
over weight-shared twin estimators, plus a text-mask pipeline and an
ordinal-annotation evaluation harness.
"""

__version__ = "0.1.0"

from .data import (
    DEPTH_EPSILON,
    AnnotationEntry,
    DepthMap,
    ImageTensor,
    MetricsReport,
    OrderingAnnotation,
    TextMask,
    load_annotations,
    load_depth,
    load_image,
    parse_annotations,
    save_depth,
    save_image,
    serialize_annotations,
)
from .losses import (
    LossWeights,
    adversarial_feature_loss,
    depth_loss,
    gradcheck,
    masked_l1_loss,
    total_objective,
)
from .network import DepthNet, DepthNetConfig, ForwardResult, estimate_depth, make_twin

__all__ = [
    "DEPTH_EPSILON",
    "AnnotationEntry",
    "DepthMap",
    "DepthNet",
    "DepthNetConfig",
    "ForwardResult",
    "ImageTensor",
    "LossWeights",
    "MetricsReport",
    "OrderingAnnotation",
    "TextMask",
    "adversarial_feature_loss",
    "depth_loss",
    "estimate_depth",
    "gradcheck",
    "load_annotations",
    "load_depth",
    "load_image",
    "make_twin",
    "masked_l1_loss",
    "parse_annotations",
    "save_depth",
    "save_image",
    "serialize_annotations",
    "total_objective",
]
