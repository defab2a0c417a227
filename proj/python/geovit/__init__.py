"""Geolocated tile segmentation, backed by the C++ core.

Exposes shape descriptors, the spherical-harmonic basis, segmentation
metrics, deterministic corpus generation, and the train / evaluate /
ablate / predict loop.
"""

from _geovit import (
    ablate,
    compactness,
    evaluate,
    generate_corpus,
    iterations_for,
    kernel_grad_suite,
    normalize_lon,
    predict_tile,
    semantic_metrics,
    sh_basis,
    shape_stats,
    train,
)

__all__ = [
    "ablate",
    "compactness",
    "evaluate",
    "generate_corpus",
    "iterations_for",
    "kernel_grad_suite",
    "normalize_lon",
    "predict_tile",
    "semantic_metrics",
    "sh_basis",
    "shape_stats",
    "train",
]
