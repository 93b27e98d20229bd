"""Benchmark-reliability engine for post-hoc saliency explanations."""

from . import (
    benchsize,
    calib,
    config,
    dataset,
    errors,
    metrics,
    oracles,
    perturb,
    pipeline,
    rng,
    saliency,
    stats,
    tensorio,
    toynet,
)

__version__ = "0.1.0"

__all__ = [
    "benchsize", "calib", "config", "dataset", "errors", "metrics", "oracles",
    "perturb", "pipeline", "rng", "saliency", "stats", "tensorio", "toynet",
    "__version__",
]
