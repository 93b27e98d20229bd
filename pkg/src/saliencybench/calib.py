"""Adaptive-bin calibration error and regular-vs-FP model evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import TooFewSamples
from .oracles import ScoringOracle
from .rng import Rng


def ada_ece(confidences, correct, bins: int = 15) -> float:
    """Expected calibration error with equal-mass confidence bins.

    Samples are sorted by (confidence, correctness) and cut into ``bins``
    groups whose sizes differ by at most one; the lexicographic sort makes
    the result independent of input order even with tied confidences.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    n = len(conf)
    if n != len(corr):
        raise ValueError("confidences and correctness must align")
    if n < bins:
        raise TooFewSamples(f"need at least {bins} samples, got {n}")
    if conf.min() < 0.0 or conf.max() > 1.0:
        raise ValueError("confidences must lie in [0, 1]")
    order = np.lexsort((corr, conf))
    conf = conf[order]
    corr = corr[order]
    base, extra = divmod(n, bins)
    ece = 0.0
    start = 0
    for b in range(bins):
        size = base + (1 if b < extra else 0)
        sl = slice(start, start + size)
        ece += size / n * abs(float(corr[sl].mean()) - float(conf[sl].mean()))
        start += size
    return ece


@dataclass(frozen=True)
class CalibReport:
    regular_ece: float
    fp_ece: float
    regular_acc: float
    fp_acc: float
    bins: int

    def save_csv(self, path: str | Path, setting: str = "") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["setting", "adaece_regular", "adaece_fp",
                             "accuracy_regular", "accuracy_fp", "bins"])
            writer.writerow([setting, repr(self.regular_ece), repr(self.fp_ece),
                             repr(self.regular_acc), repr(self.fp_acc), self.bins])


FpSampler = Callable[[Sequence[np.ndarray], Rng], list[np.ndarray]]


def eval_regular_vs_fp(oracle: ScoringOracle, images: Sequence[np.ndarray],
                       labels: Sequence[int], fp_sampler: FpSampler, rng: Rng,
                       bins: int = 15) -> CalibReport:
    """Accuracy and AdaECE on a subset and on its FP-perturbed twin.

    The same seeded stream drives the FP sampling, so repeated calls with
    an identical oracle produce identical reports.
    """
    labels = np.asarray(labels, dtype=np.int64)
    fp_images = fp_sampler(images, rng)

    def stats(batch) -> tuple[np.ndarray, np.ndarray]:
        probs = oracle.score_batch(batch)
        return probs.max(axis=1), (probs.argmax(axis=1) == labels)

    reg_conf, reg_ok = stats(images)
    fp_conf, fp_ok = stats(fp_images)
    return CalibReport(
        regular_ece=ada_ece(reg_conf, reg_ok, bins),
        fp_ece=ada_ece(fp_conf, fp_ok, bins),
        regular_acc=float(reg_ok.mean()),
        fp_acc=float(fp_ok.mean()),
        bins=bins,
    )
