"""Faithfulness metrics over (oracle, image, saliency map) triples.

Eight metrics share two curve families. Deletion curves accumulate black
patches; insertion curves unblur patches over a fully blurred base. The
cumulative AUC variants integrate the confidence curve; the correlation
variants relate per-step confidence changes to the saliency of the patch
changed at that step, with non-cumulative (one patch at a time) forms of
both.

Deletion order is most-salient-first by default. ``order="least"``
exposes the opposite reading for sensitivity studies; rankings flip
accordingly, so pick one order per experiment and keep it fixed.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import TooFewSteps, ZeroConfidence
from .oracles import ScoringOracle
from .perturb import BlurSpec, FpKind, PatchGrid, apply_saliency_mask, gaussian_blur, top_k_positions


class Direction(enum.Enum):
    HIGHER_BETTER = "higher"
    LOWER_BETTER = "lower"


class MetricKind(enum.Enum):
    AD = "ad"
    ADD = "add"
    DAUC = "dauc"
    IAUC = "iauc"
    DC = "dc"
    IC = "ic"
    DCNC = "dcnc"
    ICNC = "icnc"

    @property
    def direction(self) -> Direction:
        if self in (MetricKind.AD, MetricKind.DAUC):
            return Direction.LOWER_BETTER
        return Direction.HIGHER_BETTER


ALL_METRICS = list(MetricKind)


@dataclass(frozen=True)
class Curve:
    """Confidence against masked fraction, H'W' + 1 points."""

    fractions: np.ndarray   # strictly increasing, [0, 1]
    confidences: np.ndarray  # in [0, 1]
    patch_order: list[tuple[int, int]]  # cell changed at each step >= 1
    patch_values: np.ndarray  # saliency of those cells

    def __post_init__(self):
        if len(self.fractions) != len(self.confidences):
            raise ValueError("axis and confidences must align")
        if np.any(np.diff(self.fractions) <= 0):
            raise ValueError("fraction axis must be strictly increasing")
        if len(self.confidences) and (self.confidences.min() < -1e-9
                                      or self.confidences.max() > 1 + 1e-9):
            raise ValueError("confidences must lie in [0, 1]")


class Correlation(NamedTuple):
    value: float
    degenerate: bool  # either input vector was constant; value forced to 0


def _confidence(oracle: ScoringOracle, image: np.ndarray, class_index: int) -> float:
    return float(oracle.score(image)[class_index])


def average_drop(oracle: ScoringOracle, image: np.ndarray, s: np.ndarray,
                 kind: MetricKind, class_index: int) -> float:
    """AD: clamped relative confidence drop under the saliency mask.

    ADD uses the reversed mask and is not clamped, so negative values can
    signal a mask that helps the model.
    """
    if kind not in (MetricKind.AD, MetricKind.ADD):
        raise ValueError(f"{kind} is not a drop metric")
    fp_kind = FpKind.AD_INSPIRED if kind is MetricKind.AD else FpKind.ADD_INSPIRED
    base, masked = oracle.score_batch(
        [image, apply_saliency_mask(image, s, fp_kind)]
    )[:, class_index]
    if base == 0.0:
        raise ZeroConfidence("ground-truth confidence is zero")
    drop = (float(base) - float(masked)) / float(base)
    return max(0.0, drop) if kind is MetricKind.AD else drop


def _patch_sequence(s: np.ndarray, grid: PatchGrid, order: str) -> list[tuple[int, int]]:
    ranked = top_k_positions(s, grid.cell_count)
    if order == "most":
        return ranked
    if order == "least":
        return ranked[::-1]
    raise ValueError(f"unknown order {order!r}")


def _apply_cells(image: np.ndarray, base: np.ndarray, grid: PatchGrid,
                 cells: Sequence[tuple[int, int]]) -> np.ndarray:
    """Replace the given grid cells of ``image`` with pixels from ``base``."""
    out = image.copy()
    for (ci, cj) in cells:
        out[ci * grid.patch_h:(ci + 1) * grid.patch_h,
            cj * grid.patch_w:(cj + 1) * grid.patch_w, :] = \
            base[ci * grid.patch_h:(ci + 1) * grid.patch_h,
                 cj * grid.patch_w:(cj + 1) * grid.patch_w, :]
    return out


def _step_curve(oracle: ScoringOracle, image: np.ndarray, s: np.ndarray,
                grid: PatchGrid, cumulative: bool, class_index: int,
                start: np.ndarray, fill: np.ndarray, order: str) -> Curve:
    seq = _patch_sequence(s, grid, order)
    steps = [start]
    for t in range(1, grid.cell_count + 1):
        cells = seq[:t] if cumulative else seq[t - 1:t]
        steps.append(_apply_cells(start, fill, grid, cells))
    conf = oracle.score_batch(steps)[:, class_index].astype(np.float64)
    fractions = np.arange(grid.cell_count + 1, dtype=np.float64) / grid.cell_count
    values = np.array([s[ci, cj] for (ci, cj) in seq], dtype=np.float64)
    return Curve(fractions, conf, seq, values)


def deletion_curve(oracle: ScoringOracle, image: np.ndarray, s: np.ndarray,
                   grid: PatchGrid, cumulative: bool, class_index: int,
                   order: str = "most") -> Curve:
    """Step t blacks out patch t (or the top-t patches when cumulative)."""
    image = np.asarray(image, dtype=np.float64)
    return _step_curve(oracle, image, s, grid, cumulative, class_index,
                       start=image, fill=np.zeros_like(image), order=order)


def insertion_curve(oracle: ScoringOracle, image: np.ndarray, s: np.ndarray,
                    grid: PatchGrid, cumulative: bool, class_index: int,
                    blur: BlurSpec | None = None, order: str = "most") -> Curve:
    """Step t restores patch t (or the top-t patches) over a blurred base."""
    image = np.asarray(image, dtype=np.float64)
    blur = blur or BlurSpec.for_size(max(image.shape[0], image.shape[1]))
    blurred = gaussian_blur(image, blur.sigma, blur.kernel)
    return _step_curve(oracle, blurred, s, grid, cumulative, class_index,
                       start=blurred, fill=image, order=order)


def auc(curve: Curve) -> float:
    """Trapezoidal area under the confidence curve over the fraction axis."""
    if len(curve.fractions) < 2:
        raise TooFewSteps("AUC needs at least two curve points")
    integrate = getattr(np, "trapezoid", None) or np.trapz
    return float(integrate(curve.confidences, curve.fractions))


def correlation_score(curve: Curve, kind: MetricKind) -> Correlation:
    """Pearson correlation of per-step confidence changes vs patch saliency.

    Cumulative kinds difference consecutive confidences; non-cumulative
    kinds difference against the unperturbed start. Deletion kinds measure
    drops, insertion kinds gains, so faithful maps correlate positively
    in all four variants.
    """
    conf = curve.confidences
    if len(conf) < 3:  # need >= 2 perturbation steps past the start point
        raise TooFewSteps("correlation needs at least two perturbation steps")
    if kind is MetricKind.DC:
        deltas = conf[:-1] - conf[1:]
    elif kind is MetricKind.IC:
        deltas = conf[1:] - conf[:-1]
    elif kind is MetricKind.DCNC:
        deltas = conf[0] - conf[1:]
    elif kind is MetricKind.ICNC:
        deltas = conf[1:] - conf[0]
    else:
        raise ValueError(f"{kind} is not a correlation metric")
    return pearson(deltas, curve.patch_values)


def pearson(a: np.ndarray, b: np.ndarray) -> Correlation:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) != len(b) or len(a) < 2:
        raise TooFewSteps("correlation needs two aligned vectors of length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    na = float(np.sqrt((da * da).sum()))
    nb = float(np.sqrt((db * db).sum()))
    if na == 0.0 or nb == 0.0:
        return Correlation(0.0, True)
    r = float((da * db).sum() / (na * nb))
    return Correlation(min(1.0, max(-1.0, r)), False)


# --- score matrices ---------------------------------------------------------

@dataclass
class ScoreMatrix:
    kind: MetricKind
    values: np.ndarray          # [N, M] float64
    method_labels: list[str]
    image_ids: list[str]
    degenerate_cells: int = 0   # constant-vector correlations forced to 0

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("score matrix must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("score matrix must be finite")


MapProvider = Callable[[int, np.ndarray], np.ndarray]
"""Maps (image index, image) to the method's saliency map."""


@dataclass
class MetricScores:
    values: dict[MetricKind, float] = field(default_factory=dict)
    degenerate: int = 0


def score_all_metrics(oracle: ScoringOracle, image: np.ndarray, s: np.ndarray,
                      grid: PatchGrid, class_index: int,
                      kinds: Sequence[MetricKind] = ALL_METRICS,
                      blur: BlurSpec | None = None,
                      order: str = "most") -> MetricScores:
    """All requested metrics for one (image, map) pair, sharing curves."""
    out = MetricScores()
    wanted = set(kinds)
    if wanted & {MetricKind.AD}:
        out.values[MetricKind.AD] = average_drop(oracle, image, s, MetricKind.AD, class_index)
    if wanted & {MetricKind.ADD}:
        out.values[MetricKind.ADD] = average_drop(oracle, image, s, MetricKind.ADD, class_index)
    if wanted & {MetricKind.DAUC, MetricKind.DC}:
        curve = deletion_curve(oracle, image, s, grid, True, class_index, order)
        if MetricKind.DAUC in wanted:
            out.values[MetricKind.DAUC] = auc(curve)
        if MetricKind.DC in wanted:
            r = correlation_score(curve, MetricKind.DC)
            out.values[MetricKind.DC] = r.value
            out.degenerate += int(r.degenerate)
    if wanted & {MetricKind.IAUC, MetricKind.IC}:
        curve = insertion_curve(oracle, image, s, grid, True, class_index, blur, order)
        if MetricKind.IAUC in wanted:
            out.values[MetricKind.IAUC] = auc(curve)
        if MetricKind.IC in wanted:
            r = correlation_score(curve, MetricKind.IC)
            out.values[MetricKind.IC] = r.value
            out.degenerate += int(r.degenerate)
    if MetricKind.DCNC in wanted:
        curve = deletion_curve(oracle, image, s, grid, False, class_index, order)
        r = correlation_score(curve, MetricKind.DCNC)
        out.values[MetricKind.DCNC] = r.value
        out.degenerate += int(r.degenerate)
    if MetricKind.ICNC in wanted:
        curve = insertion_curve(oracle, image, s, grid, False, class_index, blur, order)
        r = correlation_score(curve, MetricKind.ICNC)
        out.values[MetricKind.ICNC] = r.value
        out.degenerate += int(r.degenerate)
    return out


def evaluate_matrices(oracle: ScoringOracle, images: Sequence[np.ndarray],
                      labels: Sequence[int],
                      methods: Sequence[tuple[str, Sequence[np.ndarray]]],
                      grid: PatchGrid,
                      kinds: Sequence[MetricKind] = ALL_METRICS,
                      blur: BlurSpec | None = None,
                      image_ids: Sequence[str] | None = None,
                      order: str = "most",
                      threads: int = 1) -> dict[MetricKind, ScoreMatrix]:
    """Score every (image, method) cell for every metric in one pass.

    Cells are independent; with threads > 1 they are computed in a pool
    and written back by index, so results do not depend on scheduling.
    """
    n = len(images)
    ids = list(image_ids) if image_ids is not None else [str(i) for i in range(n)]
    method_labels = [label for label, _ in methods]
    mats = {k: np.zeros((n, len(methods)), dtype=np.float64) for k in kinds}

    def one_cell(i: int, m: int) -> MetricScores:
        label, maps = methods[m]
        try:
            return score_all_metrics(oracle, images[i], np.asarray(maps[i]),
                                     grid, int(labels[i]), kinds, blur, order)
        except Exception as exc:
            raise type(exc)(f"image {ids[i]}, method {label}: {exc}") from exc

    cells = [(i, m) for i in range(n) for m in range(len(methods))]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: one_cell(*c), cells))
    else:
        results = [one_cell(*c) for c in cells]
    for (i, m), scores in zip(cells, results):
        for kind, value in scores.values.items():
            mats[kind][i, m] = value
    total_degenerate = sum(s.degenerate for s in results)
    correlation_kinds = {MetricKind.DC, MetricKind.IC, MetricKind.DCNC, MetricKind.ICNC}
    return {
        k: ScoreMatrix(k, mats[k], method_labels, ids,
                       total_degenerate if k in correlation_kinds else 0)
        for k in kinds
    }


def evaluate_matrix(oracle: ScoringOracle, images: Sequence[np.ndarray],
                    labels: Sequence[int],
                    methods: Sequence[tuple[str, Sequence[np.ndarray]]],
                    kind: MetricKind, grid: PatchGrid,
                    blur: BlurSpec | None = None,
                    image_ids: Sequence[str] | None = None,
                    order: str = "most") -> ScoreMatrix:
    return evaluate_matrices(oracle, images, labels, methods, grid, [kind],
                             blur, image_ids, order)[kind]


def save_matrix_csv(matrix: ScoreMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "method", "metric", "score"])
        for i, image_id in enumerate(matrix.image_ids):
            for m, label in enumerate(matrix.method_labels):
                writer.writerow([image_id, label, matrix.kind.value,
                                 repr(float(matrix.values[i, m]))])


def load_matrix_csv(path: str | Path) -> ScoreMatrix:
    rows: list[tuple[str, str, str, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["image_id", "method", "metric", "score"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for r in reader:
            rows.append((r[0], r[1], r[2], float(r[3])))
    kinds = {r[2] for r in rows}
    if len(kinds) != 1:
        raise ValueError(f"{path}: expected one metric, got {sorted(kinds)}")
    image_ids = list(dict.fromkeys(r[0] for r in rows))
    methods = list(dict.fromkeys(r[1] for r in rows))
    values = np.zeros((len(image_ids), len(methods)), dtype=np.float64)
    iidx = {v: i for i, v in enumerate(image_ids)}
    midx = {v: i for i, v in enumerate(methods)}
    for image_id, method, _, score in rows:
        values[iidx[image_id], midx[method]] = score
    return ScoreMatrix(MetricKind(kinds.pop()), values, methods, image_ids)
