"""Rankings, ordinal agreement, bootstrap and significance testing.

Krippendorff's alpha treats the M methods as units and the N images as
raters: each image rates every method with a rank, and alpha = 1 - Do/De
measures how far the observed disagreement Do between raters falls below
the disagreement De expected by chance. The ordinal difference between
two rank categories c <= k is

    delta2(c, k) = (sum_{g=c..k} n_g - (n_c + n_k) / 2) ** 2

with n_g the marginal frequency of category g in the coincidence matrix.

The test statistics (Shapiro-Wilk via the Royston AS R94 approximation,
mean-centered Levene, pooled and Welch t, Mann-Whitney with an exact small
sample path) are computed here; only the normal/beta special functions
come from scipy.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import betainc, ndtr, ndtri

from .errors import ConstantSample, DegenerateData, SampleTooSmall
from .metrics import Direction, MetricKind, ScoreMatrix
from .rng import Rng


@dataclass
class RankMatrix:
    """Per-image rankings of methods; rank 1 is best, ties share averages."""

    values: np.ndarray  # [N, M] float64, each row sums to M(M+1)/2
    kind: MetricKind | None = None
    method_labels: list[str] = field(default_factory=list)
    image_ids: list[str] = field(default_factory=list)


def rankdata_average(v: np.ndarray) -> np.ndarray:
    """Ranks 1..n ascending, equal values get the average of their positions."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def rank_rows(scores: ScoreMatrix) -> RankMatrix:
    """Convert each score row into a ranking honoring the metric direction."""
    values = scores.values
    if not np.all(np.isfinite(values)):
        raise ValueError("scores must be finite")
    key = -values if scores.kind.direction is Direction.HIGHER_BETTER else values
    ranks = np.vstack([rankdata_average(row) for row in key])
    return RankMatrix(ranks, scores.kind, list(scores.method_labels),
                      list(scores.image_ids))


def krippendorff_alpha_ordinal(ranks: RankMatrix | np.ndarray) -> float:
    """Alpha over the coincidence matrix with the ordinal difference.

    Rows are raters (images), columns are units (methods); every cell is
    observed. Raises DegenerateData when expected disagreement is zero,
    i.e. the whole matrix holds a single value.
    """
    data = ranks.values if isinstance(ranks, RankMatrix) else np.asarray(ranks, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] < 2:
        raise SampleTooSmall("need at least 2 raters and 2 units")
    if not np.all(np.isfinite(data)):
        raise ValueError("rank matrix must be finite")
    n_raters, n_units = data.shape
    cats, inverse = np.unique(data, return_inverse=True)
    v = len(cats)
    if v == 1:
        raise DegenerateData("all rank values identical; expected disagreement is zero")
    codes = inverse.reshape(n_raters, n_units)
    # per-unit category counts: A[u, c] = how many raters gave unit u category c
    a = np.zeros((n_units, v), dtype=np.float64)
    for u in range(n_units):
        a[u] = np.bincount(codes[:, u], minlength=v)
    marginals = a.sum(axis=0)
    coincidence = (a.T @ a - np.diag(marginals)) / (n_raters - 1)
    total = marginals.sum()

    cum = np.cumsum(marginals)
    # sum_{g=c..k} n_g for c <= k, symmetrized
    upper = cum[None, :] - cum[:, None] + marginals[:, None]
    between = np.where(np.arange(v)[:, None] <= np.arange(v)[None, :], upper, upper.T)
    delta2 = (between - (marginals[:, None] + marginals[None, :]) / 2.0) ** 2

    d_obs = float((coincidence * delta2).sum())
    d_exp = float((np.outer(marginals, marginals) * delta2).sum())
    if d_exp == 0.0:
        raise DegenerateData("expected disagreement is zero")
    return 1.0 - (total - 1.0) * d_obs / d_exp


@dataclass
class AlphaReport:
    alpha: float
    bootstrap: np.ndarray
    mean: float
    ci_low: float
    ci_high: float
    requested: int
    excluded_degenerate: int
    # filled by compare_settings
    delta_vs_baseline: float | None = None
    p_value: float | None = None
    test_name: str | None = None
    significant: bool | None = None

    def to_json(self) -> str:
        payload = {
            "alpha": self.alpha,
            "mean": self.mean,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "requested": self.requested,
            "excluded_degenerate": self.excluded_degenerate,
            "delta_vs_baseline": self.delta_vs_baseline,
            "p_value": self.p_value,
            "test_name": self.test_name,
            "significant": self.significant,
            "bootstrap": [float(x) for x in self.bootstrap],
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "AlphaReport":
        d = json.loads(text)
        return cls(alpha=d["alpha"], bootstrap=np.array(d["bootstrap"], dtype=np.float64),
                   mean=d["mean"], ci_low=d["ci_low"], ci_high=d["ci_high"],
                   requested=d["requested"], excluded_degenerate=d["excluded_degenerate"],
                   delta_vs_baseline=d.get("delta_vs_baseline"),
                   p_value=d.get("p_value"), test_name=d.get("test_name"),
                   significant=d.get("significant"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AlphaReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def bootstrap_alpha(ranks: RankMatrix, b: int, rng: Rng) -> tuple[np.ndarray, int]:
    """B alphas over row resamples; degenerate resamples excluded, counted.

    Iteration i draws from rng.child(i), so the sample set is independent
    of evaluation order and can be computed in parallel.
    """
    data = ranks.values
    n = data.shape[0]
    if n < 2:
        raise SampleTooSmall("need at least 2 rows to resample")
    values = []
    excluded = 0
    for i in range(b):
        child = rng.child(i)
        idx = [child.next_below(n) for _ in range(n)]
        try:
            values.append(krippendorff_alpha_ordinal(
                RankMatrix(data[idx], ranks.kind)))
        except DegenerateData:
            excluded += 1
    return np.array(values, dtype=np.float64), excluded


def make_alpha_report(ranks: RankMatrix, b: int, rng: Rng) -> AlphaReport:
    point = krippendorff_alpha_ordinal(ranks)
    sample, excluded = bootstrap_alpha(ranks, b, rng)
    if len(sample) == 0:
        raise DegenerateData("every bootstrap resample was degenerate")
    lo, hi = np.percentile(sample, [2.5, 97.5])
    return AlphaReport(alpha=point, bootstrap=sample, mean=float(sample.mean()),
                       ci_low=float(lo), ci_high=float(hi), requested=b,
                       excluded_degenerate=excluded)


# --- hypothesis tests --------------------------------------------------------

_SW_C1 = (-2.706056, 4.434685, -2.071190, -0.147981, 0.221157)
_SW_C2 = (-3.582633, 5.682633, -1.752461, -0.293762, 0.042981)


def shapiro_wilk(sample) -> tuple[float, float]:
    """Shapiro-Wilk W and upper-tail p (Royston AS R94 approximation)."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = len(x)
    if n < 3:
        raise SampleTooSmall(f"Shapiro-Wilk needs n >= 3, got {n}")
    if n > 5000:
        raise SampleTooSmall(f"approximation valid up to n = 5000, got {n}")
    if x[0] == x[-1]:
        raise ConstantSample("zero-variance sample")

    m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    mss = float((m * m).sum())
    c = m / math.sqrt(mss)
    u = 1.0 / math.sqrt(n)
    a = np.empty(n, dtype=np.float64)
    if n == 3:
        a[:] = (-math.sqrt(0.5), 0.0, math.sqrt(0.5))
    elif n <= 5:
        a[-1] = np.polyval(_SW_C1 + (c[-1],), u)
        a[0] = -a[-1]
        phi = (mss - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a[-1] ** 2)
        a[1:-1] = m[1:-1] / math.sqrt(phi)
    else:
        a[-1] = np.polyval(_SW_C1 + (c[-1],), u)
        a[-2] = np.polyval(_SW_C2 + (c[-2],), u)
        a[0], a[1] = -a[-1], -a[-2]
        phi = (mss - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / \
              (1.0 - 2.0 * a[-1] ** 2 - 2.0 * a[-2] ** 2)
        a[2:-2] = m[2:-2] / math.sqrt(phi)

    w = float((a @ x) ** 2 / ((x - x.mean()) ** 2).sum())
    w = min(w, 1.0)

    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return w, float(min(max(p, 0.0), 1.0))
    if n <= 11:
        g = -2.273 + 0.459 * n
        mu = 0.5440 - 0.39978 * n + 0.025054 * n**2 - 0.0006714 * n**3
        sigma = math.exp(1.3822 - 0.77857 * n + 0.062767 * n**2 - 0.0020322 * n**3)
        if 1.0 - w <= 0.0 or g - math.log(1.0 - w) <= 0.0:
            return w, 1.0
        z = (-math.log(g - math.log(1.0 - w)) - mu) / sigma
    else:
        ln_n = math.log(n)
        mu = 0.0038915 * ln_n**3 - 0.083751 * ln_n**2 - 0.31082 * ln_n - 1.5861
        sigma = math.exp(0.0030302 * ln_n**2 - 0.082676 * ln_n - 0.4803)
        if 1.0 - w <= 0.0:
            return w, 1.0
        z = (math.log(1.0 - w) - mu) / sigma
    return w, float(1.0 - ndtr(z))


def levene(sample_a, sample_b) -> tuple[float, float]:
    """Mean-centered Levene statistic with an F(k-1, N-k) p-value."""
    groups = [np.asarray(sample_a, dtype=np.float64),
              np.asarray(sample_b, dtype=np.float64)]
    if any(len(g) < 2 for g in groups):
        raise SampleTooSmall("Levene needs n >= 2 per group")
    z = [np.abs(g - g.mean()) for g in groups]
    n_total = sum(len(g) for g in groups)
    k = len(groups)
    grand = np.concatenate(z).mean()
    numer = sum(len(zi) * (zi.mean() - grand) ** 2 for zi in z)
    denom = sum(((zi - zi.mean()) ** 2).sum() for zi in z)
    if denom == 0.0:
        return 0.0, 1.0
    stat = (n_total - k) / (k - 1) * numer / denom
    return float(stat), _f_sf(stat, k - 1, n_total - k)


def _f_sf(x: float, dfn: int, dfd: int) -> float:
    if x <= 0.0:
        return 1.0
    return float(betainc(dfd / 2.0, dfn / 2.0, dfd / (dfd + dfn * x)))


def _t_sf_two_sided(t: float, df: float) -> float:
    if df <= 0:
        return 1.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def t_test(sample_a, sample_b, equal_variance: bool = True) -> tuple[float, float]:
    """Two-sided Student (pooled) or Welch t-test."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise SampleTooSmall("t-test needs n >= 2 per sample")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    diff = a.mean() - b.mean()
    if equal_variance:
        sp2 = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
        denom = math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
        df = float(na + nb - 2)
    else:
        denom = math.sqrt(va / na + vb / nb)
        if va == 0.0 and vb == 0.0:
            df = float(na + nb - 2)
        else:
            df = (va / na + vb / nb) ** 2 / (
                (va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    if denom == 0.0:
        return (0.0, 1.0) if diff == 0.0 else (math.copysign(math.inf, diff), 0.0)
    t = float(diff / denom)
    return t, _t_sf_two_sided(abs(t), df)


def _u_statistic(a: np.ndarray, b: np.ndarray) -> float:
    gt = (a[:, None] > b[None, :]).sum()
    eq = (a[:, None] == b[None, :]).sum()
    return float(gt) + 0.5 * float(eq)


def mann_whitney_u(sample_a, sample_b) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test.

    Small samples (combined n <= 16) get the exact permutation
    distribution; larger ones the normal approximation with tie correction
    and continuity correction.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 1 or nb < 1:
        raise SampleTooSmall("Mann-Whitney needs n >= 1 per sample")
    u = _u_statistic(a, b)
    mu = na * nb / 2.0
    pooled = np.concatenate([a, b])
    if na + nb <= 16:
        observed = abs(u - mu)
        hits = 0
        splits = 0
        for combo in itertools.combinations(range(na + nb), na):
            mask = np.zeros(na + nb, dtype=bool)
            mask[list(combo)] = True
            u_perm = _u_statistic(pooled[mask], pooled[~mask])
            # tolerance for half-rank arithmetic on floats
            if abs(u_perm - mu) >= observed - 1e-12:
                hits += 1
            splits += 1
        return u, hits / splits
    ranks = rankdata_average(pooled)
    _, tie_counts = np.unique(pooled, return_counts=True)
    n = na + nb
    tie_term = float(((tie_counts**3 - tie_counts)).sum()) / (n * (n - 1))
    sigma2 = na * nb / 12.0 * ((n + 1) - tie_term)
    if sigma2 <= 0.0:
        return u, 1.0
    z = u - mu
    z -= math.copysign(0.5, z) if z != 0.0 else 0.0
    z /= math.sqrt(sigma2)
    return u, float(min(1.0, 2.0 * ndtr(-abs(z))))


@dataclass(frozen=True)
class ComparisonResult:
    delta: float          # mean(candidate) - mean(baseline)
    p_value: float
    test_name: str        # "mann-whitney" | "t-pooled" | "t-welch"
    significant: bool
    baseline_mean: float
    candidate_mean: float

    def render(self) -> str:
        """Table cell: variation with (baseline -> candidate), values x100."""
        return (f"{self.delta * 100:.1f} "
                f"({self.baseline_mean * 100:.1f} → {self.candidate_mean * 100:.1f})")


def compare_settings(baseline: AlphaReport, candidate: AlphaReport,
                     threshold: float = 0.05) -> ComparisonResult:
    """Normality-gated comparison of two bootstrap alpha distributions.

    Shapiro on both; any non-normal sample routes to Mann-Whitney,
    otherwise Levene picks between the pooled and the Welch t-test.
    """
    a = np.asarray(baseline.bootstrap, dtype=np.float64)
    b = np.asarray(candidate.bootstrap, dtype=np.float64)

    def normal(sample: np.ndarray) -> bool:
        try:
            return shapiro_wilk(sample)[1] >= threshold
        except ConstantSample:
            return False

    if not (normal(a) and normal(b)):
        test_name = "mann-whitney"
        _, p = mann_whitney_u(b, a)
    else:
        _, p_var = levene(a, b)
        if p_var < threshold:
            test_name = "t-welch"
            _, p = t_test(b, a, equal_variance=False)
        else:
            test_name = "t-pooled"
            _, p = t_test(b, a, equal_variance=True)
    delta = float(b.mean() - a.mean())
    return ComparisonResult(delta=delta, p_value=float(p), test_name=test_name,
                            significant=bool(p < threshold),
                            baseline_mean=float(a.mean()),
                            candidate_mean=float(b.mean()))
