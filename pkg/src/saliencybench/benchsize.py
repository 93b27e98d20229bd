"""Minimum benchmark size under the multinomial win-count model.

Given per-method first-place counts over N images, the solver asks how few
images N' keep the same top method with probability at least 1 - risk,
modelling the reduced benchmark's counts as multinomial draws with the
observed win frequencies. Outcome tuples can be grid-sampled (keep only
tuples whose counts are multiples of 1/p_samp) with the success mass
renormalized over the sampled tuples.

The multinomial pmf uses the standard factorial coefficient
N'! / (n_1! ... n_M!), evaluated in log space via log-gamma so counts in
the hundreds cannot overflow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import NoSolution, TiedBest


@dataclass(frozen=True)
class WinCounts:
    """First-place counts n_i per method; N = sum(n_i)."""

    counts: tuple[int, ...]

    def __post_init__(self):
        if not self.counts:
            raise ValueError("need at least one method")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be nonnegative")
        if self.total == 0:
            raise ValueError("total count must be positive")

    @classmethod
    def from_sequence(cls, counts: Sequence[int]) -> "WinCounts":
        return cls(tuple(int(c) for c in counts))

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.float64) / self.total


def identify_best(counts: WinCounts) -> int:
    """Index of the strict argmax; a tie is an error, not a coin flip."""
    best = max(counts.counts)
    winners = [i for i, c in enumerate(counts.counts) if c == best]
    if len(winners) != 1:
        raise TiedBest(f"methods {winners} tie at {best} wins")
    return winners[0]


def _sampling_step(p_samp: float) -> int:
    if not 0.0 < p_samp <= 1.0:
        raise ValueError(f"p_samp must be in (0, 1], got {p_samp}")
    step = 1.0 / p_samp
    if abs(step - round(step)) > 1e-9:
        raise ValueError(f"1/p_samp must be an integer, got {step}")
    return int(round(step))


def enumerate_sampled_outcomes(m: int, n_prime: int, p_samp: float = 1.0) -> list[tuple[int, ...]]:
    """All count tuples summing to n_prime on the sampling grid.

    With p_samp < 1 only tuples whose every coordinate is a multiple of
    1/p_samp survive; if the step does not divide n_prime the list is
    empty.
    """
    if m < 2 or n_prime < 1:
        raise ValueError("need m >= 2 and n_prime >= 1")
    step = _sampling_step(p_samp)
    if n_prime % step:
        return []
    quotas = n_prime // step

    def compositions(parts: int, total: int) -> Iterator[tuple[int, ...]]:
        if parts == 1:
            yield (total,)
            return
        for head in range(total + 1):
            for tail in compositions(parts - 1, total - head):
                yield (head,) + tail

    return [tuple(step * q for q in combo) for combo in compositions(m, quotas)]


_OUTCOME_CACHE: dict[tuple[int, int, int], np.ndarray] = {}
_OUTCOME_CACHE_LIMIT = 256


def _outcome_array(m: int, n_prime: int, p_samp: float) -> np.ndarray:
    """Enumerated outcomes as an int array, cached by (m, n_prime, step)."""
    key = (m, n_prime, _sampling_step(p_samp))
    if key not in _OUTCOME_CACHE:
        if len(_OUTCOME_CACHE) >= _OUTCOME_CACHE_LIMIT:
            _OUTCOME_CACHE.clear()
        outcomes = enumerate_sampled_outcomes(m, n_prime, p_samp)
        _OUTCOME_CACHE[key] = np.array(outcomes, dtype=np.int64).reshape(
            len(outcomes), m)
    return _OUTCOME_CACHE[key]


def multinomial_pmf(counts: Sequence[int], n_prime: int, probs: Sequence[float]) -> float:
    """Multinomial probability of one outcome tuple; zero off the simplex."""
    counts = np.asarray(counts, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if counts.sum() != n_prime:
        return 0.0
    return float(np.exp(_log_pmf(counts[None, :], n_prime, probs))[0])


def _log_pmf(tuples: np.ndarray, n_prime: int, probs: np.ndarray) -> np.ndarray:
    coeff = gammaln(n_prime + 1) - gammaln(tuples + 1.0).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(tuples > 0, tuples * np.log(np.where(probs > 0, probs, 1.0)), 0.0)
        impossible = (tuples > 0) & (probs[None, :] == 0.0)
    out = coeff + logp.sum(axis=1)
    out[impossible.any(axis=1)] = -np.inf
    return out


def success_probability(counts: WinCounts, n_prime: int, p_samp: float = 1.0) -> float:
    """P that the full-set winner stays the strict winner at size n_prime.

    Ties count as losses. With grid sampling the win mass is normalized by
    the total mass of the sampled tuples.
    """
    best = identify_best(counts)
    tuples = _outcome_array(len(counts.counts), n_prime, p_samp)
    if not len(tuples):
        raise ValueError(
            f"no sampled outcomes: 1/p_samp does not divide n_prime={n_prime}")
    logp = _log_pmf(tuples, n_prime, counts.frequencies)
    mass = np.exp(logp)
    others = np.delete(tuples, best, axis=1)
    wins = tuples[:, best] > others.max(axis=1)
    denom = float(mass.sum())
    if denom == 0.0:
        raise ValueError("sampled outcome mass is zero")
    return float(mass[wins].sum() / denom)


@dataclass(frozen=True)
class BenchSizeResult:
    n_star: int
    ratio: float          # n_star / N
    alpha_risk: float
    p_samp: float
    mode: str             # "binary" | "scan" | "binary:fallback-scan"
    evaluated: list[tuple[int, float]]  # (n_prime, P) in evaluation order
    premise_violated: bool = False  # halving search premise failed, scan decided

    def curve(self) -> list[tuple[int, float]]:
        return sorted(set(self.evaluated))

    def to_json(self) -> str:
        return json.dumps({
            "n_star": self.n_star,
            "ratio": self.ratio,
            "alpha_risk": self.alpha_risk,
            "p_samp": self.p_samp,
            "mode": self.mode,
            "premise_violated": self.premise_violated,
            "evaluated": [[n, p] for n, p in self.evaluated],
        }, indent=1)

    def save_curve_csv(self, path: str | Path) -> None:
        lines = ["n_prime,p_success"]
        lines += [f"{n},{repr(float(p))}" for n, p in self.curve()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def min_benchmark_size(counts: WinCounts, alpha_risk: float = 0.05,
                       p_samp: float = 0.5, mode: str = "binary") -> BenchSizeResult:
    """Smallest benchmark size whose success probability reaches 1 - risk.

    Candidates are the multiples of 1/p_samp up to N. Scan mode walks them
    ascending and is minimal by construction. Binary mode runs the halving
    search, which presumes P is nondecreasing in N'; that premise provably
    fails at small N' under the strict-win rule (ties lose, so e.g.
    P_2 = P_1 ** 2 < P_1), so the halving result is verified against the
    candidates below it and the search aborts into a scan whenever the
    premise turns out violated. Both modes therefore always return the
    same N*; binary additionally reports whether the premise held.
    """
    if mode not in ("binary", "scan"):
        raise ValueError(f"mode must be binary or scan, got {mode!r}")
    identify_best(counts)  # raises TiedBest before any enumeration work
    n = counts.total
    step = _sampling_step(p_samp)
    candidates = list(range(step, n + 1, step))
    if not candidates:
        raise NoSolution(f"N={n} below the sampling step {step}")
    target = 1.0 - alpha_risk
    evaluated: list[tuple[int, float]] = []
    cache: dict[int, float] = {}

    def prob(n_prime: int) -> float:
        if n_prime not in cache:
            cache[n_prime] = success_probability(counts, n_prime, p_samp)
            evaluated.append((n_prime, cache[n_prime]))
        return cache[n_prime]

    def first_satisfier(upper: int | None) -> int | None:
        for cand in candidates:
            if upper is not None and cand >= upper:
                return None
            if prob(cand) >= target:
                return cand
        return None

    if mode == "scan":
        found = first_satisfier(None)
        if found is None:
            raise NoSolution(
                f"P_N' stays below {target} on every candidate; "
                f"last P = {prob(candidates[-1]):.6f} at N' = {candidates[-1]}")
        return BenchSizeResult(found, found / n, alpha_risk, p_samp, "scan",
                               evaluated)

    halving_result: int | None = None
    if prob(candidates[-1]) >= target:
        lo, hi = 0, len(candidates) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if prob(candidates[mid]) >= target:
                hi = mid
            else:
                lo = mid + 1
        halving_result = candidates[lo]
    earlier = first_satisfier(halving_result)
    if earlier is not None:
        return BenchSizeResult(earlier, earlier / n, alpha_risk, p_samp,
                               "binary:fallback-scan", evaluated,
                               premise_violated=True)
    if halving_result is None:
        raise NoSolution(
            f"P_N' stays below {target} on every candidate; "
            f"P = {prob(candidates[-1]):.6f} at N' = {candidates[-1]}")
    return BenchSizeResult(halving_result, halving_result / n, alpha_risk,
                           p_samp, "binary", evaluated)
