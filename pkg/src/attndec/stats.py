"""Null distributions and hypothesis tests used to judge correlations and accuracies."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .errors import InvalidArgument
from .linalg import TimeSeries

N_PHASE_SURROGATES = 500
N_CIRCULAR_SHIFTS = 100
ALPHA = 0.05
EXACT_WILCOXON_MAX_N = 20


@dataclass(frozen=True)
class NullDistribution:
    values: np.ndarray
    generator: str
    n_permutations: int
    seed: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("null distribution contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def replication(self) -> int:
        return self.values.size // max(self.n_permutations, 1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "value"])
            for i, v in enumerate(self.values):
                writer.writerow([i, repr(float(v))])

    @classmethod
    def pooled(cls, nulls: Sequence["NullDistribution"]) -> "NullDistribution":
        """Concatenate several nulls (e.g. across subjects or components)."""
        nulls = list(nulls)
        if not nulls:
            raise InvalidArgument("nothing to pool")
        return cls(
            np.concatenate([n.values for n in nulls]), nulls[0].generator,
            sum(n.n_permutations for n in nulls), nulls[0].seed,
        )


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def phase_scramble(series: TimeSeries, rng=None) -> TimeSeries:
    """Surrogate with the same magnitude spectrum and uniformly random phases.

    DC (and the Nyquist bin for even lengths) keep their real values; every
    channel gets its own phases.
    """
    rng = _rng(rng)
    x = series.data
    T = x.shape[0]
    if T < 4:
        raise InvalidArgument("phase scrambling needs at least 4 samples")
    F = np.fft.rfft(x, axis=0)
    n_bins = F.shape[0]
    last = n_bins - 1 if T % 2 == 0 else n_bins
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(last - 1, x.shape[1]))
    F[1:last] *= np.exp(1j * phases)
    return series.with_data(np.fft.irfft(F, n=T, axis=0))


def circular_shift(x: np.ndarray, rng=None, min_shift: int = 1) -> np.ndarray:
    """Rotate a sample matrix along time by a random nonzero offset."""
    rng = _rng(rng)
    T = x.shape[0]
    if T <= 2 * min_shift:
        raise InvalidArgument("series is too short for a circular shift")
    return np.roll(x, int(rng.integers(min_shift, T - min_shift + 1)), axis=0)


def null_corr(
    statistic: Callable,
    X,
    Y,
    n: int = N_PHASE_SURROGATES,
    rng=None,
    seed: int | None = None,
) -> NullDistribution:
    """Null of ``statistic(X, Y_surrogate)`` with the stimulus side phase-scrambled.

    ``Y`` may be a list of recordings; each is scrambled independently.
    ``statistic`` is typically a fitted model's evaluation (or a refit) and
    may return one value or several; all are kept.
    """
    if n < 1:
        raise InvalidArgument("need at least one surrogate")
    rng = _rng(rng if rng is not None else seed)
    ys = [Y] if isinstance(Y, TimeSeries) else list(Y)
    values = []
    for _ in range(n):
        surrogate = [phase_scramble(y, rng) for y in ys]
        values.append(np.atleast_1d(statistic(X, surrogate[0] if isinstance(Y, TimeSeries) else surrogate)))
    return NullDistribution(np.concatenate(values), "phase_scramble", n, seed)


def null_accuracy_circular(
    decode_fn: Callable[[list], float],
    trials: Sequence,
    n: int = N_CIRCULAR_SHIFTS,
    rng=None,
    seed: int | None = None,
) -> NullDistribution:
    """Accuracy null from circularly shifting the data-trial order.

    ``decode_fn`` receives the data trials rotated by a random nonzero
    number of positions and must pair them with the original (unshifted)
    stimulus trials.
    """
    trials = list(trials)
    if len(trials) < 2:
        raise InvalidArgument("circular-shift null needs at least 2 trials")
    rng = _rng(rng if rng is not None else seed)
    values = []
    for _ in range(n):
        s = int(rng.integers(1, len(trials)))
        values.append(float(decode_fn(trials[s:] + trials[:s])))
    return NullDistribution(np.asarray(values), "circular_shift", n, seed)


def p_value(observed: float, null: NullDistribution | Sequence[float], center: str = "median") -> float:
    """Two-tailed proportion of null values at least as extreme as ``observed``.

    Extremeness is the distance from the null median (``center="median"``)
    or from zero (``center="zero"``).
    """
    values = null.values if isinstance(null, NullDistribution) else np.asarray(null, dtype=float).ravel()
    if values.size == 0:
        raise InvalidArgument("null distribution is empty")
    if center == "median":
        c = float(np.median(values))
    elif center == "zero":
        c = 0.0
    else:
        raise InvalidArgument(f"unknown center {center!r}")
    return float(np.count_nonzero(np.abs(values - c) >= abs(observed - c)) / values.size)


def p_value_smoothed(observed: float, null, center: str = "median") -> float:
    """``(k + 1) / (n + 1)`` variant of :func:`p_value`, never exactly zero."""
    values = null.values if isinstance(null, NullDistribution) else np.asarray(null, dtype=float).ravel()
    k = round(p_value(observed, values, center) * values.size)
    return (k + 1) / (values.size + 1)


def significance_threshold(null: NullDistribution | Sequence[float], alpha: float = ALPHA) -> float:
    """Upper ``1 - alpha/2`` empirical quantile (linear interpolation)."""
    if not 0 < alpha < 1:
        raise InvalidArgument(f"alpha must lie in (0, 1), got {alpha}")
    values = null.values if isinstance(null, NullDistribution) else np.asarray(null, dtype=float).ravel()
    if values.size == 0:
        raise InvalidArgument("null distribution is empty")
    return float(np.quantile(values, 1 - alpha / 2, method="linear"))


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _signed_rank_inputs(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise InvalidArgument(f"paired samples differ in length: {a.size} vs {b.size}")
    d = a - b
    d = d[d != 0]
    if d.size == 0:
        raise InvalidArgument("all paired differences are zero")
    ranks = _midranks(np.abs(d))
    return d, ranks


def _exact_tails(d: np.ndarray, ranks: np.ndarray) -> tuple[float, float]:
    # doubled ranks are integers, so every sign pattern's statistic is exact
    r2 = np.rint(2 * ranks).astype(np.int64)
    w_obs = int(r2[d > 0].sum())
    sums = np.zeros(1, dtype=np.int64)
    for r in r2:
        sums = np.concatenate([sums, sums + r])
    total = float(sums.size)
    greater = np.count_nonzero(sums >= w_obs) / total
    less = np.count_nonzero(sums <= w_obs) / total
    return less, greater


def _normal_tails(d: np.ndarray, ranks: np.ndarray) -> tuple[float, float]:
    n = d.size
    w = ranks[d > 0].sum()
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (counts ** 3 - counts).sum() / 48.0
    sd = np.sqrt(var)
    greater = float(norm.sf((w - mean - 0.5) / sd))
    less = float(norm.cdf((w - mean + 0.5) / sd))
    return less, greater


def wilcoxon_signed_rank(a, b, alternative: str = "two-sided") -> float:
    """Wilcoxon signed-rank p-value for paired samples ``a`` and ``b``.

    Zero differences are dropped and tied magnitudes get mid-ranks. Up to 20
    nonzero pairs the null is enumerated over all sign assignments;
    beyond that a tie- and continuity-corrected normal approximation is used.
    ``alternative="greater"`` tests whether ``a`` tends to exceed ``b``.
    """
    if alternative not in ("less", "greater", "two-sided"):
        raise InvalidArgument(f"unknown alternative {alternative!r}")
    d, ranks = _signed_rank_inputs(a, b)
    if d.size <= EXACT_WILCOXON_MAX_N:
        less, greater = _exact_tails(d, ranks)
    else:
        less, greater = _normal_tails(d, ranks)
    if alternative == "less":
        return less
    if alternative == "greater":
        return greater
    return min(1.0, 2.0 * min(less, greater))


def bh_adjust(p: Sequence[float]) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in the input order."""
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 0:
        return p
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise InvalidArgument("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adjusted, 1.0)
    return out


def binomial_interval(n: int, p: float = 0.5, level: float = 0.95) -> tuple[float, float]:
    """Normal-approximation interval for a proportion observed over ``n`` trials."""
    if n < 1:
        raise InvalidArgument("need at least one trial")
    half = norm.ppf(0.5 + level / 2) * np.sqrt(p * (1 - p) / n)
    return p - half, p + half
