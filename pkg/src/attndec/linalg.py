"""Dense numeric primitives: signal container, lag embedding, covariances,
confound regression and a symmetric-definite generalized eigensolver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import InvalidArgument, NumericDegeneracy

DEFAULT_RIDGE = 1e-8
PINV_RCOND = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeSeries:
    """A T x D real sample matrix with a sample rate and channel labels.

    The data array is copied on construction and marked read-only, so
    instances can be shared freely between workers.
    """

    data: np.ndarray
    rate: float
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise InvalidArgument(f"time series must be 2-D, got shape {data.shape}")
        T, D = data.shape
        if T < 1 or D < 1:
            raise InvalidArgument(f"time series needs T >= 1 and D >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgument("time series contains non-finite samples")
        if not self.rate > 0:
            raise InvalidArgument(f"sample rate must be positive, got {self.rate}")
        labels = tuple(self.labels) if self.labels else tuple(f"ch{i}" for i in range(D))
        if len(labels) != D:
            raise InvalidArgument(f"{len(labels)} labels given for {D} channels")
        if len(set(labels)) != D:
            raise InvalidArgument("channel labels must be distinct")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.rate

    def with_data(self, data: np.ndarray, labels: Sequence[str] | None = None) -> "TimeSeries":
        return TimeSeries(data, self.rate, tuple(labels) if labels is not None else self.labels)

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.data[start:stop], self.rate, self.labels)

    def select(self, labels: Sequence[str]) -> "TimeSeries":
        index = {name: i for i, name in enumerate(self.labels)}
        missing = [name for name in labels if name not in index]
        if missing:
            raise InvalidArgument(f"channels not present: {missing}")
        cols = [index[name] for name in labels]
        return TimeSeries(self.data[:, cols], self.rate, tuple(labels))


@dataclass(frozen=True)
class LagSpec:
    """Sample offsets of the time-lagged copies of a view.

    Offset ``o`` places the channel values at ``t + o`` in embedded row ``t``.
    """

    offsets: tuple[int, ...]

    def __post_init__(self):
        offsets = tuple(int(o) for o in self.offsets)
        if not offsets:
            raise InvalidArgument("lag spec needs at least one offset")
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise InvalidArgument(f"lag offsets must be strictly increasing: {offsets}")
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def span(cls, first: int, last: int) -> "LagSpec":
        return cls(tuple(range(first, last + 1)))

    @classmethod
    def centered(cls, n: int) -> "LagSpec":
        """``n`` lags centered on the current sample (``n`` odd)."""
        half = n // 2
        return cls.span(-half, n - 1 - half)

    @classmethod
    def past(cls, n: int) -> "LagSpec":
        """The current sample and the ``n - 1`` preceding ones."""
        return cls.span(-(n - 1), 0)

    def __len__(self) -> int:
        return len(self.offsets)

    def width(self, n_channels: int) -> int:
        return n_channels * len(self.offsets)

    @property
    def max_reach(self) -> int:
        return max(abs(self.offsets[0]), abs(self.offsets[-1]))


@dataclass(frozen=True)
class CovarianceSet:
    """Auto- and cross-covariance blocks of two embedded views.

    ``xx`` and ``yy`` carry the ridge loading; ``xx_raw``/``yy_raw`` do not.
    """

    xx: np.ndarray
    yy: np.ndarray
    xy: np.ndarray
    xx_raw: np.ndarray
    yy_raw: np.ndarray
    sample_count: int
    ridge: float

    @property
    def yx(self) -> np.ndarray:
        return self.xy.T


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, TimeSeries):
        return x.data
    a = np.asarray(x, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def center(series: TimeSeries) -> TimeSeries:
    """Remove the per-channel sample mean."""
    data = series.data - series.data.mean(axis=0, keepdims=True)
    return series.with_data(data)


def center_columns(X: np.ndarray) -> np.ndarray:
    return X - X.mean(axis=0, keepdims=True)


def lag_embed(series, spec: LagSpec) -> np.ndarray:
    """Stack time-shifted copies of every channel, zero-filling the edges.

    The result has shape ``(T, D * len(spec))``; the block for offset ``o``
    occupies columns ``[j * D, (j + 1) * D)`` where ``j`` is its position in
    ``spec.offsets``.
    """
    if not isinstance(spec, LagSpec):
        spec = LagSpec(tuple(spec))
    X = _as_matrix(series)
    T, D = X.shape
    out = np.zeros((T, D * len(spec)))
    for j, o in enumerate(spec.offsets):
        block = out[:, j * D:(j + 1) * D]
        if o >= 0:
            if o < T:
                block[:T - o] = X[o:]
        elif -o < T:
            block[-o:] = X[:T + o]
    return out


def ridge_load(R: np.ndarray, ridge: float) -> np.ndarray:
    """Add ``ridge * mean(diag(R))`` to the diagonal."""
    if ridge == 0:
        return R.copy()
    n = R.shape[0]
    return R + ridge * (np.trace(R) / n) * np.eye(n)


def covariance(X, Y, ridge: float = DEFAULT_RIDGE) -> CovarianceSet:
    """Sample covariances ``X'X``, ``Y'Y``, ``X'Y`` scaled by ``1/(T-1)``.

    Inputs are taken as already centered. The auto-covariances receive a
    relative diagonal loading of ``ridge`` times their mean diagonal.
    """
    X = _as_matrix(X)
    Y = _as_matrix(Y)
    if X.shape[0] != Y.shape[0]:
        raise InvalidArgument(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")
    T = X.shape[0]
    if T < 2:
        raise InvalidArgument("covariance needs at least 2 samples")
    if ridge < 0:
        raise InvalidArgument(f"ridge must be nonnegative, got {ridge}")
    scale = 1.0 / (T - 1)
    xx = symmetrize(X.T @ X) * scale
    yy = symmetrize(Y.T @ Y) * scale
    xy = (X.T @ Y) * scale
    return CovarianceSet(
        xx=ridge_load(xx, ridge), yy=ridge_load(yy, ridge), xy=xy,
        xx_raw=xx, yy_raw=yy, sample_count=T, ridge=float(ridge),
    )


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def confound_coefficients(X, C) -> np.ndarray:
    """Least-squares coefficients ``B`` with ``X ~ C B`` (pseudo-inverse of C'C)."""
    X = _as_matrix(X)
    C = _as_matrix(C)
    if X.shape[0] != C.shape[0]:
        raise InvalidArgument(f"row counts differ: {X.shape[0]} vs {C.shape[0]}")
    G = symmetrize(C.T @ C)
    return np.linalg.pinv(G, rcond=PINV_RCOND, hermitian=True) @ (C.T @ X)


def regress_out(X, C) -> np.ndarray:
    """Residual of ``X`` after projecting out the column space of ``C``."""
    X = _as_matrix(X)
    C = _as_matrix(C)
    return X - C @ confound_coefficients(X, C)


def _whitener(B: np.ndarray, name: str) -> np.ndarray:
    s, U = np.linalg.eigh(symmetrize(B))
    tol = max(float(np.abs(s).max()), np.finfo(float).tiny) * B.shape[0] * np.finfo(float).eps
    if s[0] <= tol:
        raise NumericDegeneracy(
            f"matrix {name!r} is not positive definite (smallest eigenvalue {s[0]:.3e})"
        )
    return U / np.sqrt(s)


def sym_gevd(A: np.ndarray, B, K: int, name="B") -> tuple[np.ndarray, np.ndarray]:
    """Top-``K`` solutions of ``A v = lambda B v`` for symmetric ``A`` and SPD ``B``.

    ``B`` is whitened through its own eigendecomposition, the whitened
    problem is solved with a symmetric eigensolver and the vectors are
    mapped back, so the returned columns satisfy ``V' B V = I``.

    ``B`` may also be given as a sequence of diagonal blocks of a
    block-diagonal matrix; each block is then whitened separately and
    ``name`` may be a matching sequence of block names for error messages.

    Returns eigenvalues in descending order and the matching ``n x K``
    eigenvectors.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise InvalidArgument(f"A must be square, got {A.shape}")
    scale = max(float(np.abs(A).max()), 1.0)
    if np.abs(A - A.T).max() > 1e-10 * scale:
        raise InvalidArgument("A is not symmetric")
    if not 1 <= K <= n:
        raise InvalidArgument(f"K must lie in [1, {n}], got {K}")

    if isinstance(B, np.ndarray) and B.ndim == 2:
        if B.shape != (n, n):
            raise InvalidArgument(f"B must be {n}x{n}, got {B.shape}")
        W = _whitener(B, name)
        M = W.T @ A @ W
    else:
        blocks = [np.asarray(b, dtype=float) for b in B]
        if sum(b.shape[0] for b in blocks) != n:
            raise InvalidArgument("diagonal blocks of B do not add up to the size of A")
        names = [f"{name}[{i}]" for i in range(len(blocks))] if isinstance(name, str) else list(name)
        whiteners = [_whitener(b, nm) for b, nm in zip(blocks, names)]
        # apply the block-diagonal whitener without forming the full matrix
        edges = np.cumsum([0] + [b.shape[0] for b in blocks])
        M = np.empty_like(A)
        for i, Wi in enumerate(whiteners):
            rows = slice(edges[i], edges[i + 1])
            left = Wi.T @ A[rows]
            for j, Wj in enumerate(whiteners):
                cols = slice(edges[j], edges[j + 1])
                M[rows, cols] = left[:, cols] @ Wj
        W = None

    lam, U = scipy.linalg.eigh(symmetrize(M), subset_by_index=[n - K, n - 1])
    lam = lam[::-1]
    U = U[:, ::-1]
    if W is not None:
        V = W @ U
    else:
        V = np.empty((n, K))
        for i, Wi in enumerate(whiteners):
            rows = slice(edges[i], edges[i + 1])
            V[rows] = Wi @ U[rows]
    return lam, V


def _column_norms(raw: np.ndarray, centered: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("tk,tk->k", centered, centered))
    # a column whose spread is below 1e-12 of its magnitude is numerically constant
    ref = np.abs(raw).max(axis=0, initial=0.0) * np.sqrt(raw.shape[0])
    return norms, norms > 1e-12 * ref


def pearson(a, b) -> np.ndarray:
    """Column-wise Pearson correlation; zero-variance columns give 0."""
    a = _as_matrix(a)
    b = _as_matrix(b)
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    na, ok_a = _column_norms(a, ac)
    nb, ok_b = _column_norms(b, bc)
    ok = ok_a & ok_b
    out = np.zeros(a.shape[1])
    num = np.einsum("tk,tk->k", ac, bc)
    out[ok] = num[ok] / (na[ok] * nb[ok])
    return np.clip(out, -1.0, 1.0)
