"""MAXVAR generalized CCA across subjects and inter-subject correlation.

The per-view decoders stacked as ``W`` solve ``R W = D W Lambda`` where ``R``
is the full block covariance of all lag-embedded views (diagonal blocks
included) and ``D`` its block diagonal. Because ``R`` keeps the diagonal
blocks, an eigenvalue is not a correlation: for a component whose pairwise
correlations average ``r`` across the ``N`` views it equals roughly
``1 + (N - 1) * r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, NumericDegeneracy
from .linalg import DEFAULT_RIDGE, LagSpec, TimeSeries, pearson, sym_gevd, symmetrize
from .mvcorr import ConfoundSet, embed_confound, embed_view

DEFAULT_GCCA_LAG = LagSpec.centered(5)
RIDGE_FLOOR = 1e-6


@dataclass(frozen=True)
class GccaModel:
    decoders: tuple[np.ndarray, ...]
    lag: LagSpec
    eigenvalues: np.ndarray
    view_labels: tuple[str, ...]
    confound_lag: LagSpec | None = None

    @property
    def K(self) -> int:
        return self.decoders[0].shape[1]

    @property
    def N(self) -> int:
        return len(self.decoders)

    @property
    def is_partial(self) -> bool:
        return self.confound_lag is not None


@dataclass(frozen=True)
class SyncReport:
    """ISC per component plus the pairwise correlations it averages.

    ``per_pair[k]`` lists the correlations of component ``k`` over view
    pairs ``(i, j)``, ``i < j``, in lexicographic order.
    """

    isc: np.ndarray
    per_pair: np.ndarray
    fold_id: str = ""
    pairs: tuple[tuple[int, int], ...] = field(default=())


def _records(view) -> list[TimeSeries]:
    return [view] if isinstance(view, TimeSeries) else list(view)


def _embedded_views(views, lag: LagSpec, confounds, confound_lag) -> list[np.ndarray]:
    """Embed every view; a view may be a single recording or a list of them."""
    out = []
    for n, view in enumerate(views):
        recs = _records(view)
        if confounds is None:
            crecs = [None] * len(recs)
        else:
            crecs = [embed_confound(c, confound_lag) for c in _records(confounds[n].series)]
            if len(crecs) != len(recs):
                raise InvalidArgument(f"view {n}: confound recordings do not match the view")
        mats = []
        for r, (rec, c) in enumerate(zip(recs, crecs)):
            if c is not None and c.shape[0] != rec.n_samples:
                raise InvalidArgument(f"view {n}, recording {r}: confound is not time-aligned")
            mats.append(embed_view(rec, lag, c))
        out.append(np.vstack(mats))
    T = out[0].shape[0]
    if any(m.shape[0] != T for m in out):
        raise InvalidArgument("all views must have the same number of samples")
    return out


def _fit(views, lag, K, ridge, confounds, confound_lag, labels) -> GccaModel:
    views = list(views)
    if len(views) < 2:
        raise InvalidArgument("GCCA needs at least 2 views")
    rates = {rec.rate for v in views for rec in _records(v)}
    if len(rates) != 1:
        raise InvalidArgument(f"views have differing sample rates: {sorted(rates)}")
    mats = _embedded_views(views, lag, confounds, confound_lag)
    T = mats[0].shape[0]
    if T < 2:
        raise InvalidArgument("GCCA needs at least 2 samples")
    widths = [m.shape[1] for m in mats]
    if not 1 <= K <= min(widths):
        raise InvalidArgument(f"K must lie in [1, {min(widths)}], got {K}")
    Z = np.hstack(mats)
    R = symmetrize(Z.T @ Z) / (T - 1)
    edges = np.cumsum([0] + widths)
    # a view emptied by its confounds keeps a loading tied to the overall
    # scale, so its leftover rounding noise is not whitened up to unit size
    floor = RIDGE_FLOOR * float(np.trace(R)) / R.shape[0]
    blocks = []
    for n in range(len(mats)):
        sl = slice(edges[n], edges[n + 1])
        block = R[sl, sl]
        level = max(float(np.trace(block)) / block.shape[0], floor)
        loaded = block + ridge * level * np.eye(block.shape[0])
        R[sl, sl] = loaded
        blocks.append(loaded)
    names = [f"R_{n}{n}" for n in range(len(mats))]
    lam, W = sym_gevd(R, blocks, K, name=names)
    decoders = tuple(W[edges[n]:edges[n + 1]].copy() for n in range(len(mats)))
    if labels is None:
        labels = tuple(f"view{n}" for n in range(len(mats)))
    return GccaModel(decoders, lag, lam, tuple(labels), confound_lag)


def fit_gcca(
    views: Sequence,
    lag: LagSpec = DEFAULT_GCCA_LAG,
    K: int = 5,
    ridge: float = DEFAULT_RIDGE,
    labels: Sequence[str] | None = None,
) -> GccaModel:
    """Fit MAXVAR GCCA decoders for ``N >= 2`` time-aligned views.

    Each view is a :class:`TimeSeries` or a list of recordings that are
    embedded separately and concatenated in time.
    """
    return _fit(views, lag, K, ridge, None, None, labels)


def fit_gcca_partial(
    views: Sequence,
    confounds: Sequence[ConfoundSet],
    lag: LagSpec = DEFAULT_GCCA_LAG,
    K: int = 5,
    ridge: float = DEFAULT_RIDGE,
    labels: Sequence[str] | None = None,
) -> GccaModel:
    """GCCA on per-view residuals after regressing out that view's confounds."""
    confounds = list(confounds)
    if len(confounds) != len(views):
        raise InvalidArgument("one confound set per view is required")
    lags = {c.lag for c in confounds}
    if len(lags) != 1:
        raise InvalidArgument("all confound sets must share a lag spec")
    return _fit(views, lag, K, ridge, confounds, lags.pop(), labels)


def transformed_views(model: GccaModel, views, confounds=None) -> list[np.ndarray]:
    """``X_n W_n`` for every view (``T x K`` each)."""
    views = list(views)
    if len(views) != model.N:
        raise InvalidArgument(f"model has {model.N} views, got {len(views)}")
    if model.is_partial and confounds is None:
        raise InvalidArgument("partial model needs per-view confounds")
    mats = _embedded_views(views, model.lag, confounds if model.is_partial else None, model.confound_lag)
    for n, (m, W) in enumerate(zip(mats, model.decoders)):
        if m.shape[1] != W.shape[0]:
            raise InvalidArgument(f"view {n} has embedding width {m.shape[1]}, decoder expects {W.shape[0]}")
    return [m @ W for m, W in zip(mats, model.decoders)]


def shared_subspace(model: GccaModel, views, confounds=None) -> np.ndarray:
    """Orthonormal shared subspace ``S`` built from the sum of transformed views.

    On the training data the summed columns are already mutually orthogonal
    and only need rescaling; on other data a QR step (column order and signs
    preserved) enforces ``S'S = I``.
    """
    S = sum(transformed_views(model, views, confounds))
    norms = np.linalg.norm(S, axis=0)
    if np.any(norms <= np.finfo(float).eps * max(float(norms.max()), 1.0)):
        raise NumericDegeneracy(f"shared component {int(np.argmin(norms))} has zero variance")
    Q, Rq = np.linalg.qr(S / norms)
    d = np.diag(Rq)
    if np.any(np.abs(d) <= 1e-12):
        raise NumericDegeneracy("shared components are linearly dependent")
    return Q * np.sign(d)


def sync_report(model: GccaModel, views, confounds=None, fold_id: str = "") -> SyncReport:
    """ISC for every component."""
    proj = transformed_views(model, views, confounds)
    return isc_from_projections(proj, fold_id)


def isc_from_projections(proj: Sequence[np.ndarray], fold_id: str = "") -> SyncReport:
    pairs = tuple(combinations(range(len(proj)), 2))
    per_pair = np.stack([pearson(proj[i], proj[j]) for i, j in pairs], axis=1)
    return SyncReport(per_pair.mean(axis=1), per_pair, fold_id, pairs)


def isc(model: GccaModel, views, k: int, confounds=None) -> float:
    """Average pairwise correlation of component ``k`` (1-based) across views."""
    if not 1 <= k <= model.K:
        raise InvalidArgument(f"component index must lie in [1, {model.K}], got {k}")
    proj = [p[:, k - 1:k] for p in transformed_views(model, views, confounds)]
    return float(isc_from_projections(proj).isc[0])
