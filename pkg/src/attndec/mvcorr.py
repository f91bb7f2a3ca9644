"""Two-view canonical correlation analysis and its confound-controlled variant.

Both views are centered, lag-embedded and (for the partial variant)
residualized against lag-embedded confounds before the covariances are
estimated. The decoder/encoder pair is the top of the joint eigenproblem

    [[Rxx, Rxy], [Ryx, Ryy]] w = lambda * blockdiag(Rxx, Ryy) w

whose eigenvalues are ``1 + rho`` for canonical correlation ``rho``.
Several recordings can be passed as sequences; they are preprocessed one by
one and their samples pooled into a single covariance estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import InvalidArgument, NumericDegeneracy
from .linalg import (
    DEFAULT_RIDGE,
    CovarianceSet,
    LagSpec,
    TimeSeries,
    center_columns,
    lag_embed,
    pearson,
    regress_out,
    ridge_load,
    sym_gevd,
    symmetrize,
)

DEFAULT_K = 5
DEFAULT_SUM_COMPONENTS = 2
# data views use 3 lags centered on the current sample, stimulus encoders 15 past lags
DEFAULT_LAG_X = LagSpec.centered(3)
DEFAULT_LAG_Y = LagSpec.past(15)

Views = Union[TimeSeries, Sequence[TimeSeries]]


@dataclass(frozen=True)
class ConfoundSet:
    """Confound channels aligned sample-for-sample with the views they condition."""

    series: TimeSeries | tuple[TimeSeries, ...]
    lag: LagSpec = DEFAULT_LAG_X

    def records(self) -> list[TimeSeries]:
        return _as_list(self.series)


@dataclass(frozen=True)
class CcaModel:
    """Fitted decoder ``W_x`` and encoder ``W_y`` with their lag structure.

    ``sign_convention[k]`` records whether the encoder column was flipped to
    make the training correlation of component ``k`` nonnegative.
    ``confound_lag`` is set for partial models; such models residualize every
    view they evaluate against the confounds passed alongside it.
    """

    W_x: np.ndarray
    W_y: np.ndarray
    lag_x: LagSpec
    lag_y: LagSpec
    train_corrs: np.ndarray
    sign_convention: np.ndarray
    confound_lag: LagSpec | None = None

    @property
    def K(self) -> int:
        return self.W_x.shape[1]

    @property
    def n_x_channels(self) -> int:
        return self.W_x.shape[0] // len(self.lag_x)

    @property
    def n_y_channels(self) -> int:
        return self.W_y.shape[0] // len(self.lag_y)

    @property
    def is_partial(self) -> bool:
        return self.confound_lag is not None


def _as_list(views: Views) -> list[TimeSeries]:
    if isinstance(views, TimeSeries):
        return [views]
    out = list(views)
    if not out:
        raise InvalidArgument("at least one recording is required")
    return out


def embed_view(series: TimeSeries, lag: LagSpec, confound: np.ndarray | None = None) -> np.ndarray:
    """Center, lag-embed, and optionally residualize one recording.

    ``confound`` is an already embedded confound matrix for the same samples.
    """
    X = center_columns(lag_embed(center_columns(series.data), lag))
    if confound is not None:
        X = regress_out(X, confound)
    return X


def embed_confound(series: TimeSeries, lag: LagSpec) -> np.ndarray:
    return center_columns(lag_embed(center_columns(series.data), lag))


def _check_aligned(xs: list[TimeSeries], ys: list[TimeSeries], what: str = "Y") -> None:
    if len(xs) != len(ys):
        raise InvalidArgument(f"{len(xs)} X recordings but {len(ys)} {what} recordings")
    for i, (x, y) in enumerate(zip(xs, ys)):
        if x.n_samples != y.n_samples:
            raise InvalidArgument(
                f"recording {i}: X has {x.n_samples} samples, {what} has {y.n_samples}"
            )
        if x.rate != y.rate:
            raise InvalidArgument(f"recording {i}: sample rates differ ({x.rate} vs {y.rate})")


def _confound_mats(confounds: ConfoundSet | None, xs: list[TimeSeries]) -> list[np.ndarray | None]:
    if confounds is None:
        return [None] * len(xs)
    cs = confounds.records()
    _check_aligned(xs, cs, what="confound")
    return [embed_confound(c, confounds.lag) for c in cs]


def gram(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Cross-product matrix of the side-by-side views ``[X Y]``."""
    Z = np.hstack([X, Y])
    return symmetrize(Z.T @ Z)


def covariance_from_gram(G: np.ndarray, n_samples: int, dx: int, ridge: float) -> CovarianceSet:
    """Ridge-loaded covariance blocks from a pooled cross-product matrix."""
    if n_samples < 2:
        raise InvalidArgument("covariance needs at least 2 samples")
    R = G / (n_samples - 1)
    xx, yy, xy = R[:dx, :dx], R[dx:, dx:], R[:dx, dx:]
    return CovarianceSet(
        xx=ridge_load(xx, ridge), yy=ridge_load(yy, ridge), xy=xy.copy(),
        xx_raw=xx.copy(), yy_raw=yy.copy(), sample_count=n_samples, ridge=float(ridge),
    )


def solve_cca(cov: CovarianceSet, K: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Top-``K`` canonical pairs from covariance blocks.

    Returns ``(W_x, W_y, corrs, signs)`` with every column scaled to unit
    variance under the (ridge-loaded) auto-covariances and correlations
    sorted in non-increasing order.
    """
    dx, dy = cov.xx.shape[0], cov.yy.shape[0]
    if not 1 <= K <= min(dx, dy):
        raise InvalidArgument(f"K must lie in [1, {min(dx, dy)}], got {K}")
    A = np.block([[cov.xx, cov.xy], [cov.xy.T, cov.yy]])
    _, V = sym_gevd(A, [cov.xx, cov.yy], K, name=["R_xx", "R_yy"])
    W_x, W_y = V[:dx].copy(), V[dx:].copy()
    for W, R, view in ((W_x, cov.xx, "x"), (W_y, cov.yy, "y")):
        var = np.einsum("ik,ij,jk->k", W, R, W)
        if np.any(var <= np.finfo(float).eps * np.trace(R)):
            k = int(np.argmin(var))
            raise NumericDegeneracy(f"canonical component {k} has no support in view {view}")
        W /= np.sqrt(var)
    num = np.einsum("ik,ij,jk->k", W_x, cov.xy, W_y)
    den = np.sqrt(
        np.einsum("ik,ij,jk->k", W_x, cov.xx_raw, W_x) * np.einsum("ik,ij,jk->k", W_y, cov.yy_raw, W_y)
    )
    corrs = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    signs = np.where(corrs < 0, -1.0, 1.0)
    W_y *= signs
    corrs = np.clip(np.abs(corrs), -1.0, 1.0)
    order = np.argsort(-corrs, kind="stable")
    return W_x[:, order], W_y[:, order], corrs[order], signs[order]


def _fit(xs, ys, lag_x, lag_y, K, ridge, confounds) -> CcaModel:
    _check_aligned(xs, ys)
    cmats = _confound_mats(confounds, xs)
    G = None
    n = 0
    for x, y, c in zip(xs, ys, cmats):
        g = gram(embed_view(x, lag_x, c), embed_view(y, lag_y, c))
        G = g if G is None else G + g
        n += x.n_samples
    dx = lag_x.width(xs[0].n_channels)
    dy = lag_y.width(ys[0].n_channels)
    if not 1 <= K <= min(dx, dy):
        raise InvalidArgument(f"K must lie in [1, {min(dx, dy)}], got {K}")
    cov = covariance_from_gram(G, n, dx, ridge)
    W_x, W_y, corrs, signs = solve_cca(cov, K)
    return CcaModel(
        W_x=W_x, W_y=W_y, lag_x=lag_x, lag_y=lag_y, train_corrs=corrs, sign_convention=signs,
        confound_lag=None if confounds is None else confounds.lag,
    )


def fit_cca(
    X: Views,
    Y: Views,
    lag_x: LagSpec = DEFAULT_LAG_X,
    lag_y: LagSpec = DEFAULT_LAG_Y,
    K: int = DEFAULT_K,
    ridge: float = DEFAULT_RIDGE,
) -> CcaModel:
    """Fit ``K`` canonical component pairs between a data view and a stimulus view.

    Examples
    --------
    >>> import numpy as np
    >>> x = TimeSeries(np.random.default_rng(0).standard_normal((500, 1)), 30.0)
    >>> model = fit_cca(x, x, LagSpec((0,)), LagSpec((0,)), K=1)
    >>> round(float(model.train_corrs[0]), 6)
    1.0
    """
    return _fit(_as_list(X), _as_list(Y), lag_x, lag_y, K, ridge, None)


def fit_pcca(
    X: Views,
    Y: Views,
    confounds: ConfoundSet,
    lag_x: LagSpec = DEFAULT_LAG_X,
    lag_y: LagSpec = DEFAULT_LAG_Y,
    K: int = DEFAULT_K,
    ridge: float = DEFAULT_RIDGE,
) -> CcaModel:
    """CCA on the residuals of both views after regressing out the confounds.

    Regression is done per recording on the lag-embedded confounds; the
    returned model applies the same residualization in :func:`evaluate`.
    """
    return _fit(_as_list(X), _as_list(Y), lag_x, lag_y, K, ridge, confounds)


def _check_model_shapes(model: CcaModel, xs: list[TimeSeries], ys: list[TimeSeries]) -> None:
    for x in xs:
        if x.n_channels != model.n_x_channels:
            raise InvalidArgument(f"X has {x.n_channels} channels, model expects {model.n_x_channels}")
    for y in ys:
        if y.n_channels != model.n_y_channels:
            raise InvalidArgument(f"Y has {y.n_channels} channels, model expects {model.n_y_channels}")


def _confounds_for(model: CcaModel, confounds: ConfoundSet | None, xs: list[TimeSeries]):
    if model.is_partial and confounds is None:
        raise InvalidArgument("partial model needs the confounds of the evaluated data")
    if not model.is_partial:
        return [None] * len(xs)
    return _confound_mats(ConfoundSet(confounds.series, model.confound_lag), xs)


def project_x(model: CcaModel, X: Views, confounds: ConfoundSet | None = None) -> np.ndarray:
    """Decoder outputs for each recording, stacked along time (``T x K``)."""
    xs = _as_list(X)
    _check_model_shapes(model, xs, [])
    cmats = _confounds_for(model, confounds, xs)
    return np.vstack([embed_view(x, model.lag_x, c) @ model.W_x for x, c in zip(xs, cmats)])


def project_y(model: CcaModel, Y: Views, confounds: ConfoundSet | None = None) -> np.ndarray:
    """Encoder outputs for each recording, stacked along time (``T x K``)."""
    ys = _as_list(Y)
    _check_model_shapes(model, [], ys)
    cmats = _confounds_for(model, confounds, ys)
    return np.vstack([embed_view(y, model.lag_y, c) @ model.W_y for y, c in zip(ys, cmats)])


def evaluate(model: CcaModel, X: Views, Y: Views, confounds: ConfoundSet | None = None) -> np.ndarray:
    """Pearson correlations of the ``K`` projected component pairs on new data.

    Each recording (or test segment) is centered on its own before
    projection; a zero-variance projection yields a correlation of 0.
    """
    xs, ys = _as_list(X), _as_list(Y)
    _check_aligned(xs, ys)
    return pearson(project_x(model, xs, confounds), project_y(model, ys, confounds))


def correlation_sum(corrs: Sequence[float], m: int = DEFAULT_SUM_COMPONENTS) -> float:
    """Sum of the first ``m`` component correlations."""
    corrs = np.asarray(corrs, dtype=float).ravel()
    if not 1 <= m <= corrs.size:
        raise InvalidArgument(f"cannot sum {m} components out of {corrs.size}")
    return float(corrs[:m].sum())
