"""Cross-validated attention decoding experiments.

Every fold holds out both presentations of one video pair. A (partial) CCA
model is trained on the remaining records of the subject, then scored on
randomly placed test segments: the segment's data is correlated with the
attended feature and with an imposter (the unattended feature for SVAD, a
non-overlapping stretch of the attended feature for match-mismatch), and the
higher correlation sum wins.

Embedded views are computed once per record, so a fold's training
covariance is the sum of its training records' cross-product matrices.
That equals estimating it on the concatenated training streams and never
touches the held-out samples.
"""

from __future__ import annotations

import dataclasses
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Mapping, Sequence

import numpy as np
from scipy import signal

from .errors import AttnDecError, InvalidArgument, InvalidDataset
from .groupsync import DEFAULT_GCCA_LAG, fit_gcca, fit_gcca_partial, isc_from_projections, transformed_views
from .layout import region_map_for
from .linalg import DEFAULT_RIDGE, LagSpec, TimeSeries, center_columns, confound_coefficients, pearson
from .mvcorr import (
    DEFAULT_K,
    DEFAULT_LAG_X,
    DEFAULT_LAG_Y,
    DEFAULT_SUM_COMPONENTS,
    CcaModel,
    ConfoundSet,
    correlation_sum,
    covariance_from_gram,
    embed_confound,
    embed_view,
    evaluate,
    gram,
    solve_cca,
)
from .features import onsets_from_binary, saccade_mask
from .records import TrialRecord, check_attention_swap
from .stats import (
    ALPHA,
    N_CIRCULAR_SHIFTS,
    N_PHASE_SURROGATES,
    NullDistribution,
    null_accuracy_circular,
    p_value,
    p_value_smoothed,
    phase_scramble,
    significance_threshold,
)

TASKS = ("svad", "mm")
CONFOUND_MODES = ("none", "regress")
CONFOUND_MODALITIES = ("EOG", "GAZE_V")
SACCADE_MODES = ("none", "saccade", "control")
N_ISC_SHIFTS = 200
WORKERS_ENV = "ATTNDEC_WORKERS"


@dataclass(frozen=True)
class DecodeConfig:
    segment_seconds: float = 30.0
    lag_x: LagSpec = DEFAULT_LAG_X
    lag_y: LagSpec = DEFAULT_LAG_Y
    lag_c: LagSpec = DEFAULT_LAG_X
    lag_gcca: LagSpec = DEFAULT_GCCA_LAG
    K: int = DEFAULT_K
    m: int = DEFAULT_SUM_COMPONENTS
    ridge: float = DEFAULT_RIDGE
    seed: int = 0
    task: str = "svad"
    confound_mode: str = "none"
    region: str = "whole"
    combine_gaze_v: bool = False
    modality: str = "EEG"
    n_circular_shifts: int = N_CIRCULAR_SHIFTS
    n_phase_surrogates: int = N_PHASE_SURROGATES
    alpha: float = ALPHA
    swap_labels: bool = False
    saccade_removal: str = "none"
    saccade_pre_s: float = 0.33
    saccade_post_s: float = 1.0

    def __post_init__(self):
        if not self.segment_seconds > 0:
            raise InvalidArgument("segment_seconds must be positive")
        if self.K < 1 or not 1 <= self.m <= self.K:
            raise InvalidArgument(f"need 1 <= m <= K, got m={self.m}, K={self.K}")
        if self.task not in TASKS:
            raise InvalidArgument(f"task must be one of {TASKS}, got {self.task!r}")
        if self.confound_mode not in CONFOUND_MODES:
            raise InvalidArgument(f"confound_mode must be one of {CONFOUND_MODES}, got {self.confound_mode!r}")
        if self.saccade_removal not in SACCADE_MODES:
            raise InvalidArgument(f"saccade_removal must be one of {SACCADE_MODES}, got {self.saccade_removal!r}")
        if self.saccade_pre_s < 0 or self.saccade_post_s < 0:
            raise InvalidArgument("saccade window bounds must be nonnegative")
        if self.ridge < 0:
            raise InvalidArgument("ridge must be nonnegative")
        if self.n_circular_shifts < 0 or self.n_phase_surrogates < 0:
            raise InvalidArgument("null sizes must be nonnegative")

    def replace(self, **changes) -> "DecodeConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TrialDecision:
    fold: int
    index: int
    start: int
    imposter_start: int
    score_target: float
    score_imposter: float
    correct: bool


@dataclass
class FoldResult:
    subject_id: str
    fold: int
    accuracy: float = float("nan")
    n_trials: int = 0
    n_effective: int = 0
    mean_target: float = float("nan")
    mean_imposter: float = float("nan")
    train_corrs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    test_corrs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    null_accuracy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    null_corr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trials: list[TrialDecision] = field(default_factory=list)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class SubjectResult:
    subject_id: str
    folds: list[FoldResult]
    accuracy: float
    n_trials: int
    n_effective: int
    null_accuracy: NullDistribution | None
    p_value: float
    threshold: float
    p_value_smoothed: float = float("nan")

    @property
    def n_failed(self) -> int:
        return sum(f.failed for f in self.folds)


@dataclass
class DecodeReport:
    config: DecodeConfig
    subjects: list[SubjectResult]
    mean_accuracy: float
    null_accuracy: NullDistribution | None
    accuracy_threshold: float
    null_corr: NullDistribution | None
    corr_threshold: float
    warnings: list[str] = field(default_factory=list)

    @property
    def accuracies(self) -> dict[str, float]:
        return {s.subject_id: s.accuracy for s in self.subjects}

    @property
    def n_effective(self) -> int:
        return sum(s.n_effective for s in self.subjects)


# ---------------------------------------------------------------- dataset

def group_by_subject(records: Sequence[TrialRecord]) -> dict[str, list[TrialRecord]]:
    out: dict[str, list[TrialRecord]] = {}
    for r in records:
        out.setdefault(r.subject_id, []).append(r)
    return {s: sorted(rs, key=lambda r: (r.pair_id, r.presentation)) for s, rs in sorted(out.items())}


def loo_pair_split(records: Sequence[TrialRecord]) -> list[tuple[list[TrialRecord], list[TrialRecord]]]:
    """One ``(train, test)`` fold per pair; the test fold holds both of its presentations."""
    records = list(records)
    check_attention_swap(records)
    pres: dict[tuple[str, int], set[int]] = {}
    for r in records:
        pres.setdefault((r.subject_id, r.pair_id), set()).add(r.presentation)
    for (subject, pair), seen in sorted(pres.items()):
        if seen != {1, 2}:
            missing = sorted({1, 2} - seen)
            raise InvalidDataset(f"subject {subject} pair {pair} is missing presentation {missing[0]}")
    pairs = sorted({r.pair_id for r in records})
    if len(pairs) < 2:
        raise InvalidDataset("leave-one-pair-out needs at least 2 pairs")
    return [([r for r in records if r.pair_id != p], [r for r in records if r.pair_id == p]) for p in pairs]


def bootstrap_segments(test_len_s: float, segment_s: float, rng=None) -> np.ndarray:
    """``floor(test_len_s / 3)`` segment starts (seconds), uniform with replacement."""
    if not segment_s > 0:
        raise InvalidArgument("segment length must be positive")
    if test_len_s < segment_s:
        raise InvalidArgument(f"test set of {test_len_s} s is shorter than a {segment_s} s segment")
    rng = np.random.default_rng(rng)
    n = int(np.floor(test_len_s / 3.0))
    if n < 1:
        raise InvalidArgument("test set is too short to draw any segment")
    return rng.uniform(0.0, test_len_s - segment_s, size=n)


def mismatch_start(total: int, start: int, length: int, rng=None) -> int:
    """Uniform start of a same-length window that does not overlap ``[start, start + length)``."""
    rng = np.random.default_rng(rng)
    if length < 1 or not 0 <= start <= total - length:
        raise InvalidArgument("current segment lies outside the test set")
    before = max(start - length + 1, 0)  # starts in [0, start - length]
    after = max(total - length - (start + length) + 1, 0)  # starts in [start + length, total - length]
    if before + after == 0:
        raise InvalidArgument(
            f"no non-overlapping {length}-sample window in a {total}-sample test set"
        )
    k = int(rng.integers(0, before + after))
    return k if k < before else start + length + (k - before)


def mismatch_sampler(test_stream: TimeSeries, current: tuple[int, int], rng=None) -> TimeSeries:
    """Attended-feature segment from elsewhere in the same test set.

    ``current`` is the ``(start, stop)`` sample span of the target segment.
    """
    start, stop = current
    s = mismatch_start(test_stream.n_samples, start, stop - start, rng)
    return test_stream.slice(s, s + stop - start)


def channel_subset(series: TimeSeries, region: str, region_map: Mapping[str, Sequence[str]] | None = None) -> TimeSeries:
    """Channels of one named region, in their original order."""
    if region in ("whole", "all"):
        return series
    region_map = region_map_for(series.labels) if region_map is None else region_map
    if region not in region_map:
        raise InvalidArgument(f"unknown region {region!r}; known: {', '.join(sorted(region_map))}")
    wanted = set(region_map[region])
    missing = sorted(wanted - set(series.labels))
    if missing:
        raise InvalidArgument(f"region {region!r} needs channel {missing[0]!r}, absent from the data")
    return series.select([lab for lab in series.labels if lab in wanted])


def combine_modalities(eeg: TimeSeries, gaze_v: TimeSeries) -> TimeSeries:
    """Append gaze velocity as an extra channel at the EEG's median channel scale."""
    if eeg.rate != gaze_v.rate:
        raise InvalidArgument(f"sample rates differ: {eeg.rate} vs {gaze_v.rate}")
    if eeg.n_samples != gaze_v.n_samples:
        raise InvalidArgument(f"lengths differ: {eeg.n_samples} vs {gaze_v.n_samples}")
    v = gaze_v.data[:, :1]
    sd = float(v.std())
    target = float(np.median(eeg.data.std(axis=0)))
    extra = (v - v.mean()) * (target / sd) if sd > 1e-12 * max(float(np.abs(v).max()), 1.0) else np.zeros_like(v)
    label = "GAZE_V" if "GAZE_V" not in eeg.labels else "GAZE_V_extra"
    return TimeSeries(np.hstack([eeg.data, extra]), eeg.rate, eeg.labels + (label,))


def data_view(record: TrialRecord, config: DecodeConfig) -> TimeSeries:
    """The data series decoded for one record under ``config``."""
    if config.modality not in record.modalities:
        raise InvalidDataset(f"record lacks modality {config.modality!r}")
    x = record.modalities[config.modality]
    if config.region not in ("whole", "all"):
        x = channel_subset(x, config.region)
    if config.combine_gaze_v:
        x = combine_modalities(x, record.modalities["GAZE_V"])
    return x


def confound_series(record: TrialRecord) -> TimeSeries:
    mats = [record.modalities[name] for name in CONFOUND_MODALITIES]
    return TimeSeries(
        np.hstack([m.data for m in mats]), record.rate, tuple(f"{name}:{lab}" for name, m in zip(CONFOUND_MODALITIES, mats) for lab in m.labels)
    )


# ---------------------------------------------------------------- scoring

def decide_trial(
    model: CcaModel,
    data_seg: TimeSeries,
    feat_target: TimeSeries,
    feat_imposter: TimeSeries,
    m: int = DEFAULT_SUM_COMPONENTS,
    confounds: ConfoundSet | None = None,
) -> tuple[str, float, float]:
    """Pick the feature segment with the larger correlation sum; ties go to the imposter."""
    if not data_seg.n_samples == feat_target.n_samples == feat_imposter.n_samples:
        raise InvalidArgument(
            f"segments differ in length: {data_seg.n_samples}, {feat_target.n_samples}, {feat_imposter.n_samples}"
        )
    s_t = correlation_sum(evaluate(model, data_seg, feat_target, confounds), m)
    s_i = correlation_sum(evaluate(model, data_seg, feat_imposter, confounds), m)
    return ("target" if s_t > s_i else "imposter"), s_t, s_i


def _window_mask(valid: np.ndarray | None, starts: np.ndarray, L: int) -> np.ndarray | None:
    return None if valid is None else valid[starts[:, None] + np.arange(L)[None, :]]


def _standardized_segments(P: np.ndarray, starts: np.ndarray, L: int, mask: np.ndarray | None = None) -> np.ndarray:
    """``(n, L, K)`` windows, centered and scaled to unit norm (zero if flat).

    With an ``(n, L)`` sample ``mask`` only the kept samples of each window
    count; removed samples are zeroed after centering and windows with fewer
    than 3 kept samples score zero.
    """
    seg = P[starts[:, None] + np.arange(L)[None, :]]
    if mask is None:
        seg = seg - seg.mean(axis=1, keepdims=True)
    else:
        w = mask[:, :, None].astype(float)
        count = w.sum(axis=1, keepdims=True)
        total = (seg * w).sum(axis=1, keepdims=True)
        mean = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
        seg = (seg - mean) * w * (count >= 3)
    norm = np.sqrt((seg ** 2).sum(axis=1, keepdims=True))
    scale = np.sqrt((P ** 2).mean(axis=0)) * np.sqrt(L)
    ok = norm > 1e-12 * np.maximum(scale, 1e-300)
    return np.divide(seg, norm, out=np.zeros_like(seg), where=ok)


def _segment_scores(Zd: np.ndarray, Zf: np.ndarray, m: int) -> np.ndarray:
    """Correlation sums of data windows ``i`` against feature windows ``i``."""
    return np.clip(np.einsum("nlk,nlk->nk", Zd, Zf), -1.0, 1.0)[:, :m].sum(axis=1)


def _cross_scores(Zd: np.ndarray, Zf: np.ndarray, m: int) -> np.ndarray:
    """``S[j, i]``: correlation sum of data window ``j`` against feature window ``i``."""
    return np.clip(np.einsum("jlk,ilk->jik", Zd[..., :m], Zf[..., :m]), -1.0, 1.0).sum(axis=2)


# ---------------------------------------------------------------- engine

def _rng(config: DecodeConfig, subject_id: str, fold: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(config.seed), zlib.crc32(subject_id.encode()), int(fold), purpose])
    return np.random.default_rng(ss)


@dataclass
class _Embedded:
    x: np.ndarray
    y: dict[int, np.ndarray]
    confound: np.ndarray | None
    attended: int
    pair_id: int
    valid: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return self.x.shape[0] if self.valid is None else int(self.valid.sum())

    def gram(self) -> np.ndarray:
        x, y = self.x, self.y[self.attended]
        if self.valid is not None:
            x, y = center_columns(x[self.valid]), center_columns(y[self.valid])
        return gram(x, y)


def kept_rows(keep: np.ndarray, offsets: Sequence[int]) -> np.ndarray:
    """Rows whose every lagged sample is kept (samples past the edges count as kept)."""
    T = keep.size
    valid = np.ones(T, dtype=bool)
    for o in set(offsets):
        shifted = np.ones(T, dtype=bool)
        if o >= 0:
            shifted[:T - o] = keep[o:]
        else:
            shifted[-o:] = keep[:T + o]
        valid &= shifted
    return valid


def saccade_rows(record: TrialRecord, config: DecodeConfig) -> np.ndarray | None:
    """Row mask for the saccade analysis, or ``None`` when disabled.

    ``control`` removes the same amount of data at random: the saccade mask
    rotated by a seeded random offset.
    """
    if config.saccade_removal == "none":
        return None
    if "SACC" not in record.modalities:
        raise InvalidDataset("saccade removal needs the SACC modality")
    sacc = record.modalities["SACC"]
    keep = saccade_mask(onsets_from_binary(sacc), sacc.rate, sacc.n_samples, config.saccade_pre_s, config.saccade_post_s)
    if config.saccade_removal == "control":
        rng = _rng(config, record.subject_id, 10 * record.pair_id + record.presentation, 5)
        keep = np.roll(keep, int(rng.integers(0, keep.size)))
    return kept_rows(keep, tuple(config.lag_x.offsets) + tuple(config.lag_y.offsets))


def _embed_record(record: TrialRecord, config: DecodeConfig) -> _Embedded:
    x = data_view(record, config)
    c = embed_confound(confound_series(record), config.lag_c) if config.confound_mode == "regress" else None
    return _Embedded(
        x=embed_view(x, config.lag_x, c),
        y={o: embed_view(f, config.lag_y, c) for o, f in record.features.items()},
        confound=c,
        attended=record.attended_object,
        pair_id=record.pair_id,
        valid=saccade_rows(record, config),
    )


def effective_k(config: DecodeConfig, dx: int, dy: int) -> tuple[int, int]:
    K = min(config.K, dx, dy)
    return K, min(config.m, K)


def fit_fold(cache: Sequence[_Embedded], grams: Sequence[np.ndarray], train: Sequence[int],
             config: DecodeConfig) -> CcaModel:
    """CCA model from the pooled cross-products of the training records only."""
    G = sum(grams[i] for i in train)
    n = sum(cache[i].n_rows for i in train)
    dx, dy = cache[train[0]].x.shape[1], cache[train[0]].y[1].shape[1]
    K, _ = effective_k(config, dx, dy)
    W_x, W_y, corrs, signs = solve_cca(covariance_from_gram(G, n, dx, config.ridge), K)
    return CcaModel(W_x, W_y, config.lag_x, config.lag_y, corrs, signs,
                    config.lag_c if config.confound_mode == "regress" else None)


def project_feature_batch(S: np.ndarray, lag: LagSpec, W: np.ndarray, confound: np.ndarray | None = None) -> np.ndarray:
    """Encoder outputs for many single-channel feature versions at once.

    ``S`` is ``T x n`` (one column per version); returns ``T x n x K`` equal
    to ``embed_view(column, lag, confound) @ W`` for every column. Lag
    embedding, centering and confound regression are linear, so they are
    applied to the filtered outputs instead of the embedded matrices.
    """
    T, n = S.shape
    S = S - S.mean(axis=0)
    # row t is sum_j W[j] * S[t + o_j]: a FIR filter with taps b[a - o_j]
    a = lag.offsets[-1]
    taps = np.zeros((a - lag.offsets[0] + 1, W.shape[1]))
    for j, o in enumerate(lag.offsets):
        taps[a - o] = W[j]
    padded = np.vstack([S, np.zeros((max(a, 0), n))])
    z = signal.fftconvolve(padded[:, :, None], taps[:, None, :], axes=0)
    if a >= 0:
        Y = z[a:a + T]
    else:
        Y = np.concatenate([np.zeros((-a, n, W.shape[1])), z[:T + a]])
    Y -= Y.mean(axis=0)
    if confound is not None:
        B = confound_coefficients(Y.reshape(T, -1), confound)
        Y -= (confound @ B).reshape(Y.shape)
    return Y


def _null_corr(model: CcaModel, test_recs: Sequence[TrialRecord], test_cache: Sequence[_Embedded],
               Px: np.ndarray, targets: Sequence[int], config: DecodeConfig, rng,
               valid: np.ndarray | None = None) -> np.ndarray:
    """Test-set component correlations with phase-scrambled target features.

    Returns ``n_phase_surrogates * K`` values, surrogate-major.
    """
    n = config.n_phase_surrogates
    parts = []
    for r, e, obj in zip(test_recs, test_cache, targets):
        f = r.features[obj]
        tiled = f.with_data(np.repeat(f.data[:, :1], n, axis=1), tuple(f"s{i}" for i in range(n)))
        parts.append(project_feature_batch(phase_scramble(tiled, rng).data, model.lag_y, model.W_y, e.confound))
    Y = np.concatenate(parts, axis=0)
    if valid is not None:
        Y, Px = Y[valid], Px[valid]
    Yc = Y - Y.mean(axis=0)
    Xc = Px - Px.mean(axis=0)
    num = np.einsum("tk,tnk->nk", Xc, Yc)
    den = np.sqrt((Xc ** 2).sum(axis=0)[None, :] * (Yc ** 2).sum(axis=0))
    corr = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return np.clip(corr, -1.0, 1.0).ravel()


def _decode_fold(subject_id: str, fold: int, records: Sequence[TrialRecord], cache: Sequence[_Embedded],
                 grams: Sequence[np.ndarray], config: DecodeConfig) -> FoldResult:
    result = FoldResult(subject_id, fold)
    train = [i for i, e in enumerate(cache) if e.pair_id != fold]
    test = [i for i, e in enumerate(cache) if e.pair_id == fold]
    model = fit_fold(cache, grams, train, config)
    _, m = effective_k(config, model.W_x.shape[0], model.W_y.shape[0])
    result.train_corrs = model.train_corrs

    rate = records[test[0]].rate
    Px = np.vstack([cache[i].x @ model.W_x for i in test])
    # swap_labels inverts the test labels only, so the trained model is unchanged
    target = {i: cache[i].attended if not config.swap_labels else 3 - cache[i].attended for i in test}
    Pa = np.vstack([cache[i].y[target[i]] @ model.W_y for i in test])
    Pu = np.vstack([cache[i].y[3 - target[i]] @ model.W_y for i in test])
    V = None if cache[test[0]].valid is None else np.concatenate([cache[i].valid for i in test])
    result.test_corrs = pearson(Px, Pa) if V is None else pearson(Px[V], Pa[V])

    N = Px.shape[0]
    L = int(round(config.segment_seconds * rate))
    starts_s = bootstrap_segments(N / rate, config.segment_seconds, _rng(config, subject_id, fold, 1))
    starts = np.minimum(np.rint(starts_s * rate).astype(int), N - L)
    if np.any(starts < 0) or np.any(starts + L > N):
        raise AssertionError("bootstrap segment outside the test set")
    if config.task == "mm":
        mm_rng = [_rng(config, subject_id, fold, 100 + k) for k in range(starts.size)]
        imp = np.array([mismatch_start(N, int(s), L, g) for s, g in zip(starts, mm_rng)])
        imposter_stream = Pa
    else:
        imp = starts
        imposter_stream = Pu

    # every window is scored on the kept samples of the data window
    mask = _window_mask(V, starts, L)
    Zd = _standardized_segments(Px, starts, L, mask)
    Zt = _standardized_segments(Pa, starts, L, mask)
    Zi = _standardized_segments(imposter_stream, imp, L, mask)
    s_t = _segment_scores(Zd, Zt, m)
    s_i = _segment_scores(Zd, Zi, m)
    correct = s_t > s_i
    result.trials = [
        TrialDecision(fold, k, int(starts[k]), int(imp[k]), float(s_t[k]), float(s_i[k]), bool(correct[k]))
        for k in range(starts.size)
    ]
    result.n_trials = int(starts.size)
    result.n_effective = int(N // L)
    result.accuracy = float(correct.mean())
    result.mean_target = float(s_t.mean())
    result.mean_imposter = float(s_i.mean())

    if config.n_circular_shifts and starts.size >= 2:
        # data window j scored against the feature windows of trial i
        St = _cross_scores(Zd, Zt, m)
        Si = _cross_scores(Zd, Zi, m)
        idx = np.arange(starts.size)

        def shifted_accuracy(order):
            j = np.asarray(order)
            return float(np.mean(St[j, idx] > Si[j, idx]))

        null = null_accuracy_circular(shifted_accuracy, list(idx), config.n_circular_shifts,
                                      rng=_rng(config, subject_id, fold, 2))
        result.null_accuracy = null.values
    if config.n_phase_surrogates:
        result.null_corr = _null_corr(model, [records[i] for i in test], [cache[i] for i in test], Px,
                                      [target[i] for i in test], config, _rng(config, subject_id, fold, 3), V)
    return result


def decode_subject(records: Sequence[TrialRecord], config: DecodeConfig) -> SubjectResult:
    """All leave-one-pair-out folds of one subject."""
    records = sorted(records, key=lambda r: (r.pair_id, r.presentation))
    subject_id = records[0].subject_id
    if any(r.subject_id != subject_id for r in records):
        raise InvalidArgument("decode_subject expects records of a single subject")
    folds_def = loo_pair_split(records)
    cache = [_embed_record(r, config) for r in records]
    grams = [e.gram() for e in cache]
    folds = []
    for _, test in folds_def:
        fold = test[0].pair_id
        try:
            folds.append(_decode_fold(subject_id, fold, records, cache, grams, config))
        except AttnDecError as exc:
            folds.append(FoldResult(subject_id, fold, error=f"{type(exc).__name__}: {exc}"))
    ok = [f for f in folds if not f.failed]
    n_trials = sum(f.n_trials for f in ok)
    correct = sum(sum(t.correct for t in f.trials) for f in ok)
    accuracy = correct / n_trials if n_trials else float("nan")
    null = None
    p, ps, thr = float("nan"), float("nan"), float("nan")
    with_null = [f for f in ok if f.null_accuracy.size]
    if with_null and n_trials:
        # trial-weighted average of the fold nulls, replicate by replicate
        weights = np.array([f.n_trials for f in with_null], dtype=float)
        values = np.average(np.stack([f.null_accuracy for f in with_null]), axis=0, weights=weights)
        null = NullDistribution(values, "circular_shift", config.n_circular_shifts, config.seed)
        p = p_value(accuracy, null)
        ps = p_value_smoothed(accuracy, null)
        thr = significance_threshold(null, config.alpha)
    return SubjectResult(subject_id, folds, accuracy, n_trials, sum(f.n_effective for f in ok), null, p, thr, ps)


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise InvalidArgument(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        else:
            workers = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    if workers < 1:
        raise InvalidArgument("worker count must be at least 1")
    return workers


def parallel_map(fn, items, workers: int):
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items)), mp_context=get_context("spawn")) as pool:
        return list(pool.map(fn, *zip(*items)))


def summarize(subjects: list[SubjectResult], config: DecodeConfig) -> DecodeReport:
    warnings = [f"subject {f.subject_id} fold {f.fold} failed: {f.error}" for s in subjects for f in s.folds if f.failed]
    accs = [s.accuracy for s in subjects if np.isfinite(s.accuracy)]
    nulls = [s.null_accuracy for s in subjects if s.null_accuracy is not None]
    null = NullDistribution.pooled(nulls) if nulls else None
    corr_values = [f.null_corr for s in subjects for f in s.folds if f.null_corr.size]
    null_corr = None
    if corr_values:
        null_corr = NullDistribution(np.concatenate(corr_values), "phase_scramble", config.n_phase_surrogates, config.seed)
    return DecodeReport(
        config=config,
        subjects=subjects,
        mean_accuracy=float(np.mean(accs)) if accs else float("nan"),
        null_accuracy=null,
        accuracy_threshold=significance_threshold(null, config.alpha) if null else float("nan"),
        null_corr=null_corr,
        corr_threshold=significance_threshold(null_corr, config.alpha) if null_corr else float("nan"),
        warnings=warnings,
    )


def run_task(records: Sequence[TrialRecord], config: DecodeConfig, workers: int | None = 1) -> DecodeReport:
    """Run the configured decoding task for every subject.

    Results do not depend on ``workers``: every subject and fold draws from
    its own seed stream.
    """
    groups = group_by_subject(records)
    if not groups:
        raise InvalidDataset("no trial records")
    loo_pair_split(records)
    items = [(recs, config) for recs in groups.values()]
    subjects = parallel_map(decode_subject, items, resolve_workers(workers))
    return summarize(subjects, config)


# ---------------------------------------------------------------- group synchrony

@dataclass
class IscFold:
    fold: int
    isc: np.ndarray
    null: np.ndarray
    threshold: float
    p_value: float
    error: str | None = None


@dataclass
class IscReport:
    config: DecodeConfig
    subjects: tuple[str, ...]
    folds: list[IscFold]
    k: int

    @property
    def mean_isc(self) -> np.ndarray:
        ok = [f.isc for f in self.folds if f.error is None]
        return np.mean(ok, axis=0) if ok else np.zeros(0)


def _shifted_isc(proj: Sequence[np.ndarray], rng, min_shift: int) -> float:
    T = proj[0].shape[0]
    rolled = [np.roll(p, int(rng.integers(min_shift, T - min_shift + 1)), axis=0) for p in proj]
    return float(isc_from_projections(rolled).isc[0])


def isc_cv(records: Sequence[TrialRecord], config: DecodeConfig, k: int = 1,
           n_null: int = N_ISC_SHIFTS) -> IscReport:
    """Leave-one-pair-out ISC: GCCA fitted on training pairs, ISC on the held-out pair.

    The null rotates each subject's held-out projections by an independent
    random offset (at least one segment length when the test set allows).
    """
    groups = group_by_subject(records)
    if len(groups) < 2:
        raise InvalidDataset(f"ISC needs at least 2 subjects, got {len(groups)}")
    pairs = [sorted({(r.pair_id, r.presentation) for r in recs}) for recs in groups.values()]
    if any(p != pairs[0] for p in pairs):
        raise InvalidDataset("every subject must have the same pair/presentation set")
    loo_pair_split(records)
    subjects = tuple(groups)
    partial = config.confound_mode == "regress"
    out = []
    for pair_id in sorted({p for p, _ in pairs[0]}):
        split = [([r for r in recs if r.pair_id != pair_id], [r for r in recs if r.pair_id == pair_id])
                 for recs in groups.values()]
        train_views = [[data_view(r, config) for r in tr] for tr, _ in split]
        test_views = [[data_view(r, config) for r in te] for _, te in split]
        try:
            if partial:
                tc = [ConfoundSet(tuple(confound_series(r) for r in tr), config.lag_c) for tr, _ in split]
                sc = [ConfoundSet(tuple(confound_series(r) for r in te), config.lag_c) for _, te in split]
                K = min(config.K, config.lag_gcca.width(train_views[0][0].n_channels))
                model = fit_gcca_partial(train_views, tc, config.lag_gcca, K, config.ridge, subjects)
            else:
                sc = None
                K = min(config.K, config.lag_gcca.width(train_views[0][0].n_channels))
                model = fit_gcca(train_views, config.lag_gcca, K, config.ridge, subjects)
            if not 1 <= k <= model.K:
                raise InvalidArgument(f"component index must lie in [1, {model.K}], got {k}")
            proj = transformed_views(model, test_views, sc)
            report = isc_from_projections(proj, fold_id=str(pair_id))
            comp = [p[:, k - 1:k] for p in proj]
            rng = _rng(config, "isc", pair_id, 4)
            T = comp[0].shape[0]
            min_shift = min(int(round(config.segment_seconds * split[0][1][0].rate)), T // 2 - 1)
            null = np.array([_shifted_isc(comp, rng, max(min_shift, 1)) for _ in range(n_null)])
            thr = significance_threshold(null, config.alpha) if n_null else float("nan")
            p = p_value(float(report.isc[k - 1]), null) if n_null else float("nan")
            out.append(IscFold(pair_id, report.isc, null, thr, p))
        except AttnDecError as exc:
            out.append(IscFold(pair_id, np.zeros(0), np.zeros(0), float("nan"), float("nan"),
                               f"{type(exc).__name__}: {exc}"))
    return IscReport(config, subjects, out, k)
