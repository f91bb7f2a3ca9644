"""Forward-model generator for attention-modulated synthetic datasets.

Each video pair has two latent motion signals (one per object) and two
observed ObjFlow features that track their latent only partially
(``feature_fidelity``), standing in for an imperfect video feature. A
simulated subject's EEG is

    g_a * (h * m_attended) * topo + g_u * (h * m_other) * topo
      + confound_gain * v_gaze * topo_eye + pink noise at ``snr_db``

where ``h`` is a subject-specific smooth FIR response. Gaze follows the
currently attended object through smooth pursuit and saccades whose rate
rises with that object's motion; EOG is derived from the gaze path.
Optional distractor episodes temporarily swap the attended object for one
subject only.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np
from scipy import signal

from .errors import InvalidArgument
from .features import EOG_LABELS, GazeTrace, eog_bipolar, eye_velocity, interpolate_blinks
from .layout import channel_labels, region_map_for
from .linalg import TimeSeries
from .records import TrialRecord

SCREEN_W, SCREEN_H = 640.0, 360.0


@dataclass(frozen=True)
class SimConfig:
    n_subjects: int = 19
    n_pairs: int = 7
    trial_seconds: float = 120.0
    rate: float = 30.0
    n_channels: int = 64
    attended_gain: float = 1.0
    unattended_gain: float = 0.25
    confound_gain: float = 0.5
    noise_color: float = 1.0
    snr_db: float = 0.0
    response_kernel_length: int = 15
    feature_fidelity: float = 0.15
    saccade_rate: float = 2.0
    pursuit_gain: float = 1.0
    switch_rate: float = 0.0
    switch_seconds: float = 4.0
    region_localization: str = ""
    seed: int = 0

    def __post_init__(self):
        problems = []
        for name in ("n_subjects", "n_pairs", "n_channels", "response_kernel_length"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be at least 1")
        for name in ("attended_gain", "unattended_gain", "confound_gain", "saccade_rate",
                     "pursuit_gain", "switch_rate", "noise_color"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be nonnegative")
        if not self.rate > 0:
            problems.append("rate must be positive")
        if not self.trial_seconds * self.rate >= 2 * self.response_kernel_length:
            problems.append("trial_seconds is too short for the response kernel")
        if not 0 < self.feature_fidelity <= 1:
            problems.append("feature_fidelity must lie in (0, 1]")
        if self.switch_seconds <= 0:
            problems.append("switch_seconds must be positive")
        if problems:
            raise InvalidArgument("; ".join(problems))
        parse_localization(self.region_localization)

    @property
    def n_samples(self) -> int:
        return int(round(self.trial_seconds * self.rate))

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in fields(cls)}


def parse_localization(text: str) -> dict[str, float]:
    """``"region:weight,label:weight,*:default"`` -> mapping."""
    out: dict[str, float] = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, sep, value = item.partition(":")
        if not sep:
            raise InvalidArgument(f"region_localization entry {item!r} is not name:weight")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise InvalidArgument(f"region_localization weight {value!r} is not a number") from None
    return out


@dataclass(frozen=True)
class SubjectModel:
    kernel: np.ndarray
    topography: np.ndarray
    eye_topography: np.ndarray
    noise_mixing: np.ndarray


@dataclass(frozen=True)
class PairStimulus:
    pair_id: int
    latents: Mapping[int, np.ndarray]
    features: Mapping[int, TimeSeries]
    first_attended: int


@dataclass(frozen=True)
class TrialTruth:
    subject_id: str
    pair_id: int
    presentation: int
    attended_object: int
    focus: np.ndarray  # object actually attended at each sample
    artifact: np.ndarray  # eye-movement confound injected into the EEG (per sample, before topography)
    neural_power: float
    noise_power: float


@dataclass
class GroundTruth:
    subjects: dict[str, SubjectModel] = field(default_factory=dict)
    pairs: dict[int, PairStimulus] = field(default_factory=dict)
    trials: list[TrialTruth] = field(default_factory=list)


def subject_id(index: int) -> str:
    return f"sub-{index + 1:02d}"


def _seed(config: SimConfig, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(config.seed), *path]))


def _hann(n: int) -> np.ndarray:
    w = np.hanning(n + 2)[1:-1]
    return w / w.sum()


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    if width < 2:
        return x
    return signal.filtfilt(_hann(width), [1.0], x, axis=0, padtype="even", padlen=min(3 * width, x.shape[0] - 1))


def gen_feature(duration: float, rate: float, rng=None) -> TimeSeries:
    """Nonnegative, smooth, unit-variance stand-in for an ObjFlow series.

    Rectified low-passed noise, smoothed again; the smoothing kernels are
    nonnegative so the result never dips below zero.
    """
    rng = np.random.default_rng(rng)
    T = int(round(duration * rate))
    if T < 2:
        raise InvalidArgument("feature needs at least 2 samples")
    width = max(int(round(0.2 * rate)), 1)
    x = np.abs(_smooth(rng.standard_normal(T), width))
    x = np.maximum(_smooth(x, width), 0.0)
    sd = x.std()
    x = x / sd if sd > 0 else x
    return TimeSeries(x[:, None], rate, ("objflow",))


def pink_noise(T: int, D: int, exponent: float, rng) -> np.ndarray:
    """Columns of unit-variance ``1/f**exponent`` noise."""
    F = np.fft.rfft(rng.standard_normal((T, D)), axis=0)
    f = np.fft.rfftfreq(T)
    shape = np.zeros_like(f)
    shape[1:] = f[1:] ** (-exponent / 2.0)
    x = np.fft.irfft(F * shape[:, None], n=T, axis=0)
    return x / x.std(axis=0, keepdims=True)


def _region_profile(labels, weights: Mapping[str, float], default: Mapping[str, float]) -> np.ndarray:
    regions = region_map_for(labels)
    if weights:
        fallback = weights.get("*", 1.0)
        w = {lab: fallback for lab in labels}
        for name, value in weights.items():
            for lab in regions.get(name, (name,) if name in w else ()):
                w[lab] = value
    else:
        w = {lab: 1.0 for lab in labels}
        for name, value in default.items():
            for lab in regions.get(name, ()):
                w[lab] = value
    return np.array([w[lab] for lab in labels])


def gen_subject_model(config: SimConfig, index: int) -> SubjectModel:
    rng = _seed(config, 2, index)
    L = config.response_kernel_length
    kernel = np.hanning(L + 2)[1:-1] * (1.0 + 0.5 * rng.standard_normal(L))
    kernel /= np.linalg.norm(kernel)
    labels = channel_labels(config.n_channels)
    profile = _region_profile(
        labels, parse_localization(config.region_localization),
        {"parietal_occipital": 1.0, "central": 0.6, "temporal": 0.5, "frontal": 0.3},
    )
    topo = profile * (1.0 + 0.3 * rng.standard_normal(len(labels)))
    eye = _region_profile(labels, {}, {"frontal": 1.0, "central": 0.4, "temporal": 0.4, "parietal_occipital": 0.1})
    eye = eye * (1.0 + 0.2 * rng.standard_normal(len(labels)))
    rms = lambda v: v / max(np.sqrt(np.mean(v ** 2)), 1e-12)
    mixing = rng.standard_normal((len(labels), len(labels))) / np.sqrt(len(labels))
    return SubjectModel(kernel, rms(topo), rms(eye), mixing)


def gen_pair_stimulus(config: SimConfig, pair_index: int) -> PairStimulus:
    rng = _seed(config, 1, pair_index)
    rho = config.feature_fidelity
    latents, features = {}, {}
    for obj in (1, 2):
        m = gen_feature(config.trial_seconds, config.rate, rng).data[:, 0]
        e = gen_feature(config.trial_seconds, config.rate, rng).data[:, 0]
        f = rho * m + np.sqrt(1.0 - rho ** 2) * e
        latents[obj] = m
        features[obj] = TimeSeries((f / f.std())[:, None], config.rate, (f"objflow_{obj}",))
    first = int(rng.integers(1, 3))
    return PairStimulus(pair_index + 1, latents, features, first)


def _reflect(x: np.ndarray, upper: float) -> np.ndarray:
    return upper - np.abs(np.mod(x, 2 * upper) - upper)


def _focus(T: int, attended: int, config: SimConfig, rng) -> np.ndarray:
    focus = np.full(T, attended)
    if config.switch_rate > 0:
        p = config.switch_rate / 60.0 / config.rate
        dur = max(int(round(config.switch_seconds * config.rate)), 1)
        for start in np.flatnonzero(rng.random(T) < p):
            focus[start:start + dur] = 3 - attended
    return focus


def _gaze(drive: np.ndarray, config: SimConfig, rng) -> tuple[GazeTrace, np.ndarray]:
    T = drive.size
    rate = config.rate
    p = config.saccade_rate / rate * drive / max(drive.mean(), 1e-12)
    candidates = np.flatnonzero(rng.random(T) < np.clip(p, 0.0, 0.5))
    onsets = []
    for c in candidates:
        if c >= 1 and (not onsets or c - onsets[-1] > 3) and c + 1 < T:
            onsets.append(int(c))
    theta = np.cumsum(rng.normal(0.0, 0.15, T))
    vel = config.pursuit_gain * drive[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    vel += rng.normal(0.0, 0.3, (T, 2))
    amp = rng.uniform(40.0, 120.0, len(onsets))
    ang = rng.uniform(0.0, 2 * np.pi, len(onsets))
    jumps = amp[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
    for o, j in zip(onsets, jumps):
        vel[o] += 0.6 * j
        vel[o + 1] += 0.4 * j
    start = np.array([SCREEN_W / 2, SCREEN_H / 2])
    pos = start + np.cumsum(vel, axis=0)
    coords = np.column_stack([_reflect(pos[:, 0], SCREEN_W), _reflect(pos[:, 1], SCREEN_H)])
    blinks = []
    for b in np.flatnonzero(rng.random(T) < 0.25 / rate):
        end = min(int(b) + int(rng.integers(4, 8)), T)
        if not blinks or b >= blinks[-1][1]:
            blinks.append((int(b), end))
    raw = coords.copy()
    for a, b in blinks:
        raw[a:b] = 0.0  # tracker loss
    trace = GazeTrace(TimeSeries(raw, rate, ("gaze_a", "gaze_b")), tuple(blinks), tuple(onsets))
    return interpolate_blinks(trace), np.asarray(onsets, dtype=int)


def _eog(coords: np.ndarray, config: SimConfig, rng) -> TimeSeries:
    T = coords.shape[0]
    k = 0.05
    a = coords[:, 0] - SCREEN_W / 2
    b = coords[:, 1] - SCREEN_H / 2
    common = pink_noise(T, 2, config.noise_color, rng) * 0.5
    n = rng.normal(0.0, 0.05, (T, 4))
    data = np.column_stack([
        k * a / 2 + common[:, 0], -k * a / 2 + common[:, 0],
        k * b / 2 + common[:, 1], -k * b / 2 + common[:, 1],
    ]) + n
    return TimeSeries(data, config.rate, EOG_LABELS)


def _zscore(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


def gen_subject_trial(
    stimulus: PairStimulus,
    presentation: int,
    config: SimConfig,
    rng,
    subject: SubjectModel,
    sid: str = "sub-01",
) -> tuple[TrialRecord, TrialTruth]:
    """One subject's recording of one presentation of a video pair."""
    rng = np.random.default_rng(rng)
    attended = stimulus.first_attended if presentation == 1 else 3 - stimulus.first_attended
    T = config.n_samples
    focus = _focus(T, attended, config, rng)
    m = stimulus.latents
    drive_att = np.where(focus == 1, m[1], m[2])
    drive_other = np.where(focus == 1, m[2], m[1])

    response = lambda x: signal.lfilter(subject.kernel, [1.0], x - x.mean())
    neural = response(config.attended_gain * drive_att + config.unattended_gain * drive_other)
    unit_rms = np.sqrt(np.mean(response(drive_att) ** 2))
    signal_part = neural[:, None] * subject.topography[None, :]
    p_signal = float(np.mean(signal_part ** 2))
    p_ref = p_signal if p_signal > 0 else unit_rms ** 2
    noise = pink_noise(T, config.n_channels, config.noise_color, rng) @ subject.noise_mixing
    noise *= np.sqrt(p_ref / 10 ** (config.snr_db / 10) / np.mean(noise ** 2))

    trace, onsets = _gaze(drive_att, config, rng)
    gaze_v = eye_velocity(trace)
    artifact = config.confound_gain * unit_rms * _zscore(gaze_v.data[:, 0])
    eeg = signal_part + noise + artifact[:, None] * subject.eye_topography[None, :]

    eog = _eog(trace.coords.data, config, rng)
    sacc = np.zeros(T)
    sacc[onsets] = 1.0
    eog_v = eye_velocity(eog_bipolar(eog))
    labels = channel_labels(config.n_channels)
    modalities = {
        "EEG": TimeSeries(eeg, config.rate, labels),
        "EOG": eog,
        "GAZE": trace.coords,
        "SACC": TimeSeries(sacc[:, None], config.rate, ("saccade",)),
        "GAZE_V": gaze_v.with_data(gaze_v.data, ("gaze_velocity",)),
        "EOG_V": eog_v.with_data(eog_v.data, ("eog_velocity",)),
    }
    record = TrialRecord(sid, stimulus.pair_id, presentation, attended, modalities, dict(stimulus.features))
    truth = TrialTruth(sid, stimulus.pair_id, presentation, attended, focus, artifact,
                       p_signal, float(np.mean(noise ** 2)))
    return record, truth


def simulate_subject(config: SimConfig, index: int,
                     stimuli: Mapping[int, PairStimulus] | None = None):
    """All trials of one subject: ``n_pairs`` x 2 presentations."""
    if stimuli is None:
        stimuli = {p: gen_pair_stimulus(config, p) for p in range(config.n_pairs)}
    subject = gen_subject_model(config, index)
    sid = subject_id(index)
    records, truths = [], []
    for p in range(config.n_pairs):
        for pres in (1, 2):
            rec, tr = gen_subject_trial(stimuli[p], pres, config, _seed(config, 3, index, p, pres), subject, sid)
            records.append(rec)
            truths.append(tr)
    return records, truths, subject


def gen_dataset(config: SimConfig):
    """Every subject's records plus the ground truth, held in memory."""
    stimuli = {p: gen_pair_stimulus(config, p) for p in range(config.n_pairs)}
    truth = GroundTruth(pairs={s.pair_id: s for s in stimuli.values()})
    records = []
    for i in range(config.n_subjects):
        recs, trs, subject = simulate_subject(config, i, stimuli)
        records.extend(recs)
        truth.trials.extend(trs)
        truth.subjects[subject_id(i)] = subject
    return records, truth
