"""Stimulus and ocular features plus the small amount of DSP the pipeline needs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import InvalidArgument
from .linalg import TimeSeries

# bipolar derivations of the 4-channel EOG montage
EOG_LABELS = ("EOG_LC", "EOG_RC", "EOG_AR", "EOG_BR")


@dataclass(frozen=True)
class GazeTrace:
    """Screen-space gaze coordinates (channels ``a``, ``b``) with event annotations.

    ``blink_intervals`` are half-open ``(start, end)`` sample ranges.
    """

    coords: TimeSeries
    blink_intervals: tuple[tuple[int, int], ...] = field(default=())
    saccade_onsets: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.coords.n_channels != 2:
            raise InvalidArgument("gaze coordinates need exactly 2 channels")
        T = self.coords.n_samples
        intervals = tuple((int(a), int(b)) for a, b in self.blink_intervals)
        for a, b in intervals:
            if not 0 <= a < b <= T:
                raise InvalidArgument(f"blink interval [{a}, {b}) outside [0, {T})")
        onsets = tuple(int(o) for o in self.saccade_onsets)
        if any(not 0 <= o < T for o in onsets):
            raise InvalidArgument("saccade onset outside the recording")
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise InvalidArgument("saccade onsets must be strictly increasing")
        object.__setattr__(self, "blink_intervals", intervals)
        object.__setattr__(self, "saccade_onsets", onsets)


@dataclass(frozen=True)
class FlowField:
    """Per-frame pixel velocities, shape ``(F, H, W, 2)`` as ``(v_x, v_y)``."""

    v: np.ndarray
    frame_rate: float

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.ndim != 4 or v.shape[-1] != 2:
            raise InvalidArgument(f"flow field must have shape (F, H, W, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("flow field contains non-finite values")
        if not self.frame_rate > 0:
            raise InvalidArgument("frame rate must be positive")
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class ObjectMask:
    """Per-frame boolean object mask, shape ``(F, H, W)``."""

    mask: np.ndarray
    object_id: str = "object"

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 3:
            raise InvalidArgument(f"object mask must have shape (F, H, W), got {m.shape}")
        object.__setattr__(self, "mask", m)


def eog_bipolar(eog: TimeSeries) -> TimeSeries:
    """Horizontal (left minus right canthus) and vertical (above minus below) EOG."""
    x = eog.select(EOG_LABELS).data
    horizontal = x[:, 0] - x[:, 1]
    vertical = x[:, 2] - x[:, 3]
    return TimeSeries(np.column_stack([horizontal, vertical]), eog.rate, ("HEOG", "VEOG"))


def eye_velocity(trace) -> TimeSeries:
    """Sample-to-sample eye displacement magnitude; the first sample is 0.

    Accepts a :class:`GazeTrace` or any 2-channel series (e.g. bipolar EOG).
    """
    coords = trace.coords if isinstance(trace, GazeTrace) else trace
    if coords.n_channels != 2:
        raise InvalidArgument("eye velocity needs a 2-channel (horizontal, vertical) series")
    if coords.n_samples < 2:
        raise InvalidArgument("eye velocity needs at least 2 samples")
    d = np.diff(coords.data, axis=0)
    v = np.concatenate([[0.0], np.hypot(d[:, 0], d[:, 1])])
    return TimeSeries(v[:, None], coords.rate, ("velocity",))


def obj_flow(flow: FlowField, mask: ObjectMask) -> TimeSeries:
    """Mean optical-flow magnitude inside the object mask, one value per frame."""
    if flow.v.shape[:3] != mask.mask.shape:
        raise InvalidArgument(f"flow {flow.v.shape[:3]} and mask {mask.mask.shape} shapes differ")
    counts = mask.mask.sum(axis=(1, 2))
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise InvalidArgument(f"object mask {mask.object_id!r} is empty on frame {int(empty[0])}")
    mag = np.hypot(flow.v[..., 0], flow.v[..., 1])
    values = (mag * mask.mask).sum(axis=(1, 2)) / counts
    return TimeSeries(values[:, None], flow.frame_rate, (f"objflow_{mask.object_id}",))


def _block_displacement(ref: np.ndarray, nxt: np.ndarray, y0: int, x0: int, h: int, w: int,
                        search: int) -> tuple[int, int]:
    H, W = nxt.shape
    patch = ref[y0:y0 + h, x0:x0 + w]
    best = None
    for dy in range(-search, search + 1):
        if y0 + dy < 0 or y0 + dy + h > H:
            continue
        for dx in range(-search, search + 1):
            if x0 + dx < 0 or x0 + dx + w > W:
                continue
            sad = float(np.abs(nxt[y0 + dy:y0 + dy + h, x0 + dx:x0 + dx + w] - patch).sum())
            # ties go to the smallest displacement, so flat regions stay at rest
            key = (sad, dx * dx + dy * dy, abs(dy), abs(dx))
            if best is None or key < best[0]:
                best = (key, dx, dy)
    return best[1], best[2]


def block_flow(frames: np.ndarray, block: int = 8, search: int = 4, frame_rate: float = 30.0) -> FlowField:
    """Integer block-matching motion estimate between consecutive frames.

    Every block of frame ``t`` is matched in frame ``t + 1`` within
    ``+-search`` pixels by sum of absolute differences; the winning
    displacement is broadcast to the block's pixels. The last frame repeats
    the previous field.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 3 or frames.shape[0] < 2:
        raise InvalidArgument("block_flow needs a (F >= 2, H, W) grayscale frame stack")
    if block < 1 or search < 1:
        raise InvalidArgument("block and search must be at least 1")
    F, H, W = frames.shape
    if H < block or W < block:
        raise InvalidArgument(f"frame {H}x{W} is smaller than block {block}")
    v = np.zeros((F, H, W, 2))
    for t in range(F - 1):
        for y0 in range(0, H, block):
            for x0 in range(0, W, block):
                h, w = min(block, H - y0), min(block, W - x0)
                dx, dy = _block_displacement(frames[t], frames[t + 1], y0, x0, h, w, search)
                v[t, y0:y0 + h, x0:x0 + w] = (dx, dy)
    v[F - 1] = v[F - 2]
    return FlowField(v, frame_rate)


def zero_phase_filter(series: TimeSeries, kernel) -> TimeSeries:
    """Forward-backward FIR filtering with reflected edges (zero phase, |H|^2 gain)."""
    b = np.asarray(kernel, dtype=float).ravel()
    if b.size == 0:
        raise InvalidArgument("filter kernel is empty")
    T = series.n_samples
    if b.size > T:
        raise InvalidArgument(f"kernel of {b.size} taps is longer than the series ({T} samples)")
    padlen = min(3 * b.size, T - 1)
    y = signal.filtfilt(b, [1.0], series.data, axis=0, padtype="even" if padlen else None, padlen=padlen)
    return series.with_data(y)


def antialias_kernel(factor: int, n_taps: int | None = None) -> np.ndarray:
    """Low-pass FIR with cutoff at 0.8x the Nyquist rate after decimation."""
    if n_taps is None:
        n_taps = 40 * factor + 1
    return signal.firwin(n_taps, 0.8 / factor, window="hamming")


def downsample(series: TimeSeries, factor: int) -> TimeSeries:
    """Zero-phase anti-aliasing followed by keeping every ``factor``-th sample."""
    if int(factor) != factor or factor < 1:
        raise InvalidArgument(f"downsampling factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return series
    n_taps = 40 * factor + 1
    if n_taps > series.n_samples:
        n_taps = series.n_samples - (1 - series.n_samples % 2)
    filtered = zero_phase_filter(series, antialias_kernel(factor, max(n_taps, 1)))
    return TimeSeries(filtered.data[::factor], series.rate / factor, series.labels)


def interpolate_blinks(trace: GazeTrace) -> GazeTrace:
    """Linearly bridge every blink interval; edge blinks hold the nearest valid sample."""
    if not trace.blink_intervals:
        return trace
    T = trace.coords.n_samples
    valid = np.ones(T, dtype=bool)
    for a, b in trace.blink_intervals:
        valid[a:b] = False
    if not valid.any():
        raise InvalidArgument("every sample lies inside a blink")
    t = np.arange(T)
    data = trace.coords.data.copy()
    for c in range(data.shape[1]):
        data[~valid, c] = np.interp(t[~valid], t[valid], data[valid, c])
    return GazeTrace(trace.coords.with_data(data), trace.blink_intervals, trace.saccade_onsets)


def saccade_mask(onsets, rate: float, T: int, pre_s: float = 0.33, post_s: float = 1.0) -> np.ndarray:
    """Keep-mask that drops ``[onset - pre, onset + post]`` around every saccade."""
    keep = np.ones(int(T), dtype=bool)
    pre = int(round(pre_s * rate))
    post = int(round(post_s * rate))
    for o in onsets:
        keep[max(int(o) - pre, 0):min(int(o) + post + 1, T)] = False
    return keep


def onsets_from_binary(sacc: TimeSeries) -> np.ndarray:
    """Saccade onset samples from a binary event series."""
    return np.flatnonzero(sacc.data[:, 0] > 0.5)
