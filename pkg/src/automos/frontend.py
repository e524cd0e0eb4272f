"""Waveform-to-feature conversion feeding the recurrent estimator.

Two interchangeable frontends produce the timeseries consumed by the LSTM
stack:

* ``log_mel``: Hann-windowed power spectra projected through a triangular
  mel filterbank, floored and log-compressed. Parameter-free.
* ``conv_pool``: a bank of learned 1-D filters applied to the raw waveform
  at a fixed stride, log-magnitude compressed, then max-pooled over
  non-overlapping blocks of frames. The filters are trainable, so this
  module also provides the backward pass used during optimization.

Either timeseries can be augmented with one-step velocity and acceleration
columns. Filters may be initialized from a gammatone bank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import SAMPLE_RATE, Waveform

DELTA_MODES = ("none", "velocity", "velocity_and_acceleration")
FRONTEND_KINDS = ("log_mel", "conv_pool")


@dataclass(frozen=True)
class FrontendConfig:
    """Feature-extraction settings; defaults give 25 ms / 10 ms log-mel frames."""

    kind: str = "log_mel"
    width: int = 86
    deltas: str = "velocity_and_acceleration"
    window: int = 400
    hop: int = 160
    n_fft: int = 512
    fmin: float = 125.0
    fmax: float = 7500.0
    log_floor: float = 1e-6
    conv_filter_len: int = 400
    conv_pool_size: int = 4
    gammatone_init: bool = False

    def __post_init__(self):
        if self.kind not in FRONTEND_KINDS:
            raise ValueError(f"unknown frontend kind {self.kind!r}")
        if self.deltas not in DELTA_MODES:
            raise ValueError(f"unknown delta mode {self.deltas!r}")
        if not 20 <= self.width <= 100:
            raise ValueError("timeseries width must be in 20..100")
        if self.window > self.n_fft:
            raise ValueError("analysis window must not exceed n_fft")
        if self.hop < 1:
            raise ValueError("hop must be >= 1")
        if not 0 <= self.fmin < self.fmax <= SAMPLE_RATE / 2:
            raise ValueError("need 0 <= fmin < fmax <= Nyquist")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        if self.conv_filter_len < 2 or self.conv_pool_size < 1:
            raise ValueError("bad conv frontend geometry")

    @property
    def feature_dim(self) -> int:
        """Timeseries width after optional delta columns."""
        return self.width * delta_multiplier(self.deltas)


@dataclass
class FeatureSeq:
    """Time-major feature matrix with an explicit valid-frame count.

    ``values[t]`` for ``t >= valid_len`` is padding and must not influence
    any downstream computation.
    """

    values: np.ndarray
    valid_len: int = -1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError("feature matrix must be (T, D) with T, D >= 1")
        if self.valid_len < 0:
            self.valid_len = self.values.shape[0]
        if not 1 <= self.valid_len <= self.values.shape[0]:
            raise ValueError("valid_len out of range")
        if not np.all(np.isfinite(self.values[: self.valid_len])):
            raise ValueError("feature values must be finite")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def delta_multiplier(mode: str) -> int:
    if mode not in DELTA_MODES:
        raise ValueError(f"unknown delta mode {mode!r}")
    return {"none": 1, "velocity": 2, "velocity_and_acceleration": 3}[mode]


def frame_signal(waveform: Waveform, window: int, hop: int) -> np.ndarray:
    """Slice a waveform into frames of `window` samples every `hop` samples.

    Frame t starts at ``t * hop``; no padding is applied, so the frame count
    is ``floor((n - window) / hop) + 1``.
    """
    samples = waveform.samples
    if len(samples) < window:
        raise ValueError(
            f"waveform too short: {len(samples)} samples < one {window}-sample window"
        )
    n_frames = (len(samples) - window) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(samples, window)[::hop]
    return np.ascontiguousarray(view[:n_frames])


def hz_to_mel(freq_hz) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int, n_fft: int, sample_rate: int, fmin: float, fmax: float
) -> np.ndarray:
    """Triangular filters with centers equally spaced on the mel scale.

    Returns an ``(n_mels, n_fft // 2 + 1)`` weight matrix. Every filter has
    nonnegative weights, nonzero support, and strictly increasing center
    frequency.
    """
    if n_mels < 1:
        raise ValueError("need at least one mel filter")
    if not 0 <= fmin < fmax:
        raise ValueError("need 0 <= fmin < fmax")
    if fmax > sample_rate / 2:
        raise ValueError(f"fmax {fmax} exceeds Nyquist {sample_rate / 2}")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    weights = np.zeros((n_mels, n_fft // 2 + 1))
    for k in range(n_mels):
        lo, center, hi = edges[k], edges[k + 1], edges[k + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        weights[k] = np.maximum(0.0, np.minimum(rising, falling))
        if not np.any(weights[k] > 0.0):
            raise ValueError(f"mel filter {k} has empty support; increase n_fft")
    return weights


def filter_center_frequencies(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Center frequencies (Hz) of the mel filters, for inspection and tests."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


def _hann(window: int) -> np.ndarray:
    # Periodic Hann, the standard analysis window for overlapping frames.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)


def log_mel_spectrogram(waveform: Waveform, cfg: FrontendConfig) -> FeatureSeq:
    """Log-compressed mel-band energies, one row per analysis frame."""
    if cfg.kind != "log_mel":
        raise ValueError(f"config kind is {cfg.kind!r}, expected 'log_mel'")
    frames = frame_signal(waveform, cfg.window, cfg.hop)
    windowed = frames * _hann(cfg.window)
    power = np.abs(np.fft.rfft(windowed, n=cfg.n_fft, axis=1)) ** 2
    fbank = mel_filterbank(cfg.width, cfg.n_fft, waveform.sample_rate, cfg.fmin, cfg.fmax)
    energies = power @ fbank.T
    return FeatureSeq(np.log(np.maximum(energies, cfg.log_floor)))


# ---------------------------------------------------------------------------
# Delta columns
# ---------------------------------------------------------------------------


def delta_stack(values: np.ndarray, mode: str) -> np.ndarray:
    """Append one-step velocity (and acceleration) columns along the last axis.

    Velocity is the backward difference with a zero first frame; acceleration
    is the backward difference of the velocity, again zero at the first frame.
    Accepts (T, D) or any (..., T, D) stack of sequences.
    """
    mult = delta_multiplier(mode)
    if mult == 1:
        return values
    velocity = np.zeros_like(values)
    velocity[..., 1:, :] = values[..., 1:, :] - values[..., :-1, :]
    if mult == 2:
        return np.concatenate([values, velocity], axis=-1)
    accel = np.zeros_like(values)
    accel[..., 1:, :] = velocity[..., 1:, :] - velocity[..., :-1, :]
    return np.concatenate([values, velocity, accel], axis=-1)


def delta_stack_backward(d_stacked: np.ndarray, mode: str) -> np.ndarray:
    """Adjoint of :func:`delta_stack`: gradient w.r.t. the original columns."""
    mult = delta_multiplier(mode)
    if mult == 1:
        return d_stacked
    dim = d_stacked.shape[-1] // mult
    d_values = d_stacked[..., :dim].copy()
    d_velocity = d_stacked[..., dim : 2 * dim].copy()
    if mult == 3:
        d_accel = d_stacked[..., 2 * dim :]
        # a[t] = v[t] - v[t-1] for t >= 1, a[0] = 0
        d_velocity[..., 1:, :] += d_accel[..., 1:, :]
        d_velocity[..., :-1, :] -= d_accel[..., 1:, :]
    # v[t] = x[t] - x[t-1] for t >= 1, v[0] = 0
    d_values[..., 1:, :] += d_velocity[..., 1:, :]
    d_values[..., :-1, :] -= d_velocity[..., 1:, :]
    return d_values


def append_deltas(features: FeatureSeq, mode: str) -> FeatureSeq:
    """FeatureSeq wrapper around :func:`delta_stack`; T is unchanged."""
    return FeatureSeq(delta_stack(features.values, mode), valid_len=features.valid_len)


# ---------------------------------------------------------------------------
# Learned conv+pool frontend
# ---------------------------------------------------------------------------


def conv_frame_count(n_samples: int, filter_len: int, hop: int) -> int:
    if n_samples < filter_len:
        raise ValueError(
            f"waveform too short: {n_samples} samples < filter length {filter_len}"
        )
    return (n_samples - filter_len) // hop + 1


def conv_pool_forward(
    samples: np.ndarray,
    filters: np.ndarray,
    hop: int,
    pool_size: int,
    log_floor: float,
):
    """Strided filterbank response, log-magnitude compressed and max-pooled.

    Returns ``(values, cache)`` where values is ``(ceil(Tc / pool_size), W)``
    and the cache carries what the backward pass needs. A trailing pool
    window shorter than ``pool_size`` is kept.
    """
    n_filters, filter_len = filters.shape
    n_conv = conv_frame_count(len(samples), filter_len, hop)
    frames = np.lib.stride_tricks.sliding_window_view(samples, filter_len)[::hop][:n_conv]
    conv_out = frames @ filters.T  # (Tc, W)
    compressed = np.log(np.maximum(np.abs(conv_out), log_floor))
    n_pooled = -(-n_conv // pool_size)
    padded = np.full((n_pooled * pool_size, n_filters), -np.inf)
    padded[:n_conv] = compressed
    blocks = padded.reshape(n_pooled, pool_size, n_filters)
    argmax = blocks.argmax(axis=1)  # earliest max within each block
    values = np.take_along_axis(blocks, argmax[:, None, :], axis=1)[:, 0, :]
    cache = (frames, conv_out, argmax, n_conv, pool_size, log_floor)
    return values, cache


def conv_pool_backward(cache, d_values: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """Gradient of the pooled output w.r.t. the filters.

    Pool gradients route to the (earliest) argmax frame; the log-magnitude
    stage passes gradient only where |conv| exceeded the floor.
    """
    frames, conv_out, argmax, n_conv, pool_size, log_floor = cache
    n_pooled, n_filters = d_values.shape
    d_compressed = np.zeros((n_pooled * pool_size, n_filters))
    rows = argmax + (np.arange(n_pooled) * pool_size)[:, None]
    np.add.at(d_compressed, (rows, np.arange(n_filters)[None, :]), d_values)
    d_compressed = d_compressed[:n_conv]
    live = np.abs(conv_out) > log_floor
    d_conv = np.where(live, d_compressed / np.where(live, conv_out, 1.0), 0.0)
    return d_conv.T @ frames


def conv_pool_frontend(
    waveform: Waveform, filters: np.ndarray, cfg: FrontendConfig
) -> FeatureSeq:
    """Forward-only conv+pool feature extraction for a single waveform."""
    if cfg.kind != "conv_pool":
        raise ValueError(f"config kind is {cfg.kind!r}, expected 'conv_pool'")
    if filters.shape[0] != cfg.width:
        raise ValueError(f"expected {cfg.width} filters, got {filters.shape[0]}")
    values, _ = conv_pool_forward(
        waveform.samples, filters, cfg.hop, cfg.conv_pool_size, cfg.log_floor
    )
    return FeatureSeq(values)


# ---------------------------------------------------------------------------
# Gammatone initialization
# ---------------------------------------------------------------------------


def erb_bandwidth(freq_hz) -> np.ndarray:
    """Equivalent rectangular bandwidth at a given center frequency."""
    return 24.7 + 0.108 * np.asarray(freq_hz, dtype=np.float64)


def _hz_to_erb_number(freq_hz) -> np.ndarray:
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(freq_hz, dtype=np.float64))


def _erb_number_to_hz(erbs) -> np.ndarray:
    return (10.0 ** (np.asarray(erbs, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def gammatone_init(
    n_filters: int,
    filter_len: int,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = 125.0,
    fmax: float = 7500.0,
) -> np.ndarray:
    """Order-4 gammatone impulse responses, unit L2 norm per filter.

    Filter k is ``t^3 * exp(-2*pi*b(f_k)*t) * cos(2*pi*f_k*t)`` with
    ``b(f) = 1.019 * erb(f)`` and center frequencies equally spaced on the
    ERB-number scale over [fmin, fmax].
    """
    if n_filters < 1 or filter_len < 2:
        raise ValueError("need n_filters >= 1 and filter_len >= 2")
    centers = _erb_number_to_hz(
        np.linspace(_hz_to_erb_number(fmin), _hz_to_erb_number(fmax), n_filters)
    )
    t = np.arange(filter_len) / sample_rate
    decay = 1.019 * erb_bandwidth(centers)
    filters = (
        t[None, :] ** 3
        * np.exp(-2.0 * np.pi * decay[:, None] * t[None, :])
        * np.cos(2.0 * np.pi * centers[:, None] * t[None, :])
    )
    norms = np.linalg.norm(filters, axis=1, keepdims=True)
    return filters / norms


# ---------------------------------------------------------------------------
# Network input assembly
# ---------------------------------------------------------------------------


def prepare_input(waveform: Waveform, cfg: FrontendConfig) -> FeatureSeq:
    """Build the network input sequence for one waveform.

    For the log-mel frontend this is the finished (delta-augmented) feature
    matrix. For the conv frontend the learned filters live inside the
    network, so the raw samples are passed through as a (n, 1) sequence.
    """
    if cfg.kind == "log_mel":
        return append_deltas(log_mel_spectrogram(waveform, cfg), cfg.deltas)
    return FeatureSeq(waveform.samples[:, None])
