"""Seeded synthetic speech-like corpus with controllable naturalness.

Waveforms are harmonic "voice-like" tones (a few harmonics with slow pitch
drift and amplitude movement) degraded in proportion to (5 - quality):

* additive white noise, SNR from 40 dB at quality 5 down to 5 dB at 1,
* hard join discontinuities (phase and level jumps at seeded instants,
  their rate growing as quality drops),
* a random spectral tilt whose magnitude also scales with (5 - quality).

Noise level and join rate carry bounded per-utterance jitter, so the
acoustics are an informative but imperfect proxy of the rated quality.

Simulated raters score an utterance as the true quality plus a per-rater
bias and per-rating noise, snapped to the half-point grid. Everything is
keyed off a corpus seed plus the utterance index, so regeneration is
byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import SAMPLE_RATE, RatingSet, Waveform, manifest_line, write_wav
from .evaluation import quantize_mos
from .seeds import rng_for

#: Join discontinuities per second at quality 1 (scales linearly to 0 at 5).
JOIN_RATE_PER_QUALITY = 1.5

#: SNR endpoints of the additive-noise degradation, in dB.
SNR_DB_AT_Q1 = 5.0
SNR_DB_AT_Q5 = 40.0

#: Per-utterance acoustic jitter: the realized SNR wanders around the
#: schedule (bounded so quality 5 stays above 35 dB) and the join rate gets
#: a bounded multiplicative factor. Quality is an imperfect proxy of the
#: acoustics, as it would be for real synthesizers.
SNR_JITTER_STD = 4.0
SNR_JITTER_CLIP = 4.5
JOIN_RATE_LOG_JITTER = 0.4

QUALITY_JITTER_STD = 0.15
PEAK_LEVEL = 0.9


@dataclass(frozen=True)
class SynthSpec:
    """One simulated synthesizer: a quality level and an utterance budget."""

    synthesizer_id: str
    quality: float
    n_utterances: int
    duration_range: tuple[float, float] = (1.0, 3.0)

    def __post_init__(self):
        if not 1.0 <= self.quality <= 5.0:
            raise ValueError("quality must be in [1, 5]")
        if self.n_utterances < 1:
            raise ValueError("n_utterances must be >= 1")
        lo, hi = self.duration_range
        if not 0.1 <= lo <= hi:
            raise ValueError("duration range must satisfy 0.1 <= lo <= hi")


@dataclass(frozen=True)
class RaterModel:
    """Simulated rating panel."""

    n_raters: int = 5
    rater_bias_std: float = 0.25
    rating_noise_std: float = 0.5

    def __post_init__(self):
        if self.n_raters < 1:
            raise ValueError("need at least one rater")
        if self.rater_bias_std < 0 or self.rating_noise_std < 0:
            raise ValueError("standard deviations must be nonnegative")


def join_event_count(quality: float, duration: float, rate_scale: float = 1.0) -> int:
    """Join discontinuities for an utterance: ceil of rate * duration.

    The ceiling guarantees at least one event whenever the rate is positive,
    so any quality below 5 produces strictly more events than quality 5.
    """
    return int(np.ceil(JOIN_RATE_PER_QUALITY * (5.0 - quality) * duration * rate_scale))


def snr_db_for_quality(quality: float) -> float:
    return SNR_DB_AT_Q1 + (SNR_DB_AT_Q5 - SNR_DB_AT_Q1) * (quality - 1.0) / 4.0


def synth_waveform_components(quality: float, duration: float, seed: int):
    """Degraded signal split into (pre-noise signal, additive noise).

    Both components carry the final peak normalization, so their sum is the
    public waveform and SNR measurements against the pre-noise part are
    scale-consistent. Exposed for diagnostics and tests.
    """
    if not 1.0 <= quality <= 5.0:
        raise ValueError("quality must be in [1, 5]")
    if duration < 0.1:
        raise ValueError("duration must be at least 0.1 s")
    rng = rng_for(seed)
    n = int(round(duration * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    f0 = rng.uniform(95.0, 225.0)
    drift_rate = rng.uniform(0.3, 1.5)
    drift_phase = rng.uniform(0.0, 2.0 * np.pi)
    drift_depth = rng.uniform(0.01, 0.04)
    n_harmonics = int(rng.integers(3, 7))
    amp_decay = rng.uniform(0.6, 1.4)
    harmonic_phases = rng.uniform(0.0, 2.0 * np.pi, n_harmonics)
    harmonic_gains = rng.uniform(0.5, 1.0, n_harmonics)
    env_rate = rng.uniform(1.5, 4.0)
    env_phase = rng.uniform(0.0, 2.0 * np.pi)
    tilt_db_per_oct = rng.uniform(-1.0, 1.0) * (5.0 - quality)
    snr_jitter = float(np.clip(rng.normal(0.0, SNR_JITTER_STD), -SNR_JITTER_CLIP, SNR_JITTER_CLIP))
    rate_scale = float(np.exp(rng.uniform(-JOIN_RATE_LOG_JITTER, JOIN_RATE_LOG_JITTER)))

    n_events = join_event_count(quality, duration, rate_scale)
    event_pos = np.sort(rng.uniform(0.05, 0.95, n_events))
    event_samples = (event_pos * n).astype(np.int64)
    phase_jumps = rng.uniform(0.5 * np.pi, 1.5 * np.pi, n_events)
    segment_gains = np.exp(rng.uniform(-0.35, 0.35, n_events + 1))
    noise = rng.standard_normal(n)

    inst_freq = f0 * (1.0 + drift_depth * np.sin(2.0 * np.pi * drift_rate * t + drift_phase))
    base_phase = 2.0 * np.pi * np.cumsum(inst_freq) / SAMPLE_RATE
    jump_step = np.zeros(n)
    for pos, jump in zip(event_samples, phase_jumps):
        jump_step[pos:] += jump
    phase = base_phase + jump_step

    signal = np.zeros(n)
    for k in range(n_harmonics):
        amp = harmonic_gains[k] / (k + 1) ** amp_decay
        signal += amp * np.sin((k + 1) * phase + harmonic_phases[k])

    envelope = 0.55 + 0.45 * np.sin(2.0 * np.pi * env_rate * t + env_phase)
    segment_idx = np.searchsorted(event_samples, np.arange(n), side="right")
    signal = signal * envelope * segment_gains[segment_idx]

    if tilt_db_per_oct != 0.0:
        spectrum = np.fft.rfft(signal)
        freqs = np.maximum(np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE), 30.0)
        gain = 10.0 ** (tilt_db_per_oct * np.log2(freqs / 500.0) / 20.0)
        signal = np.fft.irfft(spectrum * gain, n)

    signal_power = float(np.mean(signal**2))
    target_snr_db = snr_db_for_quality(quality) + snr_jitter
    noise_power = signal_power / 10.0 ** (target_snr_db / 10.0)
    noise = noise * np.sqrt(noise_power)

    mixed = signal + noise
    scale = PEAK_LEVEL / float(np.max(np.abs(mixed)))
    return signal * scale, noise * scale


def synth_waveform(quality: float, duration: float, seed: int) -> Waveform:
    """Voice-like waveform whose degradations scale with (5 - quality)."""
    signal, noise = synth_waveform_components(quality, duration, seed)
    return Waveform(signal + noise)


def simulate_ratings(quality: float, rater_model: RaterModel, seed: int) -> RatingSet:
    """One rating per rater: quality + bias_j + noise, snapped to the grid."""
    rng = rng_for(seed)
    biases = rng.normal(0.0, rater_model.rater_bias_std, rater_model.n_raters)
    noise = rng.normal(0.0, rater_model.rating_noise_std, rater_model.n_raters)
    return RatingSet(tuple(quantize_mos(quality + b + e) for b, e in zip(biases, noise)))


def gen_corpus(
    specs: list[SynthSpec],
    rater_model: RaterModel,
    out_dir,
    seed: int,
    *,
    duration_quality_pull: float = 0.35,
) -> Path:
    """Write WAVs, a loadable manifest, and a ground-truth sidecar.

    Per-utterance quality is jittered by Normal(0, 0.15) around the spec
    quality and clamped to [1, 5]. Durations mix a uniform draw with a
    (5 - quality) term (weight ``duration_quality_pull``), so longer
    utterances weakly indicate lower quality. The sidecar ``truth.tsv``
    holds (synthesizer_id, utterance_id, true_quality) per line.

    Returns the manifest path. Identical arguments reproduce the corpus
    byte-for-byte.
    """
    if not specs:
        raise ValueError("need at least one synthesizer spec")
    if not 0.0 <= duration_quality_pull <= 1.0:
        raise ValueError("duration_quality_pull must be in [0, 1]")
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)

    manifest_lines = []
    truth_lines = []
    utt_index = 0
    for spec in specs:
        lo, hi = spec.duration_range
        for i in range(spec.n_utterances):
            streams = np.random.SeedSequence([seed, utt_index]).spawn(3)
            local = np.random.default_rng(streams[0])
            wav_seed = int(streams[1].generate_state(1, np.uint64)[0])
            rating_seed = int(streams[2].generate_state(1, np.uint64)[0])
            utt_index += 1

            quality = float(np.clip(spec.quality + local.normal(0.0, QUALITY_JITTER_STD), 1.0, 5.0))
            frac = float(
                np.clip(
                    (1.0 - duration_quality_pull) * local.uniform()
                    + duration_quality_pull * (5.0 - quality) / 4.0,
                    0.0,
                    1.0,
                )
            )
            duration = lo + (hi - lo) * frac

            utt_id = f"{spec.synthesizer_id}-{i:04d}"
            wav_rel = f"wav/{utt_id}.wav"
            write_wav(out_dir / wav_rel, synth_waveform(quality, duration, wav_seed))
            ratings = simulate_ratings(quality, rater_model, rating_seed)
            manifest_lines.append(
                manifest_line(utt_id, spec.synthesizer_id, wav_rel, ratings.ratings)
            )
            truth_lines.append(f"{spec.synthesizer_id}\t{utt_id}\t{quality!r}")

    manifest_path = out_dir / "manifest.jsonl"
    manifest_path.write_text("".join(line + "\n" for line in manifest_lines), encoding="utf-8")
    (out_dir / "truth.tsv").write_text(
        "".join(line + "\n" for line in truth_lines), encoding="utf-8"
    )
    return manifest_path
