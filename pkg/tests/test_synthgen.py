import hashlib

import numpy as np
import pytest

from automos.corpus import load_manifest, read_wav, utterance_mos
from automos.evaluation import spearman
from automos.synthgen import (
    RaterModel,
    SynthSpec,
    gen_corpus,
    join_event_count,
    simulate_ratings,
    snr_db_for_quality,
    synth_waveform,
    synth_waveform_components,
)


def measured_snr_db(signal, noise):
    return 10.0 * np.log10(np.sum(signal**2) / np.sum(noise**2))


class TestWaveforms:
    def test_high_quality_snr(self):
        for seed in (0, 1, 2):
            signal, noise = synth_waveform_components(5.0, 1.5, seed)
            assert measured_snr_db(signal, noise) >= 35.0

    def test_snr_schedule_endpoints(self):
        assert snr_db_for_quality(5.0) == pytest.approx(40.0)
        assert snr_db_for_quality(1.0) == pytest.approx(5.0)

    def test_low_quality_has_strictly_more_join_events(self):
        for duration in (0.5, 1.0, 2.7):
            assert join_event_count(1.0, duration) > join_event_count(5.0, duration)
        assert join_event_count(5.0, 2.0) == 0

    def test_deterministic_samples(self):
        a = synth_waveform(2.7, 1.1, seed=99)
        b = synth_waveform(2.7, 1.1, seed=99)
        assert np.array_equal(a.samples, b.samples)

    def test_peak_normalization_and_validity(self):
        wav = synth_waveform(1.0, 0.7, seed=5)
        peak = np.max(np.abs(wav.samples))
        assert peak == pytest.approx(0.9, abs=1e-9)
        assert len(wav) == int(round(0.7 * 16000))

    def test_quality_bounds_checked(self):
        with pytest.raises(ValueError):
            synth_waveform(0.5, 1.0, 0)
        with pytest.raises(ValueError):
            synth_waveform(3.0, 0.05, 0)

    def test_noise_floor_rises_as_quality_drops(self):
        low_signal, low_noise = synth_waveform_components(1.5, 1.0, seed=3)
        high_signal, high_noise = synth_waveform_components(4.5, 1.0, seed=3)
        assert measured_snr_db(low_signal, low_noise) < measured_snr_db(high_signal, high_noise)


class TestRatings:
    def test_noise_free_quantization(self):
        rm = RaterModel(n_raters=6, rater_bias_std=0.0, rating_noise_std=0.0)
        ratings = simulate_ratings(3.2, rm, seed=0)
        assert ratings.ratings == (3.0,) * 6

    def test_monte_carlo_mean(self):
        rm = RaterModel(n_raters=100_000, rater_bias_std=0.0, rating_noise_std=0.5)
        ratings = simulate_ratings(3.0, rm, seed=1)
        assert np.mean(ratings.ratings) == pytest.approx(3.0, abs=0.02)

    def test_outputs_on_grid(self):
        rm = RaterModel(n_raters=50, rater_bias_std=0.4, rating_noise_std=0.9)
        for seed in range(5):
            ratings = simulate_ratings(2.4, rm, seed=seed)
            for r in ratings.ratings:
                assert r in {1.0 + 0.5 * k for k in range(9)}

    def test_deterministic(self):
        rm = RaterModel()
        assert simulate_ratings(3.3, rm, 7) == simulate_ratings(3.3, rm, 7)


def tree_digest(root):
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


class TestGenCorpus:
    def test_counts_and_roundtrip(self, tmp_path):
        specs = [
            SynthSpec("alpha", 2.0, 5, (0.2, 0.4)),
            SynthSpec("beta", 4.0, 5, (0.2, 0.4)),
        ]
        manifest = gen_corpus(specs, RaterModel(n_raters=3), tmp_path / "c", seed=1)
        assert len(manifest.read_text().splitlines()) == 10
        assert len(list((tmp_path / "c" / "wav").glob("*.wav"))) == 10
        corpus = load_manifest(manifest)
        assert len(corpus) == 10
        assert corpus.synthesizers == ("alpha", "beta")
        read_wav(corpus.utterances[0].wav_path)  # decodes cleanly
        truth = (tmp_path / "c" / "truth.tsv").read_text().splitlines()
        assert len(truth) == 10
        synth_id, utt_id, quality = truth[0].split("\t")
        assert synth_id == "alpha" and utt_id == "alpha-0000"
        assert 1.0 <= float(quality) <= 5.0

    def test_byte_identical_regeneration(self, tmp_path):
        specs = [SynthSpec("s", 3.0, 4, (0.2, 0.3))]
        gen_corpus(specs, RaterModel(), tmp_path / "a", seed=5)
        gen_corpus(specs, RaterModel(), tmp_path / "b", seed=5)
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_synth_mos_monotone_in_quality(self, tmp_path):
        qualities = np.linspace(1.5, 4.5, 12)
        specs = [
            SynthSpec(f"s{k:02d}", float(q), 20, (0.2, 0.3)) for k, q in enumerate(qualities)
        ]
        manifest = gen_corpus(specs, RaterModel(n_raters=5), tmp_path / "c", seed=2)
        corpus = load_manifest(manifest)
        mean_mos = []
        for spec in specs:
            values = [
                utterance_mos(u.ratings)
                for u in corpus
                if u.synthesizer_id == spec.synthesizer_id
            ]
            mean_mos.append(np.mean(values))
        assert spearman(mean_mos, qualities) == pytest.approx(1.0)

    def test_duration_weakly_anticorrelated_with_quality(self, tmp_path):
        from automos.corpus import wav_duration_seconds
        from automos.evaluation import pearson

        specs = [
            SynthSpec(f"s{k}", float(q), 30, (0.2, 0.6))
            for k, q in enumerate(np.linspace(1.5, 4.5, 6))
        ]
        manifest = gen_corpus(specs, RaterModel(), tmp_path / "c", seed=3)
        corpus = load_manifest(manifest)
        truth = {}
        for line in (tmp_path / "c" / "truth.tsv").read_text().splitlines():
            _, utt_id, quality = line.split("\t")
            truth[utt_id] = float(quality)
        durations = [wav_duration_seconds(u.wav_path) for u in corpus]
        qualities = [truth[u.id] for u in corpus]
        r = pearson(durations, qualities)
        assert -0.75 < r < -0.15

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SynthSpec("x", 6.0, 1)
        with pytest.raises(ValueError):
            SynthSpec("x", 3.0, 0)
        with pytest.raises(ValueError):
            RaterModel(n_raters=0)
