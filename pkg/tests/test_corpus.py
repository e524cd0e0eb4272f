import json
import wave

import numpy as np
import pytest

from automos.corpus import (
    CATEGORY_VALUES,
    Corpus,
    CorpusError,
    RatingSet,
    Utterance,
    Waveform,
    category_to_rating,
    empirical_category_dist,
    load_manifest,
    manifest_line,
    rating_to_category,
    read_wav,
    save_manifest,
    utterance_mos,
    wav_duration_seconds,
    write_wav,
)


def write_manifest(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def make_line(uid, synth="synth-a", wav="a.wav", ratings=(3.0,)):
    return manifest_line(uid, synth, wav, ratings)


class TestLoadManifest:
    def test_three_lines(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [make_line("u1"), make_line("u2"), make_line("u3", synth="b")])
        corpus = load_manifest(path)
        assert len(corpus) == 3
        assert corpus.synthesizers == ("b", "synth-a")
        assert corpus.utterances[0].wav_path == tmp_path / "a.wav"

    def test_rating_off_grid_names_line_and_value(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [make_line("u1"), make_line("u2", ratings=(3.7,))])
        with pytest.raises(CorpusError, match=r"line 2.*3\.7"):
            load_manifest(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(CorpusError, match="empty corpus"):
            load_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorpusError, match="not found"):
            load_manifest(tmp_path / "nope.jsonl")

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [make_line("u1"), "{not json"])
        with pytest.raises(CorpusError, match="line 2"):
            load_manifest(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [make_line("u1"), make_line("u1")])
        with pytest.raises(CorpusError, match="duplicate"):
            load_manifest(path)

    def test_extra_field_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        record = json.loads(make_line("u1"))
        record["extra"] = 1
        write_manifest(path, [json.dumps(record)])
        with pytest.raises(CorpusError, match="fields"):
            load_manifest(path)

    def test_roundtrip_is_byte_identical(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(
            path,
            [
                make_line("u1", ratings=(1.0, 4.5)),
                make_line("u2", synth="zz", wav="wav/deep.wav", ratings=(2.5,)),
            ],
        )
        original = path.read_bytes()
        out = tmp_path / "copy.jsonl"
        save_manifest(load_manifest(path), out)
        assert out.read_bytes() == original


class TestWav:
    def test_scaling_rule(self, tmp_path):
        path = tmp_path / "x.wav"
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(16000)
            w.writeframes(np.array([0, 16384, -32768], dtype="<i2").tobytes())
        wav = read_wav(path)
        assert wav.samples.tolist() == [0.0, 0.5, -1.0]

    def test_wrong_sample_rate(self, tmp_path):
        path = tmp_path / "x.wav"
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(8000)
            w.writeframes(np.zeros(10, dtype="<i2").tobytes())
        with pytest.raises(CorpusError, match="unsupported sample rate 8000"):
            read_wav(path)

    def test_stereo_rejected(self, tmp_path):
        path = tmp_path / "x.wav"
        with wave.open(str(path), "wb") as w:
            w.setnchannels(2)
            w.setsampwidth(2)
            w.setframerate(16000)
            w.writeframes(np.zeros(20, dtype="<i2").tobytes())
        with pytest.raises(CorpusError, match="mono required"):
            read_wav(path)

    def test_8bit_rejected(self, tmp_path):
        path = tmp_path / "x.wav"
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(1)
            w.setframerate(16000)
            w.writeframes(bytes(10))
        with pytest.raises(CorpusError, match="16-bit"):
            read_wav(path)

    def test_write_read_cycle(self, tmp_path):
        path = tmp_path / "x.wav"
        samples = np.sin(np.linspace(0, 20, 800)) * 0.7
        write_wav(path, Waveform(samples))
        loaded = read_wav(path)
        assert len(loaded) == 800
        assert np.max(np.abs(loaded.samples - samples)) < 1.0 / 32768
        assert wav_duration_seconds(path) == pytest.approx(800 / 16000)


class TestRatings:
    def test_mos_single(self):
        assert utterance_mos(RatingSet((3.0,))) == 3.0

    def test_mos_symmetry(self):
        assert utterance_mos(RatingSet((1.0, 5.0))) == 3.0

    def test_mos_mean(self):
        assert utterance_mos(RatingSet((2.0, 2.5, 4.0))) == pytest.approx(8.5 / 3.0)

    def test_category_endpoints(self):
        assert rating_to_category(1.0) == 0
        assert rating_to_category(5.0) == 8
        assert rating_to_category(3.5) == 5

    def test_category_rejects_off_grid(self):
        with pytest.raises(CorpusError):
            rating_to_category(3.7)

    def test_category_bijection(self):
        for k in range(9):
            assert rating_to_category(category_to_rating(k)) == k

    def test_empirical_dist_onehot(self):
        dist = empirical_category_dist(RatingSet((3.0, 3.0)))
        expected = np.zeros(9)
        expected[4] = 1.0
        assert np.array_equal(dist.probs, expected)

    def test_empirical_dist_split(self):
        dist = empirical_category_dist(RatingSet((1.0, 5.0)))
        assert dist.probs[0] == 0.5 and dist.probs[8] == 0.5

    def test_empirical_dist_counts(self):
        dist = empirical_category_dist(RatingSet((2.0, 2.0, 3.5, 5.0)))
        assert dist.probs[2] == 0.5
        assert dist.probs[5] == 0.25
        assert dist.probs[8] == 0.25

    def test_mos_equals_dist_expectation(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            ratings = RatingSet(tuple(1.0 + 0.5 * k for k in rng.integers(0, 9, rng.integers(1, 12))))
            dist = empirical_category_dist(ratings)
            assert abs(utterance_mos(ratings) - float(dist.probs @ CATEGORY_VALUES)) < 1e-12

    def test_empty_ratings_rejected(self):
        with pytest.raises(CorpusError):
            RatingSet(())


class TestTypes:
    def test_waveform_validation(self):
        with pytest.raises(CorpusError):
            Waveform(np.array([0.0, 1.5]))
        with pytest.raises(CorpusError):
            Waveform(np.zeros(10), sample_rate=8000)

    def test_corpus_duplicate_ids(self):
        utt = Utterance("u", "s", "x.wav", RatingSet((3.0,)))
        with pytest.raises(CorpusError, match="duplicate"):
            Corpus((utt, utt))

    def test_corpus_subset(self):
        utts = tuple(
            Utterance(f"u{k}", f"s{k % 2}", "x.wav", RatingSet((3.0,))) for k in range(6)
        )
        sub = Corpus(utts).subset(["s1"])
        assert len(sub) == 3
        assert sub.synthesizers == ("s1",)
