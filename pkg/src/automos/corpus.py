"""Corpus data model: rated utterances, manifest I/O and 16 kHz PCM WAV I/O.

A corpus is a flat list of utterances, each pointing at a mono 16 kHz WAV
file and carrying the individual listener ratings (1.0..5.0 in half-point
steps). MOS and rating histograms are always derived from the stored
ratings, never persisted.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000

#: Number of distinct rating levels on the 1..5 half-point scale.
N_CATEGORIES = 9

#: Value of rating category k (k = 0..8).
CATEGORY_VALUES = np.array([1.0 + 0.5 * k for k in range(N_CATEGORIES)])

MANIFEST_FIELDS = ("id", "synthesizer_id", "wav", "ratings")


class CorpusError(ValueError):
    """A manifest or audio file violates the corpus contract."""


def _on_rating_grid(score: float) -> bool:
    # Half-point values are dyadic, so exact float comparison is safe.
    return 1.0 <= score <= 5.0 and float(score) * 2.0 == round(float(score) * 2.0)


@dataclass(frozen=True)
class Waveform:
    """Mono audio at 16 kHz with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate != SAMPLE_RATE:
            raise CorpusError(f"unsupported sample rate {self.sample_rate}")
        if samples.ndim != 1 or samples.size == 0:
            raise CorpusError("waveform must be a nonempty 1-D sample array")
        if np.max(np.abs(samples)) > 1.0:
            raise CorpusError("waveform amplitudes must lie in [-1, 1]")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_seconds(self) -> float:
        return len(self) / float(self.sample_rate)


@dataclass(frozen=True)
class RatingSet:
    """Nonempty collection of listener scores on the half-point grid."""

    ratings: tuple[float, ...]

    def __post_init__(self):
        ratings = tuple(float(r) for r in self.ratings)
        object.__setattr__(self, "ratings", ratings)
        if not ratings:
            raise CorpusError("rating set must be nonempty")
        for r in ratings:
            if not _on_rating_grid(r):
                raise CorpusError(
                    f"rating {r} is not on the 1..5 half-point grid"
                )

    def __len__(self) -> int:
        return len(self.ratings)


@dataclass(frozen=True)
class Utterance:
    id: str
    synthesizer_id: str
    wav_path: Path
    ratings: RatingSet

    def __post_init__(self):
        object.__setattr__(self, "wav_path", Path(self.wav_path))
        if not self.id:
            raise CorpusError("utterance id must be nonempty")
        if not self.synthesizer_id:
            raise CorpusError(f"utterance {self.id}: synthesizer_id must be nonempty")


@dataclass(frozen=True)
class Corpus:
    """Immutable utterance collection; safe to share across threads."""

    utterances: tuple[Utterance, ...]
    synthesizers: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        seen: set[str] = set()
        for utt in self.utterances:
            if utt.id in seen:
                raise CorpusError(f"duplicate utterance id {utt.id!r}")
            seen.add(utt.id)
        synths = tuple(sorted({u.synthesizer_id for u in self.utterances}))
        object.__setattr__(self, "synthesizers", synths)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def by_id(self, utterance_id: str) -> Utterance:
        for utt in self.utterances:
            if utt.id == utterance_id:
                return utt
        raise KeyError(utterance_id)

    def subset(self, synthesizer_ids) -> "Corpus":
        """Corpus restricted to the given synthesizers (order preserved)."""
        wanted = set(synthesizer_ids)
        return Corpus(tuple(u for u in self.utterances if u.synthesizer_id in wanted))


@dataclass(frozen=True)
class CategoryDist:
    """Probability vector over the 9 rating categories."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.shape != (N_CATEGORIES,):
            raise CorpusError(f"category distribution must have {N_CATEGORIES} entries")
        if np.any(probs < 0.0):
            raise CorpusError("category probabilities must be nonnegative")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise CorpusError("category probabilities must sum to 1")


def utterance_mos(ratings: RatingSet) -> float:
    """Arithmetic mean of the individual ratings."""
    return float(np.mean(ratings.ratings))


def rating_to_category(score: float) -> int:
    """Map a half-point rating to its category index 0..8."""
    if not _on_rating_grid(score):
        raise CorpusError(f"rating {score} is not on the 1..5 half-point grid")
    return int(round((score - 1.0) * 2.0))


def category_to_rating(index: int) -> float:
    """Inverse of :func:`rating_to_category`."""
    if not 0 <= index < N_CATEGORIES:
        raise CorpusError(f"category index {index} out of range")
    return 1.0 + 0.5 * index


def empirical_category_dist(ratings: RatingSet) -> CategoryDist:
    """Histogram of the ratings over the 9 categories, normalized to 1."""
    counts = np.zeros(N_CATEGORIES)
    for r in ratings.ratings:
        counts[rating_to_category(r)] += 1.0
    return CategoryDist(counts / counts.sum())


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------
#
# A manifest is UTF-8 JSON-lines; each record has exactly the fields
# {"id", "synthesizer_id", "wav", "ratings"} and "wav" is resolved relative
# to the manifest's directory.


def manifest_line(utterance_id: str, synthesizer_id: str, wav_rel: str, ratings) -> str:
    """Canonical single-record serialization (fixed field order)."""
    record = {
        "id": utterance_id,
        "synthesizer_id": synthesizer_id,
        "wav": wav_rel,
        "ratings": [float(r) for r in ratings],
    }
    return json.dumps(record)


def load_manifest(path) -> Corpus:
    """Parse a JSON-lines manifest into a validated :class:`Corpus`.

    Raises :class:`CorpusError` naming the offending line for malformed
    records, off-grid ratings, duplicate ids, and for an empty manifest.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"manifest not found: {path}")
    base = path.parent
    utterances = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path} line {lineno}: malformed record ({exc.msg})")
            if not isinstance(record, dict) or set(record) != set(MANIFEST_FIELDS):
                raise CorpusError(
                    f"{path} line {lineno}: record fields must be exactly "
                    f"{list(MANIFEST_FIELDS)}"
                )
            ratings = record["ratings"]
            if not isinstance(ratings, list) or not ratings:
                raise CorpusError(f"{path} line {lineno}: ratings must be a nonempty list")
            for r in ratings:
                if not isinstance(r, (int, float)) or not _on_rating_grid(float(r)):
                    raise CorpusError(
                        f"{path} line {lineno}: rating {r} is not on the "
                        f"1..5 half-point grid"
                    )
            if record["id"] in seen:
                raise CorpusError(f"{path} line {lineno}: duplicate utterance id {record['id']!r}")
            seen.add(record["id"])
            utterances.append(
                Utterance(
                    id=record["id"],
                    synthesizer_id=record["synthesizer_id"],
                    wav_path=base / record["wav"],
                    ratings=RatingSet(tuple(float(r) for r in ratings)),
                )
            )
    if not utterances:
        raise CorpusError(f"{path}: empty corpus")
    return Corpus(tuple(utterances))


def save_manifest(corpus: Corpus, path) -> None:
    """Write the canonical manifest; WAV paths become relative to `path`."""
    path = Path(path)
    base = path.parent
    lines = []
    for utt in corpus.utterances:
        rel = Path(utt.wav_path)
        if rel.is_absolute():
            rel = rel.relative_to(base.resolve())
        lines.append(
            manifest_line(utt.id, utt.synthesizer_id, rel.as_posix(), utt.ratings.ratings)
        )
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# WAV I/O (RIFF, mono, 16-bit PCM little-endian, 16 kHz)
# ---------------------------------------------------------------------------


def read_wav(path) -> Waveform:
    """Read a mono 16-bit 16 kHz PCM WAV; samples are scaled by 1/32768."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"audio file not found: {path}")
    try:
        reader = wave.open(str(path), "rb")
    except (wave.Error, EOFError) as exc:
        raise CorpusError(f"{path}: unsupported encoding ({exc})")
    with reader:
        if reader.getnchannels() != 1:
            raise CorpusError(f"{path}: mono required, got {reader.getnchannels()} channels")
        if reader.getframerate() != SAMPLE_RATE:
            raise CorpusError(f"{path}: unsupported sample rate {reader.getframerate()}")
        if reader.getsampwidth() != 2:
            raise CorpusError(
                f"{path}: 16-bit PCM required, got {8 * reader.getsampwidth()}-bit"
            )
        raw = reader.readframes(reader.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples)


def write_wav(path, waveform: Waveform) -> None:
    """Write 16-bit PCM with the inverse of the read scaling (1/32768)."""
    ints = np.clip(np.round(waveform.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as writer:
        writer.setnchannels(1)
        writer.setsampwidth(2)
        writer.setframerate(waveform.sample_rate)
        writer.writeframes(ints.tobytes())


def wav_duration_seconds(path) -> float:
    """Duration from the WAV header alone (no sample decoding)."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"audio file not found: {path}")
    try:
        reader = wave.open(str(path), "rb")
    except (wave.Error, EOFError) as exc:
        raise CorpusError(f"{path}: unsupported encoding ({exc})")
    with reader:
        return reader.getnframes() / float(reader.getframerate())
