import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from automos.corpus import Corpus, RatingSet, Utterance, load_manifest
from automos.synthgen import RaterModel, SynthSpec, gen_corpus


def make_mem_corpus(sizes: dict[str, int], ratings=(3.0,)) -> Corpus:
    """In-memory corpus with dummy WAV paths, for fold/metric tests."""
    utts = []
    for synth, count in sizes.items():
        for k in range(count):
            utts.append(
                Utterance(
                    id=f"{synth}-{k:03d}",
                    synthesizer_id=synth,
                    wav_path=Path(f"/nonexistent/{synth}-{k}.wav"),
                    ratings=RatingSet(tuple(ratings)),
                )
            )
    return Corpus(tuple(utts))


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory):
    """Tiny on-disk corpus shared by training/CLI tests (seeded, short clips)."""
    out = tmp_path_factory.mktemp("small_corpus")
    specs = [
        SynthSpec(f"s{k}", quality, 6, duration_range=(0.3, 0.6))
        for k, quality in enumerate([1.8, 2.6, 3.4, 4.2])
    ]
    manifest = gen_corpus(specs, RaterModel(n_raters=4), out, seed=11)
    return manifest


@pytest.fixture(scope="session")
def small_corpus(small_corpus_dir):
    return load_manifest(small_corpus_dir)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
