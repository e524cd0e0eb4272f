import dataclasses

import numpy as np
import pytest

from automos.hypersearch import (
    SearchSpace,
    TrialResult,
    results_jsonl,
    run_search,
    sample_hparams,
)
from automos.synthgen import RaterModel, SynthSpec, gen_corpus
from automos.corpus import load_manifest
from automos.training import HParams


class TestSampling:
    def test_values_within_ranges(self):
        space = SearchSpace()
        for seed in range(1000):
            hp = sample_hparams(space, seed, max_steps=10)
            assert 0.0001 <= hp.learning_rate <= 0.1
            assert 0.9 <= hp.decay_per_1000 <= 1.0
            assert 0.0 <= hp.l1 <= 0.001 and 0.0 <= hp.l2 <= 0.001
            assert hp.loss_strategy in ("l2", "cross_entropy")
            assert 0 <= hp.embedding_dim <= 50
            assert hp.frontend.kind in ("log_mel", "conv_pool")
            assert 20 <= hp.frontend.width <= 100
            assert 20 <= hp.lstm_width <= 100
            assert 1 <= hp.lstm_depth <= 10
            assert 1 <= hp.stride <= 10
            assert hp.feed_mode in ("all", "last")
            assert 20 <= hp.hidden_width <= 200
            assert 0 <= hp.hidden_depth <= 2

    def test_same_seed_identical(self):
        space = SearchSpace()
        assert sample_hparams(space, 77, max_steps=5) == sample_hparams(space, 77, max_steps=5)

    def test_loss_strategy_frequencies(self):
        space = SearchSpace()
        draws = [sample_hparams(space, seed, max_steps=1).loss_strategy for seed in range(1000)]
        frac = draws.count("cross_entropy") / len(draws)
        assert abs(frac - 0.5) <= 0.05

    def test_log_uniform_learning_rate_spread(self):
        space = SearchSpace()
        rates = np.array(
            [sample_hparams(space, seed, max_steps=1).learning_rate for seed in range(500)]
        )
        # Roughly half the draws should sit below the geometric midpoint.
        midpoint = np.sqrt(0.0001 * 0.1)
        assert 0.35 < np.mean(rates < midpoint) < 0.65


@pytest.fixture(scope="module")
def search_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("search_corpus")
    specs = [
        SynthSpec(f"s{k}", q, 8, duration_range=(0.25, 0.45))
        for k, q in enumerate(np.linspace(1.6, 4.4, 6))
    ]
    return load_manifest(gen_corpus(specs, RaterModel(n_raters=4), out, seed=21))


class TestRunSearch:
    def test_single_trial_echoes_hparams(self, search_corpus):
        results = run_search(search_corpus, 1, steps_per_trial=4, seed=5, k=3)
        assert len(results) == 1
        record = results[0].to_record()
        assert record["hparams"]["max_steps"] == 4
        assert record["status"] == "ok"
        assert record["pearson"] is not None
        assert "wall_time" not in record

    def test_results_sorted_descending(self, search_corpus):
        results = run_search(search_corpus, 3, steps_per_trial=4, seed=9, k=3)
        scores = [r.pearson for r in results if r.status == "ok"]
        assert scores == sorted(scores, reverse=True)

    def test_reproducible_results_file(self, search_corpus):
        a = results_jsonl(run_search(search_corpus, 2, steps_per_trial=3, seed=4, k=3))
        b = results_jsonl(run_search(search_corpus, 2, steps_per_trial=3, seed=4, k=3))
        assert a == b

    def test_failed_trials_recorded_not_fatal(self, search_corpus):
        # k larger than the synthesizer count fails fold assignment per trial.
        results = run_search(search_corpus, 2, steps_per_trial=2, seed=1, k=10)
        assert len(results) == 2
        assert all(r.status == "failed" for r in results)
        assert all(r.pearson is None for r in results)
        assert all("synthesizers" in r.error for r in results)

    def test_trial_replay(self, search_corpus):
        from automos.hypersearch import evaluate_trial_hparams, sample_hparams

        results = run_search(search_corpus, 2, steps_per_trial=3, seed=13, k=3)
        top = next(r for r in results if r.status == "ok")
        replayed_hp = sample_hparams(SearchSpace(), top.seed, max_steps=3)
        assert replayed_hp == top.hparams
        replayed = evaluate_trial_hparams(search_corpus, replayed_hp, k=3, fold_seed=13)
        assert replayed == top.pearson


class TestReferenceConfigRanksWell:
    def test_reference_config_in_top_half_of_random_trials(self, search_corpus):
        reference = dataclasses.replace(HParams(), max_steps=30, batch_size=20, seed=1717)
        results = run_search(
            search_corpus, 10, steps_per_trial=30, seed=31, k=3,
            extra_trials=[reference],
        )
        position = next(
            k for k, r in enumerate(results) if r.trial == 10 and r.hparams == reference
        )
        assert position < len(results) / 2, (
            f"reference config ranked {position + 1} of {len(results)}"
        )
