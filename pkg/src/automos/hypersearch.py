"""Seeded random search over the supported hyperparameter space.

Each trial samples a configuration (learning rate log-uniform, integer
dimensions uniform inclusive, categoricals uniform), trains on all folds
but one of a grouped split, and records the held-out utterance-level
Pearson r. Failed trials are recorded, not fatal. Every trial can be
replayed bit-identically from its stored seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import Corpus, read_wav, utterance_mos
from .evaluation import MetricError, grouped_kfold, pearson, predict_from_features
from .frontend import FrontendConfig, prepare_input
from .seeds import derive_seed, rng_for
from .training import HParams, TrainingError, hparams_to_dict, train


@dataclass(frozen=True)
class SearchSpace:
    """Ranges explored per dimension; defaults cover the full space."""

    learning_rate: tuple[float, float] = (0.0001, 0.1)  # log-uniform
    decay_per_1000: tuple[float, float] = (0.9, 1.0)
    l1: tuple[float, float] = (0.0, 0.001)
    l2: tuple[float, float] = (0.0, 0.001)
    loss_strategies: tuple[str, ...] = ("l2", "cross_entropy")
    embedding_dim: tuple[int, int] = (0, 50)
    timeseries_kinds: tuple[str, ...] = ("log_mel", "conv_pool")
    width: tuple[int, int] = (20, 100)
    delta_modes: tuple[str, ...] = ("none", "velocity", "velocity_and_acceleration")
    lstm_width: tuple[int, int] = (20, 100)
    lstm_depth: tuple[int, int] = (1, 10)
    stride: tuple[int, int] = (1, 10)
    feed_modes: tuple[str, ...] = ("all", "last")
    hidden_width: tuple[int, int] = (20, 200)
    hidden_depth: tuple[int, int] = (0, 2)


def sample_hparams(
    space: SearchSpace,
    seed: int,
    *,
    batch_size: int = 20,
    max_steps: int = 20000,
) -> HParams:
    """One independent draw per dimension; identical seeds give identical draws."""
    rng = rng_for(seed)

    def log_uniform(lo, hi):
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))

    def uniform(lo, hi):
        return float(rng.uniform(lo, hi))

    def int_uniform(lo, hi):
        return int(rng.integers(lo, hi + 1))

    def choice(options):
        return options[int(rng.integers(len(options)))]

    learning_rate = log_uniform(*space.learning_rate)
    decay = uniform(*space.decay_per_1000)
    l1 = uniform(*space.l1)
    l2 = uniform(*space.l2)
    loss = choice(space.loss_strategies)
    embedding_dim = int_uniform(*space.embedding_dim)
    kind = choice(space.timeseries_kinds)
    width = int_uniform(*space.width)
    deltas = choice(space.delta_modes)
    lstm_width = int_uniform(*space.lstm_width)
    lstm_depth = int_uniform(*space.lstm_depth)
    stride = int_uniform(*space.stride)
    feed_mode = choice(space.feed_modes)
    hidden_width = int_uniform(*space.hidden_width)
    hidden_depth = int_uniform(*space.hidden_depth)
    return HParams(
        learning_rate=learning_rate,
        decay_per_1000=decay,
        l1=l1,
        l2=l2,
        loss_strategy=loss,
        embedding_dim=embedding_dim,
        frontend=FrontendConfig(kind=kind, width=width, deltas=deltas),
        lstm_width=lstm_width,
        lstm_depth=lstm_depth,
        stride=stride,
        feed_mode=feed_mode,
        hidden_width=hidden_width,
        hidden_depth=hidden_depth,
        batch_size=batch_size,
        max_steps=max_steps,
        seed=seed,
    )


@dataclass
class TrialResult:
    trial: int
    seed: int
    hparams: HParams
    pearson: Optional[float]
    status: str  # "ok" | "failed"
    error: Optional[str] = None
    wall_time_s: float = 0.0

    def to_record(self) -> dict:
        """Canonical serialized form (wall time intentionally excluded so
        result files are reproducible byte-for-byte)."""
        return {
            "trial": self.trial,
            "seed": self.seed,
            "status": self.status,
            "pearson": self.pearson,
            "error": self.error,
            "hparams": hparams_to_dict(self.hparams),
        }


def evaluate_trial_hparams(
    corpus: Corpus, hp: HParams, eval_fold: int = 0, *, k: int = 5, fold_seed: int = 0
) -> float:
    """Train on all folds but `eval_fold` and return held-out Pearson r."""
    folds = grouped_kfold(corpus, k, fold_seed)
    train_corpus = corpus.subset(folds.train_synths(eval_fold))
    fold_of = folds.fold_of()
    eval_utts = [u for u in corpus if fold_of[u.synthesizer_id] == eval_fold]
    params, _ = train(train_corpus, hp)
    seqs = [prepare_input(read_wav(u.wav_path), hp.frontend) for u in eval_utts]
    preds = predict_from_features(params, seqs)
    trues = np.array([utterance_mos(u.ratings) for u in eval_utts])
    return pearson(preds, trues)


def run_search(
    corpus: Corpus,
    n_trials: int,
    steps_per_trial: int,
    seed: int,
    *,
    space: Optional[SearchSpace] = None,
    k: int = 5,
    batch_size: int = 20,
    extra_trials: Optional[list[HParams]] = None,
) -> list[TrialResult]:
    """Sample and score n_trials configurations; results sorted by Pearson r
    descending with failed trials last.

    ``extra_trials`` appends pinned configurations (e.g. a reference config)
    after the random ones, scored identically.
    """
    if n_trials < 1:
        raise ValueError("need at least one trial")
    space = space or SearchSpace()
    trials: list[tuple[int, int, HParams]] = []
    for t in range(n_trials):
        trial_seed = derive_seed(seed, 10, t)
        hp = sample_hparams(space, trial_seed, batch_size=batch_size, max_steps=steps_per_trial)
        trials.append((t, trial_seed, hp))
    for j, hp in enumerate(extra_trials or []):
        trials.append((n_trials + j, hp.seed, hp))

    results = []
    for trial, trial_seed, hp in trials:
        start = time.perf_counter()
        try:
            r = evaluate_trial_hparams(corpus, hp, k=k, fold_seed=seed)
            results.append(
                TrialResult(trial, trial_seed, hp, r, "ok", wall_time_s=time.perf_counter() - start)
            )
        except (TrainingError, MetricError, ValueError) as exc:
            results.append(
                TrialResult(
                    trial, trial_seed, hp, None, "failed",
                    error=str(exc), wall_time_s=time.perf_counter() - start,
                )
            )
    results.sort(key=lambda r: (r.status != "ok", -(r.pearson if r.pearson is not None else -np.inf), r.trial))
    return results


def results_jsonl(results: list[TrialResult]) -> str:
    """Line-delimited canonical records in ranked order."""
    import json

    return "".join(json.dumps(r.to_record(), sort_keys=True) + "\n" for r in results)
