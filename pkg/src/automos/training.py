"""Loss functions, Adagrad with stepwise decay, batching, and the train loop.

Three training modes are supported, each paired with its head:

* ``gaussian_nll``  - negative log-likelihood of the individual ratings
                      under Normal(mu(x), sigma(x)),
* ``l2``            - squared error against the utterance MOS,
* ``cross_entropy`` - cross-entropy against the empirical 9-category
                      rating distribution.

The per-utterance objective adds an auxiliary squared-distance term pulling
the predicted synthesizer embedding and the embedding table row toward each
other (both sides receive gradient), plus L1/L2 weight penalties shared
across the batch. The batch loss is the mean of per-utterance objectives,
so learning-rate semantics do not depend on batch size.

Training is deterministic given (corpus, hyperparameters, seed): parameter
initialization, batch shuffling, and gradient reduction all have fixed
seeds and a fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional

import numpy as np

from .corpus import Corpus, RatingSet, empirical_category_dist, read_wav, utterance_mos
from .frontend import FeatureSeq, FrontendConfig, prepare_input
from .network import (
    BatchOutputs,
    HeadGradients,
    NetworkParams,
    backward_batch,
    forward_batch,
    init_network_params,
    is_weight_tensor,
    pad_batch,
)
from .seeds import derive_seed

LOSS_STRATEGIES = ("gaussian_nll", "l2", "cross_entropy")
STRATEGY_HEADS = {"gaussian_nll": "gaussian", "l2": "scalar", "cross_entropy": "categorical"}

ADAGRAD_EPSILON = 1e-8
LOG_2PI = math.log(2.0 * math.pi)


class TrainingError(RuntimeError):
    """Numeric failure during optimization (non-finite loss or gradient)."""


@dataclass(frozen=True)
class HParams:
    """Model and optimizer hyperparameters.

    Defaults are the reference configuration used by the CLI; ranges are
    validated against the supported search space.
    """

    learning_rate: float = 0.057
    decay_per_1000: float = 0.94
    l1: float = 1.4e-5
    l2: float = 2.6e-5
    loss_strategy: str = "cross_entropy"
    embedding_dim: int = 37
    embedding_loss_weight: float = 0.1
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    lstm_width: int = 93
    lstm_depth: int = 2
    stride: int = 10
    feed_mode: str = "all"
    hidden_width: int = 60
    hidden_depth: int = 1
    batch_size: int = 20
    max_steps: int = 20000
    seed: int = 0

    def __post_init__(self):
        if not 0.0001 <= self.learning_rate <= 0.1:
            raise ValueError("learning_rate must be in [0.0001, 0.1]")
        if not 0.9 <= self.decay_per_1000 <= 1.0:
            raise ValueError("decay_per_1000 must be in [0.9, 1.0]")
        if not (0.0 <= self.l1 <= 0.001 and 0.0 <= self.l2 <= 0.001):
            raise ValueError("L1/L2 penalties must be in [0, 0.001]")
        if self.loss_strategy not in LOSS_STRATEGIES:
            raise ValueError(f"unknown loss strategy {self.loss_strategy!r}")
        if not 0 <= self.embedding_dim <= 50:
            raise ValueError("embedding_dim must be in 0..50")
        if self.embedding_loss_weight < 0:
            raise ValueError("embedding_loss_weight must be nonnegative")
        if not isinstance(self.frontend, FrontendConfig):
            raise ValueError("frontend must be a FrontendConfig")
        if not 20 <= self.lstm_width <= 100:
            raise ValueError("lstm_width must be in 20..100")
        if not 1 <= self.lstm_depth <= 10:
            raise ValueError("lstm_depth must be in 1..10")
        if not 1 <= self.stride <= 10:
            raise ValueError("stride must be in 1..10")
        if self.feed_mode not in ("all", "last"):
            raise ValueError(f"unknown feed mode {self.feed_mode!r}")
        if not 20 <= self.hidden_width <= 200:
            raise ValueError("hidden_width must be in 20..200")
        if not 0 <= self.hidden_depth <= 2:
            raise ValueError("hidden_depth must be in 0..2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def head_kind(self) -> str:
        return STRATEGY_HEADS[self.loss_strategy]


@dataclass
class TrainLog:
    """Per-step (step, loss, learning_rate) records and periodic snapshots."""

    records: list[tuple[int, float, float]] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)

    def append(self, step: int, loss: float, lr: float) -> None:
        if self.records and step <= self.records[-1][0]:
            raise ValueError("steps must be strictly increasing")
        self.records.append((step, float(loss), float(lr)))

    def final_loss(self) -> float:
        return self.records[-1][1]


# ---------------------------------------------------------------------------
# Losses (values and tail gradients)
# ---------------------------------------------------------------------------


def gaussian_nll(mu: float, sigma: float, ratings: RatingSet) -> float:
    """Negative log-likelihood of the ratings under Normal(mu, sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = np.asarray(ratings.ratings)
    return float(np.sum(np.log(sigma) + 0.5 * LOG_2PI + (r - mu) ** 2 / (2.0 * sigma**2)))


def gaussian_nll_grads(mu: float, sigma: float, ratings: RatingSet) -> tuple[float, float]:
    """d(nll)/d(mu) and d(nll)/d(sigma)."""
    r = np.asarray(ratings.ratings)
    d_mu = float(np.sum(-(r - mu) / sigma**2))
    d_sigma = float(np.sum(1.0 / sigma - (r - mu) ** 2 / sigma**3))
    return d_mu, d_sigma


def l2_loss(pred: float, target: float) -> float:
    return float((pred - target) ** 2)


def cross_entropy_loss(logits: np.ndarray, target_probs: np.ndarray) -> float:
    """Cross-entropy of the target distribution against softmax(logits).

    Stabilized by subtracting the max logit, so the value is exactly
    invariant to a constant shift of the logits.
    """
    shifted = logits - np.max(logits)
    log_norm = np.log(np.sum(np.exp(shifted)))
    return float(np.sum(target_probs * (log_norm - shifted)))


def embedding_loss(e_pred: np.ndarray, table: np.ndarray, synth: int) -> float:
    """Half squared distance between predicted and stored embedding.

    Both sides receive gradient: d/d(e_pred) = (e_pred - row) and
    d/d(row) = -(e_pred - row); there is no stop-gradient.
    """
    if not 0 <= synth < table.shape[0]:
        raise ValueError(f"synthesizer index {synth} out of range")
    diff = e_pred - table[synth]
    return float(0.5 * np.dot(diff, diff))


def regularization_penalty(params: NetworkParams, l1: float, l2: float) -> float:
    """l1*sum|w| + l2*sum(w^2) over weight matrices and conv filters.

    Biases and the embedding table are exempt.
    """
    if l1 < 0 or l2 < 0:
        raise ValueError("penalty coefficients must be nonnegative")
    total = 0.0
    for name, arr in params.named_tensors():
        if is_weight_tensor(name):
            if l1:
                total += l1 * float(np.sum(np.abs(arr)))
            if l2:
                total += l2 * float(np.sum(arr**2))
    return total


def learning_rate(hp: HParams, step: int) -> float:
    """Stepwise-decayed rate: base * decay^(step // 1000)."""
    return hp.learning_rate * hp.decay_per_1000 ** (step // 1000)


def adagrad_step(
    named_tensors,
    accumulators: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    step: int = 0,
) -> None:
    """Core in-place Adagrad step over (name, tensor) pairs.

    G += g^2 first, then w -= lr * g / (sqrt(G) + eps).
    """
    for name, tensor in named_tensors:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in tensor {name!r} at step {step}")
        acc = accumulators[name]
        acc += g * g
        tensor -= lr * g / (np.sqrt(acc) + ADAGRAD_EPSILON)


def adagrad_update(
    params: NetworkParams,
    accumulators: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    step: int,
    hp: HParams,
) -> None:
    """Adagrad step over all network tensors at the decayed rate for `step`."""
    adagrad_step(params.named_tensors(), accumulators, grads, learning_rate(hp, step), step)


def make_batches(n_items: int, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    """Endless index batches; each epoch is a fresh seeded shuffle.

    The final batch of an epoch may be smaller than batch_size.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    while True:
        order = rng.permutation(n_items)
        for lo in range(0, n_items, batch_size):
            yield order[lo : lo + batch_size]


# ---------------------------------------------------------------------------
# Batch assembly and the objective
# ---------------------------------------------------------------------------


@dataclass
class TrainingData:
    """Per-utterance inputs and targets, extracted once per corpus."""

    features: list[FeatureSeq]
    mos: np.ndarray
    ratings: list[RatingSet]
    cat_dists: np.ndarray  # (N, 9)
    synth_idx: np.ndarray
    synth_ids: tuple[str, ...]
    conv_mode: bool


def prepare_training_data(
    corpus: Corpus,
    frontend: FrontendConfig,
    feature_cache: Optional[dict[str, FeatureSeq]] = None,
) -> TrainingData:
    """Load waveforms, extract network inputs, and derive all targets."""
    features = []
    for utt in corpus:
        if feature_cache is not None and utt.id in feature_cache:
            features.append(feature_cache[utt.id])
        else:
            seq = prepare_input(read_wav(utt.wav_path), frontend)
            features.append(seq)
            if feature_cache is not None:
                feature_cache[utt.id] = seq
    synth_ids = corpus.synthesizers
    synth_to_idx = {s: k for k, s in enumerate(synth_ids)}
    return TrainingData(
        features=features,
        mos=np.array([utterance_mos(u.ratings) for u in corpus]),
        ratings=[u.ratings for u in corpus],
        cat_dists=np.stack([empirical_category_dist(u.ratings).probs for u in corpus]),
        synth_idx=np.array([synth_to_idx[u.synthesizer_id] for u in corpus]),
        synth_ids=synth_ids,
        conv_mode=frontend.kind == "conv_pool",
    )


def _main_loss_and_grads(
    hp: HParams, out: BatchOutputs, data: TrainingData, idx: np.ndarray
) -> tuple[np.ndarray, HeadGradients]:
    """Per-item main losses and tail gradients (already scaled by 1/B)."""
    scale = 1.0 / len(idx)
    if hp.loss_strategy == "l2":
        target = data.mos[idx]
        losses = (out.mos - target) ** 2
        return losses, HeadGradients(d_mos=2.0 * (out.mos - target) * scale)
    if hp.loss_strategy == "gaussian_nll":
        losses = np.empty(len(idx))
        d_mu = np.empty(len(idx))
        d_sigma = np.empty(len(idx))
        for j, item in enumerate(idx):
            losses[j] = gaussian_nll(out.mu[j], out.sigma[j], data.ratings[item])
            d_mu[j], d_sigma[j] = gaussian_nll_grads(out.mu[j], out.sigma[j], data.ratings[item])
        return losses, HeadGradients(d_mu=d_mu * scale, d_sigma=d_sigma * scale)
    targets = data.cat_dists[idx]
    shifted = out.logits - out.logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    losses = np.sum(targets * (log_norm[:, None] - shifted), axis=1)
    return losses, HeadGradients(d_logits=(out.cat_probs - targets) * scale)


def batch_loss_and_grads(
    params: NetworkParams, hp: HParams, data: TrainingData, idx: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-utterance objective over the batch, with full gradients.

    Padding added when collating variable-length utterances never affects
    the result; the loss equals the mean of per-utterance losses computed
    unpadded.
    """
    batch = [data.features[item] for item in idx]
    inputs, valid = pad_batch(batch, conv_mode=data.conv_mode)
    out, cache = forward_batch(params, inputs, valid, want_cache=True)

    main_losses, head_grads = _main_loss_and_grads(hp, out, data, idx)
    loss = float(np.mean(main_losses))

    n = len(idx)
    d_table = None
    if params.embedding_dim > 0:
        rows = data.synth_idx[idx]
        diffs = out.embedding_pred - params.embedding_table[rows]
        emb_losses = 0.5 * np.sum(diffs**2, axis=1)
        loss += hp.embedding_loss_weight * float(np.mean(emb_losses))
        head_grads.d_embedding = diffs * (hp.embedding_loss_weight / n)
        d_table = np.zeros_like(params.embedding_table)
        np.add.at(d_table, rows, -diffs * (hp.embedding_loss_weight / n))

    grads, _ = backward_batch(params, cache, head_grads)
    if d_table is not None:
        grads["embed/table"] += d_table

    if hp.l1 or hp.l2:
        loss += regularization_penalty(params, hp.l1, hp.l2) / n
        for name, arr in params.named_tensors():
            if is_weight_tensor(name):
                grads[name] += (hp.l1 * np.sign(arr) + 2.0 * hp.l2 * arr) / n
    return loss, grads


def build_network_params(hp: HParams, n_synthesizers: int, rng: np.random.Generator) -> NetworkParams:
    """NetworkParams matching the hyperparameters (head chosen by loss mode)."""
    kwargs = dict(
        lstm_width=hp.lstm_width,
        lstm_depth=hp.lstm_depth,
        stride=hp.stride,
        feed_mode=hp.feed_mode,
        hidden_width=hp.hidden_width,
        hidden_depth=hp.hidden_depth,
        head_kind=hp.head_kind,
        embedding_dim=hp.embedding_dim,
        n_synthesizers=n_synthesizers,
    )
    if hp.frontend.kind == "conv_pool":
        return init_network_params(rng, conv=hp.frontend, **kwargs)
    return init_network_params(rng, feature_dim=hp.frontend.feature_dim, **kwargs)


def train(
    corpus: Corpus,
    hp: HParams,
    *,
    feature_cache: Optional[dict[str, FeatureSeq]] = None,
    step_callback: Optional[Callable[[int, float, float, NetworkParams, dict], None]] = None,
    eval_hook: Optional[Callable[[int, NetworkParams], dict]] = None,
    eval_every: int = 0,
) -> tuple[NetworkParams, TrainLog]:
    """Run hp.max_steps Adagrad steps over the corpus.

    Returns the final parameters and the step log. Deterministic given
    (corpus, hp): rerunning yields bitwise-identical parameters.
    """
    if len(corpus) == 0:
        raise ValueError("corpus must be nonempty")
    data = prepare_training_data(corpus, hp.frontend, feature_cache)
    params = build_network_params(
        hp, len(data.synth_ids), np.random.default_rng(np.random.SeedSequence([hp.seed, 0]))
    )
    accumulators = {name: np.zeros_like(arr) for name, arr in params.named_tensors()}
    batches = make_batches(len(corpus), hp.batch_size, seed=derive_seed(hp.seed, 1))
    log = TrainLog()
    for step in range(hp.max_steps):
        idx = next(batches)
        loss, grads = batch_loss_and_grads(params, hp, data, idx)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        adagrad_update(params, accumulators, grads, step, hp)
        lr = learning_rate(hp, step)
        log.append(step, loss, lr)
        if eval_hook is not None and eval_every > 0 and (step + 1) % eval_every == 0:
            snapshot = {"step": step, **eval_hook(step, params)}
            log.snapshots.append(snapshot)
        if step_callback is not None:
            step_callback(step, loss, lr, params, accumulators)
    return params, log


def fold_hparams(hp: HParams, fold: int) -> HParams:
    """Per-fold hyperparameters: same settings, decorrelated seed."""
    return replace(hp, seed=derive_seed(hp.seed, 1000 + fold))


def hparams_to_dict(hp: HParams) -> dict:
    """JSON-ready form; round-trips losslessly through hparams_from_dict."""
    from dataclasses import asdict

    return asdict(hp)


def hparams_from_dict(data: dict) -> HParams:
    payload = dict(data)
    frontend = payload.pop("frontend", None)
    if isinstance(frontend, dict):
        payload["frontend"] = FrontendConfig(**frontend)
    elif frontend is not None:
        payload["frontend"] = frontend
    return HParams(**payload)
