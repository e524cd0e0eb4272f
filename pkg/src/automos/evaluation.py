"""Grouped cross-validation, metrics, baselines, calibration and reports.

Folds partition synthesizers, never utterances, so no synthesizer leaks
between train and eval. Metrics are reported at three aggregation levels:

* utterance level,
* means over groups of >= 10 utterances with adjacent predicted MOS,
* synthesizer-level means.

Utterance- and group-level numbers reflect the median fold (the fold with
the median utterance-level Pearson r of the raw model predictions, so all
columns are comparable on identical data); synthesizer-level numbers pool
the held-out predictions of every fold. Correlations are undefined for
constant predictors (the bias-only baseline) and are reported as "-".
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import Corpus, RatingSet, Waveform, read_wav, utterance_mos
from .frontend import FeatureSeq
from .network import NetworkParams, forward_batch, pad_batch
from .seeds import derive_seed, rng_for
from .training import HParams, TrainLog, adagrad_step, fold_hparams, train

COLUMN_ORDER = ("bias", "length_nnet", "raw", "quantized", "human")
COLUMN_LABELS = {
    "bias": "Bias-only",
    "length_nnet": "NNet(utt. length)",
    "raw": "Raw",
    "quantized": "Quantized",
    "human": "Sample human rating",
}


class MetricError(ValueError):
    """Undefined metric (constant input) or inconsistent evaluation input."""


# ---------------------------------------------------------------------------
# Scalar metrics
# ---------------------------------------------------------------------------


def pearson(xs, ys) -> float:
    """Sample Pearson correlation; undefined for constant input."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 1 or xs.shape != ys.shape:
        raise MetricError("need two equal-length 1-D samples")
    if len(xs) < 2:
        raise MetricError("need at least two points")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise MetricError("correlation undefined for constant input")
    return float(np.sum(dx * dy) / (sx * sy))


def average_ranks(xs) -> np.ndarray:
    """Ranks starting at 1; tied values receive the mean of their ranks."""
    xs = np.asarray(xs, dtype=np.float64)
    order = np.argsort(xs, kind="stable")
    sorted_vals = xs[order]
    ranks = np.empty(len(xs))
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Pearson correlation of average-ranked data (ties get mean ranks)."""
    return pearson(average_ranks(xs), average_ranks(ys))


def rmse(xs, ys) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 1:
        raise MetricError("need two equal-length nonempty samples")
    return float(np.sqrt(np.mean((xs - ys) ** 2)))


def quantize_mos(x: float) -> float:
    """Clamp to [1, 5] and round to the nearest 0.5, half-way cases up."""
    clamped = min(5.0, max(1.0, float(x)))
    return 1.0 + np.floor((clamped - 1.0) * 2.0 + 0.5) / 2.0


# ---------------------------------------------------------------------------
# Grouping and calibration
# ---------------------------------------------------------------------------


def adjacent_group_means(
    preds, trues, ids: Optional[Sequence] = None, group_size: int = 10
):
    """Mean (pred, true) over consecutive groups after sorting by prediction.

    Groups hold exactly `group_size` pairs except the last, which absorbs
    any remainder so every group has at least `group_size` members. Fewer
    pairs than `group_size` yield a single group. Ties in the predictions
    are broken by id (or input position) for determinism.
    """
    preds = np.asarray(preds, dtype=np.float64)
    trues = np.asarray(trues, dtype=np.float64)
    if group_size < 1:
        raise MetricError("group_size must be >= 1")
    if len(preds) == 0 or preds.shape != trues.shape:
        raise MetricError("need equal-length nonempty pred/true lists")
    tiebreak = np.arange(len(preds)) if ids is None else np.asarray(ids)
    order = np.lexsort((tiebreak, preds))
    n_groups = max(1, len(preds) // group_size)
    mean_preds = np.empty(n_groups)
    mean_trues = np.empty(n_groups)
    for g in range(n_groups):
        lo = g * group_size
        hi = (g + 1) * group_size if g < n_groups - 1 else len(preds)
        sel = order[lo:hi]
        mean_preds[g] = preds[sel].mean()
        mean_trues[g] = trues[sel].mean()
    return mean_preds, mean_trues


@dataclass(frozen=True)
class CalibrationRow:
    window_lo: float
    mean_pred: float
    mean_true: float
    count: int


def calibration_windows(preds, trues, width: float = 0.05) -> tuple[CalibrationRow, ...]:
    """Mean (pred, true) within half-open prediction windows of the given width.

    Windows are anchored at 1.0: [1 + j*width, 1 + (j+1)*width). A prediction
    exactly on a boundary belongs to the upper window. Only nonempty windows
    are emitted, in ascending window order.
    """
    if width <= 0:
        raise MetricError("window width must be positive")
    preds = np.asarray(preds, dtype=np.float64)
    trues = np.asarray(trues, dtype=np.float64)
    buckets = np.floor((preds - 1.0) / width).astype(np.int64)
    rows = []
    for j in sorted(set(buckets.tolist())):
        sel = buckets == j
        rows.append(
            CalibrationRow(
                window_lo=1.0 + j * width,
                mean_pred=float(preds[sel].mean()),
                mean_true=float(trues[sel].mean()),
                count=int(sel.sum()),
            )
        )
    return tuple(rows)


def synthesizer_means(preds, trues, synth_ids):
    """Per-synthesizer mean (pred, true) pairs, ordered by synthesizer id."""
    preds = np.asarray(preds, dtype=np.float64)
    trues = np.asarray(trues, dtype=np.float64)
    synth_ids = np.asarray(synth_ids)
    uniq = sorted(set(synth_ids.tolist()))
    mean_preds = np.empty(len(uniq))
    mean_trues = np.empty(len(uniq))
    for k, synth in enumerate(uniq):
        sel = synth_ids == synth
        mean_preds[k] = preds[sel].mean()
        mean_trues[k] = trues[sel].mean()
    return mean_preds, mean_trues, uniq


# ---------------------------------------------------------------------------
# Grouped folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of the synthesizer set into k folds."""

    folds: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        seen: set[str] = set()
        for fold in self.folds:
            for synth in fold:
                if synth in seen:
                    raise MetricError(f"synthesizer {synth!r} assigned to two folds")
                seen.add(synth)

    @property
    def k(self) -> int:
        return len(self.folds)

    def fold_of(self) -> dict[str, int]:
        return {synth: k for k, fold in enumerate(self.folds) for synth in fold}

    def train_synths(self, fold: int) -> tuple[str, ...]:
        return tuple(s for k, f in enumerate(self.folds) if k != fold for s in f)


def grouped_kfold(corpus: Corpus, k: int, seed: int) -> FoldAssignment:
    """Assign synthesizers to k folds, balancing utterance counts.

    Synthesizers are taken in order of decreasing utterance count (ties
    shuffled by seed) and each goes to the currently lightest fold, so no
    synthesizer ever spans folds and fold sizes stay within one
    synthesizer of each other.
    """
    if k < 2:
        raise MetricError("need k >= 2 folds")
    synths = list(corpus.synthesizers)
    if len(synths) < k:
        raise MetricError(f"need at least {k} synthesizers for {k} folds, got {len(synths)}")
    counts = {s: 0 for s in synths}
    for utt in corpus:
        counts[utt.synthesizer_id] += 1
    rng = rng_for(seed, 0)
    shuffled = [synths[i] for i in rng.permutation(len(synths))]
    ordered = sorted(shuffled, key=lambda s: -counts[s])  # stable: ties keep shuffle order
    fold_sizes = np.zeros(k, dtype=np.int64)
    folds: list[list[str]] = [[] for _ in range(k)]
    for synth in ordered:
        lightest = int(np.argmin(fold_sizes))
        folds[lightest].append(synth)
        fold_sizes[lightest] += counts[synth]
    return FoldAssignment(tuple(tuple(sorted(f)) for f in folds))


# ---------------------------------------------------------------------------
# Baselines and human-rating sampling
# ---------------------------------------------------------------------------


def sample_human_rating(ratings: RatingSet, seed: int) -> float:
    """Uniform seeded draw of one rating from the set."""
    rng = rng_for(seed)
    return ratings.ratings[int(rng.integers(len(ratings.ratings)))]


class BiasPredictor:
    """Constant predictor: the mean MOS of the training utterances."""

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, _duration_seconds: Optional[float] = None) -> float:
        return self.value


def bias_baseline(train_corpus: Corpus) -> BiasPredictor:
    if len(train_corpus) == 0:
        raise MetricError("bias baseline needs a nonempty training corpus")
    return BiasPredictor(np.mean([utterance_mos(u.ratings) for u in train_corpus]))


class LengthMosNet:
    """MOS from utterance duration alone: a 1-10-10-1 rectified-linear net.

    The input is standardized by the training mean/std; training uses the
    L2 objective and the shared Adagrad stepper. Deterministic per seed.
    """

    def __init__(self, seed: int):
        rng = rng_for(seed, 0)
        scale = 0.3
        self.tensors = {
            "w1": rng.uniform(-scale, scale, (1, 10)),
            "b1": np.zeros(10),
            "w2": rng.uniform(-scale, scale, (10, 10)),
            "b2": np.zeros(10),
            "w3": rng.uniform(-scale, scale, (10, 1)),
            "b3": np.zeros(1),
        }
        self.mean = 0.0
        self.std = 1.0
        self.seed = seed

    def forward(self, durations: np.ndarray):
        x = (np.asarray(durations, dtype=np.float64) - self.mean) / self.std
        t = self.tensors
        a1 = x[:, None] @ t["w1"] + t["b1"]
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ t["w2"] + t["b2"]
        h2 = np.maximum(a2, 0.0)
        out = (h2 @ t["w3"] + t["b3"])[:, 0]
        return out, (x, a1, h1, a2, h2)

    def loss_and_grads(self, durations: np.ndarray, targets: np.ndarray):
        """Mean squared error plus exact gradients for every tensor."""
        out, (x, a1, h1, a2, h2) = self.forward(durations)
        diff = out - np.asarray(targets, dtype=np.float64)
        loss = float(np.mean(diff**2))
        t = self.tensors
        d_out = (2.0 / len(diff)) * diff
        grads = {}
        grads["w3"] = h2.T @ d_out[:, None]
        grads["b3"] = np.array([d_out.sum()])
        d_h2 = d_out[:, None] @ t["w3"].T
        d_a2 = d_h2 * (a2 > 0.0)
        grads["w2"] = h1.T @ d_a2
        grads["b2"] = d_a2.sum(axis=0)
        d_h1 = d_a2 @ t["w2"].T
        d_a1 = d_h1 * (a1 > 0.0)
        grads["w1"] = x[:, None].T @ d_a1
        grads["b1"] = d_a1.sum(axis=0)
        return loss, grads

    def fit(self, durations, targets, steps: int = 1500, lr: float = 0.1):
        """Full-batch Adagrad; the input is scalar so every step is cheap."""
        durations = np.asarray(durations, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        self.mean = float(durations.mean())
        std = float(durations.std())
        self.std = std if std > 0 else 1.0
        accumulators = {name: np.zeros_like(arr) for name, arr in self.tensors.items()}
        for step in range(steps):
            _, grads = self.loss_and_grads(durations, targets)
            adagrad_step(self.tensors.items(), accumulators, grads, lr, step)
        return self

    def predict(self, durations) -> np.ndarray:
        return self.forward(durations)[0]

    def __call__(self, duration_seconds: float) -> float:
        return float(self.predict(np.array([duration_seconds]))[0])


def length_nnet_baseline(
    train_corpus: Corpus, seed: int, *, steps: int = 1500, lr: float = 0.1
) -> LengthMosNet:
    """Fit the duration-only baseline on a corpus (reads WAV headers)."""
    from .corpus import wav_duration_seconds

    if len(train_corpus) == 0:
        raise MetricError("length baseline needs a nonempty training corpus")
    durations = np.array([wav_duration_seconds(u.wav_path) for u in train_corpus])
    targets = np.array([utterance_mos(u.ratings) for u in train_corpus])
    return LengthMosNet(seed).fit(durations, targets, steps=steps, lr=lr)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LevelMetrics:
    rmse: float
    pearson: Optional[float]
    spearman: Optional[float]
    n: int

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "pearson": self.pearson, "spearman": self.spearman, "n": self.n}


@dataclass(frozen=True)
class MetricsReport:
    """All Table-style metrics for one set of utterance predictions."""

    utterance: LevelMetrics
    group10: LevelMetrics
    synthesizer: LevelMetrics
    calibration: tuple[CalibrationRow, ...]

    def to_dict(self) -> dict:
        return {
            "utterance": self.utterance.to_dict(),
            "group10": self.group10.to_dict(),
            "synthesizer": self.synthesizer.to_dict(),
        }


def _safe(metric: Callable, xs, ys) -> Optional[float]:
    try:
        return metric(xs, ys)
    except MetricError:
        return None


def _without_correlations(report: "MetricsReport") -> "MetricsReport":
    def scrub(level: "LevelMetrics") -> "LevelMetrics":
        return LevelMetrics(rmse=level.rmse, pearson=None, spearman=None, n=level.n)

    return MetricsReport(
        utterance=scrub(report.utterance),
        group10=scrub(report.group10),
        synthesizer=scrub(report.synthesizer),
        calibration=report.calibration,
    )


def _level_metrics(preds, trues) -> LevelMetrics:
    return LevelMetrics(
        rmse=rmse(preds, trues),
        pearson=_safe(pearson, preds, trues),
        spearman=_safe(spearman, preds, trues),
        n=len(preds),
    )


def evaluate(predictions, corpus: Corpus, quantized: bool = False) -> MetricsReport:
    """Score (utterance_id, predicted MOS) pairs against the corpus ratings.

    With ``quantized=True`` the predictions are snapped to the half-point
    grid first; this is identical to evaluating pre-quantized predictions.
    """
    by_id = {u.id: u for u in corpus}
    preds = []
    trues = []
    synths = []
    ids = []
    for utt_id, pred in predictions:
        if utt_id not in by_id:
            raise MetricError(f"prediction for unknown utterance {utt_id!r}")
        utt = by_id[utt_id]
        preds.append(quantize_mos(pred) if quantized else float(pred))
        trues.append(utterance_mos(utt.ratings))
        synths.append(utt.synthesizer_id)
        ids.append(utt_id)
    preds = np.asarray(preds)
    trues = np.asarray(trues)
    group_preds, group_trues = adjacent_group_means(preds, trues, ids=ids)
    synth_preds, synth_trues, _ = synthesizer_means(preds, trues, synths)
    return MetricsReport(
        utterance=_level_metrics(preds, trues),
        group10=_level_metrics(group_preds, group_trues),
        synthesizer=_level_metrics(synth_preds, synth_trues),
        calibration=calibration_windows(preds, trues),
    )


# ---------------------------------------------------------------------------
# Cross-validated evaluation pipeline
# ---------------------------------------------------------------------------


@dataclass
class FoldOutcome:
    """Held-out predictions of every predictor for one fold."""

    fold: int
    utt_ids: list[str]
    predictions: dict[str, np.ndarray]  # column -> per-utterance predictions
    train_log: Optional[TrainLog] = None
    params: Optional[NetworkParams] = None


@dataclass
class CrossvalResult:
    fold_assignment: FoldAssignment
    outcomes: list[FoldOutcome]
    per_fold: dict[str, list[MetricsReport]]  # column -> report per fold
    pooled: dict[str, MetricsReport]  # column -> all-folds report
    median_fold: int
    fold_pearson: list[Optional[float]]
    n_utterances: int

    def report_for(self, column: str, level: str) -> LevelMetrics:
        """Table cell: median fold for utterance/group10, pooled for synthesizer."""
        if level == "synthesizer":
            return self.pooled[column].synthesizer
        report = self.per_fold[column][self.median_fold]
        return getattr(report, level)


def _max_workers() -> int:
    value = os.environ.get("AUTOMOS_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Order-preserving map, threaded when AUTOMOS_THREADS > 1.

    Jobs must be independent and internally seeded; results are identical
    regardless of the level of parallelism.
    """
    workers = _max_workers()
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def predict_from_features(params: NetworkParams, seqs: list[FeatureSeq], batch_size: int = 64):
    preds = np.empty(len(seqs))
    conv_mode = params.conv is not None
    for lo in range(0, len(seqs), batch_size):
        chunk = seqs[lo : lo + batch_size]
        inputs, valid = pad_batch(chunk, conv_mode=conv_mode)
        out, _ = forward_batch(params, inputs, valid)
        preds[lo : lo + len(chunk)] = out.mos
    return preds


def run_crossval(
    corpus: Corpus,
    hp: HParams,
    *,
    k: int = 5,
    seed: int = 0,
    baseline_steps: int = 1500,
    keep_params: bool = False,
    fold_params: Optional[list[NetworkParams]] = None,
) -> CrossvalResult:
    """Train k held-out models and score every utterance from the model
    where it was held out, alongside both baselines and a sampled human
    rating per utterance.

    ``fold_params`` supplies pre-trained per-fold parameters (e.g. from
    saved checkpoints) in fold order, skipping the training step.
    """
    from .frontend import prepare_input

    if fold_params is not None and len(fold_params) != k:
        raise MetricError(f"need {k} fold parameter sets, got {len(fold_params)}")
    folds = grouped_kfold(corpus, k, seed)
    fold_of = folds.fold_of()

    feature_cache: dict[str, FeatureSeq] = {}
    durations: dict[str, float] = {}
    for utt in corpus:
        wav = read_wav(utt.wav_path)
        feature_cache[utt.id] = prepare_input(wav, hp.frontend)
        durations[utt.id] = wav.duration_seconds

    human = {
        utt.id: sample_human_rating(utt.ratings, derive_seed(seed, 1, pos))
        for pos, utt in enumerate(corpus)
    }

    def run_fold(fi: int) -> FoldOutcome:
        train_corpus = corpus.subset(folds.train_synths(fi))
        eval_utts = [u for u in corpus if fold_of[u.synthesizer_id] == fi]
        if fold_params is not None:
            params, log = fold_params[fi], None
        else:
            params, log = train(train_corpus, fold_hparams(hp, fi), feature_cache=feature_cache)
        raw = predict_from_features(params, [feature_cache[u.id] for u in eval_utts])
        bias = bias_baseline(train_corpus)
        nnet = length_nnet_baseline(train_corpus, derive_seed(seed, 2, fi), steps=baseline_steps)
        eval_durations = np.array([durations[u.id] for u in eval_utts])
        outcome = FoldOutcome(
            fold=fi,
            utt_ids=[u.id for u in eval_utts],
            predictions={
                "raw": raw,
                "quantized": np.array([quantize_mos(p) for p in raw]),
                "bias": np.full(len(eval_utts), bias.value),
                "length_nnet": nnet.predict(eval_durations),
                "human": np.array([human[u.id] for u in eval_utts]),
            },
            train_log=log,
        )
        if keep_params:
            outcome.params = params
        return outcome

    outcomes = parallel_map(run_fold, range(k))

    per_fold = {col: [] for col in COLUMN_ORDER}
    for outcome in outcomes:
        for col in COLUMN_ORDER:
            pairs = list(zip(outcome.utt_ids, outcome.predictions[col]))
            per_fold[col].append(evaluate(pairs, corpus))
    pooled = {}
    for col in COLUMN_ORDER:
        pairs = [
            (utt_id, pred)
            for outcome in outcomes
            for utt_id, pred in zip(outcome.utt_ids, outcome.predictions[col])
        ]
        pooled[col] = evaluate(pairs, corpus)
    # The bias predictor is constant within each fold, so correlations
    # against it are undefined; pooling k distinct fold constants would
    # manufacture one, so the pooled report drops them too.
    pooled["bias"] = _without_correlations(pooled["bias"])

    fold_pearson = [report.utterance.pearson for report in per_fold["raw"]]
    defined = [(p, i) for i, p in enumerate(fold_pearson) if p is not None]
    if not defined:
        median_fold = 0
    else:
        defined.sort()
        median_fold = defined[(len(defined) - 1) // 2][1]

    return CrossvalResult(
        fold_assignment=folds,
        outcomes=outcomes,
        per_fold=per_fold,
        pooled=pooled,
        median_fold=median_fold,
        fold_pearson=fold_pearson,
        n_utterances=len(corpus),
    )


# ---------------------------------------------------------------------------
# Truncation probe
# ---------------------------------------------------------------------------


def truncation_profile(
    model: Callable[[Waveform], float],
    waveform: Waveform,
    n_points: int,
    min_samples: int = 400,
) -> list[tuple[float, float]]:
    """Predicted MOS on evenly spaced waveform prefixes (score over time).

    The last prefix is the full waveform, so the final entry equals the
    plain full-waveform prediction.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    n = len(waveform)
    counts = [(n * (j + 1)) // n_points for j in range(n_points)]
    if counts[0] < min_samples:
        raise ValueError(
            f"waveform too short: shortest truncation {counts[0]} < {min_samples} samples"
        )
    if len(set(counts)) != len(counts):
        raise ValueError("waveform too short for this many truncation points")
    profile = []
    for count in counts:
        prefix = Waveform(waveform.samples[:count])
        profile.append((count / waveform.sample_rate, float(model(prefix))))
    return profile


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


def render_report(cv: CrossvalResult, corpus: Corpus) -> str:
    """Human-readable metrics table across all predictors and levels."""
    lines = []
    lines.append("MOS estimation report (grouped cross-validation)")
    lines.append("=" * 48)
    lines.append(
        f"utterances: {cv.n_utterances}   synthesizers: {len(corpus.synthesizers)}   "
        f"folds: {cv.fold_assignment.k}   median fold: {cv.median_fold} "
        f"(by raw utterance-level Pearson r)"
    )
    lines.append("")
    header = ["Metric / Model"] + [COLUMN_LABELS[c] for c in COLUMN_ORDER]
    widths = [26] + [max(12, len(h) + 2) for h in header[1:]]

    def row(cells):
        return "".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()

    lines.append(row(header))
    sections = [
        ("utterance", "Utterance-level (median fold)"),
        ("group10", "10-utterance means (median fold)"),
        ("synthesizer", "Synthesizer-level means (all folds)"),
    ]
    for level, title in sections:
        n = cv.report_for("raw", level).n
        lines.append(f"{title}, n={n}")
        for metric, label in (("rmse", "  RMSE"), ("pearson", "  Pearson r"), ("spearman", "  Spearman r")):
            cells = [label]
            for col in COLUMN_ORDER:
                cells.append(_fmt(getattr(cv.report_for(col, level), metric)))
            lines.append(row(cells))
    lines.append("")
    return "\n".join(lines) + "\n"


def summary_dict(cv: CrossvalResult) -> dict:
    """Machine-readable counterpart of the text report."""
    return {
        "n_utterances": cv.n_utterances,
        "k": cv.fold_assignment.k,
        "median_fold": cv.median_fold,
        "fold_pearson_raw": cv.fold_pearson,
        "folds": [list(f) for f in cv.fold_assignment.folds],
        "columns": {
            col: {
                "per_fold": [r.to_dict() for r in cv.per_fold[col]],
                "pooled": cv.pooled[col].to_dict(),
            }
            for col in COLUMN_ORDER
        },
    }


def calibration_csv(rows) -> str:
    lines = ["window_lo,mean_pred,mean_true,count"]
    for r in rows:
        lines.append(f"{r.window_lo:.6g},{r.mean_pred:.6f},{r.mean_true:.6f},{r.count}")
    return "\n".join(lines) + "\n"


def truncation_csv(profile) -> str:
    lines = ["duration_s,pred_mos"]
    for duration, pred in profile:
        lines.append(f"{duration:.6f},{pred:.6f}")
    return "\n".join(lines) + "\n"
