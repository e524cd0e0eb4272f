"""Command-line entry point: gen-data, train, eval, predict, search.

Every command is deterministic given its flags and seeds. A JSON config
file can hold the experiment settings; explicit flags override config
fields. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import Corpus, CorpusError, load_manifest, read_wav
from .evaluation import (
    MetricError,
    calibration_csv,
    render_report,
    run_crossval,
    summary_dict,
    truncation_csv,
    truncation_profile,
)
from .frontend import FrontendConfig, prepare_input
from .hypersearch import results_jsonl, run_search
from .network import load_checkpoint, model_forward, save_checkpoint
from .synthgen import RaterModel, SynthSpec, gen_corpus
from .training import (
    HParams,
    TrainingError,
    hparams_from_dict,
    hparams_to_dict,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class ExperimentConfig:
    """Serializable experiment settings: hyperparameters, paths, seed."""

    hparams: HParams
    manifest: str | None = None
    checkpoint_dir: str | None = None
    report_dir: str | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "hparams": hparams_to_dict(self.hparams),
            "manifest": self.manifest,
            "checkpoint_dir": self.checkpoint_dir,
            "report_dir": self.report_dir,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        return ExperimentConfig(
            hparams=hparams_from_dict(data.get("hparams", {})),
            manifest=data.get("manifest"),
            checkpoint_dir=data.get("checkpoint_dir"),
            report_dir=data.get("report_dir"),
            seed=data.get("seed", 0),
        )


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig(hparams=HParams())
    p = Path(path)
    if not p.exists():
        raise CorpusError(f"config file not found: {p}")
    return ExperimentConfig.from_dict(json.loads(p.read_text(encoding="utf-8")))


# Flag name -> (HParams field, cast). Frontend fields are nested.
_HP_FLAGS = {
    "learning_rate": ("learning_rate", float),
    "decay": ("decay_per_1000", float),
    "l1": ("l1", float),
    "l2": ("l2", float),
    "loss": ("loss_strategy", str),
    "embedding_dim": ("embedding_dim", int),
    "embedding_loss_weight": ("embedding_loss_weight", float),
    "lstm_width": ("lstm_width", int),
    "lstm_depth": ("lstm_depth", int),
    "stride": ("stride", int),
    "feed_mode": ("feed_mode", str),
    "hidden_width": ("hidden_width", int),
    "hidden_depth": ("hidden_depth", int),
    "batch_size": ("batch_size", int),
    "max_steps": ("max_steps", int),
    "seed": ("seed", int),
}
_FRONTEND_FLAGS = {
    "frontend": ("kind", str),
    "width": ("width", int),
    "deltas": ("deltas", str),
    "gammatone": ("gammatone_init", bool),
}


def _add_hparam_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("hyperparameter overrides")
    group.add_argument("--learning-rate", type=float, dest="learning_rate")
    group.add_argument("--decay", type=float, dest="decay")
    group.add_argument("--l1", type=float, dest="l1")
    group.add_argument("--l2", type=float, dest="l2")
    group.add_argument("--loss", choices=("gaussian_nll", "l2", "cross_entropy"), dest="loss")
    group.add_argument("--embedding-dim", type=int, dest="embedding_dim")
    group.add_argument("--embedding-loss-weight", type=float, dest="embedding_loss_weight")
    group.add_argument("--frontend", choices=("log_mel", "conv_pool"), dest="frontend")
    group.add_argument("--width", type=int, dest="width")
    group.add_argument(
        "--deltas",
        choices=("none", "velocity", "velocity_and_acceleration"),
        dest="deltas",
    )
    group.add_argument("--gammatone", action="store_const", const=True, dest="gammatone")
    group.add_argument("--lstm-width", type=int, dest="lstm_width")
    group.add_argument("--lstm-depth", type=int, dest="lstm_depth")
    group.add_argument("--stride", type=int, dest="stride")
    group.add_argument("--feed-mode", choices=("all", "last"), dest="feed_mode")
    group.add_argument("--hidden-width", type=int, dest="hidden_width")
    group.add_argument("--hidden-depth", type=int, dest="hidden_depth")
    group.add_argument("--batch-size", type=int, dest="batch_size")
    group.add_argument("--max-steps", type=int, dest="max_steps")
    group.add_argument("--seed", type=int, dest="seed")


def _apply_overrides(hp: HParams, args: argparse.Namespace) -> HParams:
    updates = {}
    for flag, (name, cast) in _HP_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            updates[name] = cast(value)
    frontend_updates = {}
    for flag, (name, cast) in _FRONTEND_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            frontend_updates[name] = cast(value)
    if frontend_updates:
        updates["frontend"] = replace(hp.frontend, **frontend_updates)
    return replace(hp, **updates) if updates else hp


def _write_train_log(path: Path, log, hp: HParams) -> None:
    lines = [json.dumps({"config": hparams_to_dict(hp)}, sort_keys=True)]
    for step, loss, lr in log.records:
        lines.append(json.dumps({"step": step, "loss": loss, "lr": lr}))
    for snapshot in log.snapshots:
        lines.append(json.dumps({"snapshot": snapshot}, sort_keys=True))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out_dir = Path(args.out)
    qualities = np.linspace(args.quality_min, args.quality_max, args.synths)
    specs = [
        SynthSpec(
            synthesizer_id=f"synth{k:02d}",
            quality=float(q),
            n_utterances=args.utts_per_synth,
            duration_range=(args.duration_min, args.duration_max),
        )
        for k, q in enumerate(qualities)
    ]
    rater_model = RaterModel(
        n_raters=args.raters,
        rater_bias_std=args.rater_bias,
        rating_noise_std=args.rating_noise,
    )
    try:
        manifest = gen_corpus(
            specs, rater_model, out_dir, args.seed,
            duration_quality_pull=args.duration_quality_pull,
        )
    except OSError as exc:
        print(f"gen-data: cannot write corpus under {out_dir}: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config)
    hp = _apply_overrides(config.hparams, args)
    manifest = args.manifest or config.manifest
    if manifest is None:
        print("train: a manifest is required (--manifest or config)", file=sys.stderr)
        return EXIT_USAGE
    corpus = load_manifest(manifest)
    out_dir = Path(args.out or config.checkpoint_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)

    checkpoint_every = args.checkpoint_every
    last_accumulators = {}

    def on_step(step, loss, lr, params, accumulators):
        last_accumulators["acc"] = accumulators
        if checkpoint_every and (step + 1) % checkpoint_every == 0:
            save_checkpoint(
                out_dir / f"model-{step + 1:06d}.ckpt", params, accumulators,
                config={"hparams": hparams_to_dict(hp)},
            )

    params, log = train(corpus, hp, step_callback=on_step)
    accumulators = last_accumulators.get(
        "acc", {name: np.zeros_like(arr) for name, arr in params.named_tensors()}
    )
    checkpoint_path = out_dir / "model.ckpt"
    save_checkpoint(checkpoint_path, params, accumulators, config={"hparams": hparams_to_dict(hp)})
    _write_train_log(out_dir / "train_log.jsonl", log, hp)
    print(checkpoint_path)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config)
    hp = _apply_overrides(config.hparams, args)
    manifest = args.manifest or config.manifest
    if manifest is None:
        print("eval: a manifest is required (--manifest or config)", file=sys.stderr)
        return EXIT_USAGE
    corpus = load_manifest(manifest)
    report_dir = Path(args.report_dir or config.report_dir or "report")
    report_dir.mkdir(parents=True, exist_ok=True)
    seed = args.pipeline_seed if args.pipeline_seed is not None else config.seed

    fold_params = None
    if args.checkpoints:
        ckpt_dir = Path(args.checkpoints)
        paths = [ckpt_dir / f"fold-{k}.ckpt" for k in range(args.k)]
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            print(f"eval: missing fold checkpoints: {', '.join(missing)}", file=sys.stderr)
            return EXIT_DATA
        loaded = [load_checkpoint(p) for p in paths]
        fold_params = [params for params, _, _ in loaded]
        hp = hparams_from_dict(loaded[0][2]["hparams"])

    cv = run_crossval(
        corpus, hp, k=args.k, seed=seed,
        baseline_steps=args.baseline_steps,
        keep_params=args.save_checkpoints,
        fold_params=fold_params,
    )
    (report_dir / "report.txt").write_text(render_report(cv, corpus), encoding="utf-8")
    (report_dir / "summary.json").write_text(
        json.dumps(summary_dict(cv), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (report_dir / "calibration.csv").write_text(
        calibration_csv(cv.pooled["raw"].calibration), encoding="utf-8"
    )
    if args.save_checkpoints:
        for outcome in cv.outcomes:
            save_checkpoint(
                report_dir / f"fold-{outcome.fold}.ckpt", outcome.params,
                config={"hparams": hparams_to_dict(hp)},
            )
    print(report_dir / "report.txt")
    return EXIT_OK


def cmd_predict(args) -> int:
    params, _, config = load_checkpoint(args.checkpoint)
    hp = hparams_from_dict(config["hparams"])
    cfg = hp.frontend
    min_samples = cfg.window if cfg.kind == "log_mel" else cfg.conv_filter_len
    out_dir = Path(args.truncation_out)
    for wav_path in args.wavs:
        waveform = read_wav(wav_path)
        outputs = model_forward(params, prepare_input(waveform, cfg))
        print(f"{wav_path}\t{outputs.mos_point:.4f}")
        if args.truncation:
            profile = truncation_profile(
                lambda w: model_forward(params, prepare_input(w, cfg)).mos_point,
                waveform,
                args.truncation,
                min_samples=min_samples,
            )
            out_dir.mkdir(parents=True, exist_ok=True)
            out_path = out_dir / (Path(wav_path).stem + ".truncation.csv")
            out_path.write_text(truncation_csv(profile), encoding="utf-8")
    return EXIT_OK


def cmd_search(args) -> int:
    corpus = load_manifest(args.manifest)
    results = run_search(
        corpus, args.trials, args.steps, args.seed, k=args.k, batch_size=args.batch_size
    )
    out_path = Path(args.out)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(results_jsonl(results), encoding="utf-8")
    for result in results:
        stamp = "-" if result.pearson is None else f"{result.pearson:.4f}"
        print(
            f"trial {result.trial:3d}  pearson {stamp}  {result.status}"
            f"  ({result.wall_time_s:.1f}s)",
            file=sys.stderr,
        )
    print(out_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="automos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a seeded synthetic corpus")
    p.add_argument("--synths", type=int, default=12)
    p.add_argument("--utts-per-synth", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quality-min", type=float, default=1.5)
    p.add_argument("--quality-max", type=float, default=4.5)
    p.add_argument("--duration-min", type=float, default=1.0)
    p.add_argument("--duration-max", type=float, default=3.0)
    p.add_argument("--raters", type=int, default=5)
    p.add_argument("--rating-noise", type=float, default=0.5)
    p.add_argument("--rater-bias", type=float, default=0.25)
    p.add_argument("--duration-quality-pull", type=float, default=0.35)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--out", help="checkpoint directory")
    p.add_argument("--checkpoint-every", type=int, default=0)
    _add_hparam_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="grouped cross-validated evaluation")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--report-dir")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--pipeline-seed", type=int, default=None,
                   help="seed for folds, baselines and human sampling")
    p.add_argument("--baseline-steps", type=int, default=1500)
    p.add_argument("--save-checkpoints", action="store_true",
                   help="write per-fold checkpoints into the report dir")
    p.add_argument("--checkpoints",
                   help="directory with fold-<k>.ckpt files to reuse instead of training")
    _add_hparam_flags(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("predict", help="predict MOS for WAV files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--truncation", type=int, default=0,
                   help="emit a score-over-time CSV with N prefix points")
    p.add_argument("--truncation-out", default=".")
    p.add_argument("wavs", nargs="+")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("search", help="random hyperparameter search")
    p.add_argument("--manifest", required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--out", default="search_results.jsonl")
    p.set_defaults(handler=cmd_search)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except TrainingError as exc:
        print(f"automos: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, MetricError, OSError) as exc:
        print(f"automos: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"automos: invalid arguments: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
