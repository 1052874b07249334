"""Command-line entry point: synth, validate, featurize, split, tune, train, eval, predict."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import plotting
from .config import ConfigError, RunConfig, load_config
from .corpus import (
    TARGET_CHANNELS, CorpusError, DatasetManifest, LabelClass, SplitAssignment, SynthSpec,
    class_stats, load_montage, partition, read_trial, select_channels, synthesize_dataset,
    validate_manifest,
)
from .dsp import DSPError, featurize_trial
from .hpo import SearchError, SearchSpace, run_search, write_results_csv
from .model import ModelConfig, ModelError, init_params, make_batch, predict_proba
from .pipeline import featurize_manifest, load_features, split_features
from .reporting import reference_section, write_json
from .trainer import CheckpointError, TrainConfig, TrainingError, evaluate, load_checkpoint, train

log = logging.getLogger("neurowave")

EXPECTED_ERRORS = (
    ConfigError, CorpusError, DSPError, ModelError, SearchError, TrainingError,
    CheckpointError, OSError, KeyError, ValueError,
)


def _overrides(args) -> dict:
    """Translate explicitly given flags into a nested config patch."""
    table = {
        "seed": ("seed",),
        "out_dir": None,
        "dataset_dir": ("paths", "dataset_dir"),
        "features_dir": ("paths", "features_dir"),
        "split": ("paths", "split"),
        "checkpoint": ("paths", "checkpoint"),
        "reports_dir": ("paths", "reports_dir"),
        "per_class": ("synth", "n_trials_per_class"),
        "duration": ("synth", "duration_s"),
        "fs": ("synth", "sample_rate_hz"),
        "noise": ("synth", "noise_floor"),
        "full_montage": ("synth", "full_montage"),
        "montage": ("pipeline", "montage"),
        "epochs": ("train", "epochs"),
        "n_samples": ("hpo", "n_samples"),
        "proxy_epochs": ("hpo", "proxy_epochs"),
        "workers": ("hpo", "workers"),
    }
    patch: dict = {}
    for key, where in table.items():
        val = getattr(args, key, None)
        if val is None or where is None or val is False:
            continue
        node = patch
        for part in where[:-1]:
            node = node.setdefault(part, {})
        node[where[-1]] = val
    model_file = getattr(args, "model", None)
    if model_file:
        path = Path(model_file)
        if not path.exists():
            raise ConfigError(f"model config file not found: {path}")
        patch["model"] = json.loads(path.read_text())
    return patch


def _features(cfg: RunConfig):
    fman = DatasetManifest.load(Path(cfg.paths.features_dir) / "manifest.json")
    validate_manifest(fman, check_files=True)
    split = SplitAssignment.load(cfg.paths.split)
    return split_features(load_features(fman), split)


def _reports_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.reports_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig, args) -> int:
    s = cfg.synth
    montage = tuple(load_montage(cfg.pipeline.montage)) if s.full_montage else TARGET_CHANNELS
    spec = SynthSpec(
        n_trials_per_class=s.n_trials_per_class, duration_s=s.duration_s,
        sample_rate_hz=s.sample_rate_hz, noise_floor=s.noise_floor, seed=cfg.seed, montage=montage,
    )
    man = synthesize_dataset(spec, cfg.paths.dataset_dir)
    print(json.dumps({"dataset_dir": cfg.paths.dataset_dir, "counts": man.counts}))
    return 0


def cmd_validate(cfg: RunConfig, args) -> int:
    path = Path(args.manifest or Path(cfg.paths.dataset_dir) / "manifest.json")
    man = DatasetManifest.load(path)
    counts = validate_manifest(man, check_files=args.check_files)
    stats = class_stats([counts[c.key] for c in LabelClass])
    doc = {"manifest": str(path), "counts": counts, "imbalance_ratio": stats["imbalance_ratio"]}
    if args.figure:
        doc["figure"] = plotting.label_distribution(counts, args.figure)
    print(json.dumps(doc))
    return 0


def cmd_featurize(cfg: RunConfig, args) -> int:
    man = DatasetManifest.load(Path(cfg.paths.dataset_dir) / "manifest.json")
    validate_manifest(man, check_files=True)
    p = cfg.pipeline
    out = featurize_manifest(man, cfg.paths.features_dir, p.channels, p.filter_order, p.de_floor,
                             p.window_s, workers=cfg.hpo.workers)
    print(json.dumps({"features_dir": cfg.paths.features_dir, "trials": len(out.trials)}))
    return 0


def cmd_split(cfg: RunConfig, args) -> int:
    man = DatasetManifest.load(Path(cfg.paths.dataset_dir) / "manifest.json")
    validate_manifest(man)
    split = partition(man, seed=cfg.seed)
    Path(cfg.paths.split).parent.mkdir(parents=True, exist_ok=True)
    split.save(cfg.paths.split)
    print(json.dumps({"split": cfg.paths.split, "sizes": split.sizes()}))
    return 0


def cmd_tune(cfg: RunConfig, args) -> int:
    started = time.perf_counter()
    data = _features(cfg)
    best, results = run_search(SearchSpace(), cfg.hpo.n_samples, cfg.hpo.proxy_epochs,
                               data["train"], data["validation"], seed=cfg.seed,
                               workers=cfg.hpo.workers)
    out = _reports_dir(cfg)
    write_results_csv(results, out / "hpo_results.csv")
    write_json(best.to_dict(), out / "best_config.json")
    fig = plotting.search_results(results, out / "hpo_search.png")
    failed = [r.sample_index for r in results if r.error]
    write_json({
        "command": "tune", "config": cfg.to_dict(), "best_config": best.to_dict(),
        "results_csv": str(out / "hpo_results.csv"), "failed_samples": failed,
        "figures": [fig], "elapsed_seconds": round(time.perf_counter() - started, 3),
    }, out / "tune_report.json")
    print(json.dumps({"best_config": best.to_dict(), "failed": len(failed)}))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    started = time.perf_counter()
    data = _features(cfg)
    Path(cfg.paths.checkpoint).parent.mkdir(parents=True, exist_ok=True)
    params = init_params(cfg.model, seed=cfg.seed)
    tc = TrainConfig(epochs=cfg.train.epochs, seed=cfg.seed, checkpoint_path=cfg.paths.checkpoint)
    best, history = train(cfg.model, params, data["train"], data["validation"], tc)
    out = _reports_dir(cfg)
    history.write_csv(out / "history.csv")
    fig = plotting.training_curves(history, out / "training_curves.png")
    write_json({
        "command": "train", "config": cfg.to_dict(), "checkpoint": cfg.paths.checkpoint,
        "history_csv": str(out / "history.csv"), "best_epoch": history.best_epoch,
        "best_val_accuracy": history.best_val_accuracy,
        "final_train_accuracy": history.records[-1].train_accuracy,
        "figures": [fig], "elapsed_seconds": round(time.perf_counter() - started, 3),
    }, out / "train_report.json")
    print(json.dumps({"best_epoch": history.best_epoch, "best_val_accuracy": history.best_val_accuracy}))
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    ckpt_path = Path(cfg.paths.checkpoint)
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    data = _features(cfg)
    report = evaluate(ckpt.params, data[args.subset])
    out = _reports_dir(cfg)
    fig = plotting.confusion(report.confusion, out / f"confusion_{args.subset}.png",
                             title=f"{args.subset} (n={report.total})")
    history_csv = out / "history.csv"
    path = write_json({
        "command": "eval", "config": cfg.to_dict(), "subset": args.subset,
        "checkpoint": {"path": str(ckpt_path), "epoch": ckpt.epoch, "val_accuracy": ckpt.val_accuracy,
                       "model_config": ckpt.params.config.to_dict()},
        "metrics": report.to_json(),
        "history_csv": str(history_csv) if history_csv.exists() else None,
        "reference": reference_section(),
        "figures": [fig],
    }, out / f"eval_report_{args.subset}.json")
    print(json.dumps({"report": path, "accuracy": report.accuracy, "macro_f1": report.macro_f1}))
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    ckpt_path = Path(cfg.paths.checkpoint)
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    trial_path = Path(args.trial)
    if not trial_path.exists():
        raise ConfigError(f"trial file not found: {trial_path}")
    p = cfg.pipeline
    trial = select_channels(read_trial(trial_path), p.channels)
    ft = featurize_trial(trial, p.channels, order=p.filter_order, floor=p.de_floor, window_s=p.window_s)
    probs = predict_proba(ckpt.params, make_batch([ft.values], [0]))[0]
    label = LabelClass(int(np.argmax(probs)))
    print(json.dumps({
        "trial": str(trial_path), "label": label.key,
        "probabilities": {c.key: float(probs[int(c)]) for c in LabelClass},
    }))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "validate": cmd_validate,
    "featurize": cmd_featurize,
    "split": cmd_split,
    "tune": cmd_tune,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (NEUROWAVE_SEED overrides)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="neurowave", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--dataset-dir")
    p.add_argument("--per-class", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--fs", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--full-montage", action="store_true", help="write all 62 montage channels")
    p.add_argument("--montage", help="montage table file (one channel name per line)")

    p = sub.add_parser("validate", parents=[common], help="check a dataset manifest")
    p.add_argument("--manifest")
    p.add_argument("--dataset-dir")
    p.add_argument("--check-files", action="store_true")
    p.add_argument("--figure", help="write a label-distribution bar chart here")

    p = sub.add_parser("featurize", parents=[common], help="compute DE feature files")
    p.add_argument("--dataset-dir")
    p.add_argument("--features-dir")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("split", parents=[common], help="70/15/15 train/validation/test split")
    p.add_argument("--dataset-dir")
    p.add_argument("--split")

    for name, helptext in (("tune", "random hyper-parameter search"), ("train", "train and checkpoint"),
                           ("eval", "evaluate a checkpoint")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--features-dir")
        p.add_argument("--split")
        p.add_argument("--reports-dir")
        p.add_argument("--checkpoint")
        if name == "tune":
            p.add_argument("--n-samples", type=int)
            p.add_argument("--proxy-epochs", type=int)
            p.add_argument("--workers", type=int)
        if name == "train":
            p.add_argument("--epochs", type=int)
            p.add_argument("--model", help="JSON file with model hyper-parameters")
        if name == "eval":
            p.add_argument("--subset", choices=("train", "validation", "test"), default="test")

    p = sub.add_parser("predict", parents=[common], help="classify one trial file")
    p.add_argument("--checkpoint")
    p.add_argument("--trial", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        cfg.validate()
        return COMMANDS[args.command](cfg, args)
    except EXPECTED_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"neurowave {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
