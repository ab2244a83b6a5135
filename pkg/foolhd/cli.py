"""Command-line entry point: synth, train, attack, eval and report subcommands."""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from . import attacks
from . import corpus
from . import experiment
from .errors import FoolHDError
from .report_formatter import json_report_to_text, summary_to_text

logging.basicConfig(
    level=logging.INFO,
    format=experiment.LOG_FORMAT,
    datefmt=experiment.LOG_DATEFMT,
)
logger = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser, seed: bool = True) -> None:
    parser.add_argument("--config", type=Path, help="Experiment YAML file (schema version 1).")
    parser.add_argument("--corpus-dir", type=Path, help="Directory holding manifest.csv.")
    parser.add_argument("--checkpoint", type=Path, help="Classifier checkpoint (.npz).")
    if seed:
        parser.add_argument(
            "--seed",
            type=int,
            help=f"Master seed. Required unless {experiment.SEED_ENV_VAR} or the config file provides one.",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foolhd",
        description=(
            "Crafts adversarial speech against a speaker-identification classifier with a per-clip gated"
            " convolutional autoencoder (FoolHD), plus FGSM/BIM baselines, and reports effectiveness and"
            " imperceptibility metrics."
        ),
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging (DEBUG level).")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Synthesize the toy speaker corpus.")
    synth.add_argument("--config", type=Path, help="Experiment YAML file; its corpus section supplies defaults.")
    synth.add_argument("--out-dir", type=Path, help="Where to write wav/ and manifest.csv.")
    synth.add_argument("--n-speakers", type=int, help="Number of speakers.")
    synth.add_argument("--clips-per-speaker", type=int, help="Clips per speaker (train + test).")
    synth.add_argument("--test-clips", type=int, help="Test clips per speaker.")
    synth.add_argument("--seed", type=int, help="Master seed.")

    train = sub.add_parser("train", help="Train the x-vector classifier on the train split.")
    _add_common(train)
    train.add_argument("--epochs", type=int, help="Training epochs.")

    attack = sub.add_parser("attack", help="Attack every test clip and write WAVs, CSV and JSON.")
    attack.add_argument("method", nargs="?", choices=attacks.METHODS, help="Attack method.")
    _add_common(attack)
    attack.add_argument("--mode", choices=[attacks.UNTARGETED, attacks.TARGETED], help="Attack goal.")
    attack.add_argument("--m", type=int, dest="iterations", help="Iterations M (default 500, or 1000 if targeted).")
    attack.add_argument("--epsilon", type=float, help="L-infinity budget for fgsm/bim.")
    attack.add_argument("--bim-iterations", type=int, help="BIM steps.")
    attack.add_argument("--lr", type=float, help="Adam learning rate of the autoencoder.")
    attack.add_argument("--target", type=int, help="Fixed target speaker for targeted attacks.")
    attack.add_argument("--output-dir", type=Path, help="Run directory.")
    attack.add_argument("--workers", type=int, help="Parallel worker processes.")
    attack.add_argument("--limit", type=int, help="Attack only the first N test clips.")

    evaluate = sub.add_parser("eval", help="Recompute metrics from stored adversarial WAVs.")
    _add_common(evaluate, seed=False)
    evaluate.add_argument("--adversarial-dir", type=Path, required=True, help="Directory of adversarial WAVs.")
    evaluate.add_argument("--output", type=Path, help="Summary JSON. Defaults to eval_summary.json beside the WAVs.")
    evaluate.add_argument("--results-output", type=Path, help="Per-clip CSV. Defaults to eval_results.csv beside the WAVs.")

    report = sub.add_parser("report", help="Aggregate a results.csv, or render a summary JSON as text.")
    report.add_argument("--results", type=Path, help="results.csv, or a run directory containing one.")
    report.add_argument("--summarize", type=Path, help="Existing summary JSON to convert to plain text.")
    report.add_argument("--output", type=Path, help="Write the aggregate JSON here.")
    report.add_argument("--text-output", type=Path, help="File for the plain-text summary. Defaults to stdout.")
    return parser


def _relative_to(path: Path, base_dir: Path) -> str:
    return os.path.relpath(path.resolve(), base_dir.resolve())


def _load_mapping(args) -> tuple:
    config_path = getattr(args, "config", None)
    data = experiment.load_config(config_path) if config_path else {}
    base_dir = config_path.parent if config_path else Path(".")
    return data, base_dir


def build_config(args) -> experiment.ExperimentConfig:
    """Configuration file, then command-line flags on top."""
    data, base_dir = _load_mapping(args)
    paths = {}
    for flag, key in (("corpus_dir", "corpus_dir"), ("checkpoint", "checkpoint"), ("output_dir", "output_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            paths[key] = _relative_to(value, base_dir)
    overrides = {"paths": paths} if paths else {}

    attack = {}
    if getattr(args, "method", None):
        attack["method"] = args.method
    for name in ("mode", "iterations", "epsilon", "bim_iterations", "lr", "target"):
        value = getattr(args, name, None)
        if value is not None:
            attack[name] = value
    if attack:
        overrides["attack"] = attack
    for name in ("workers", "limit"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "epochs", None) is not None:
        overrides["training"] = {"epochs": args.epochs}

    data = experiment._merge_dicts(data, overrides)
    cfg = experiment.ExperimentConfig.from_mapping(data, base_dir, cli_seed=getattr(args, "seed", None))
    logger.debug(f"Effective configuration: {json.dumps(cfg.echo(), sort_keys=True)}")
    return cfg


def _cmd_synth(args) -> None:
    data, base_dir = _load_mapping(args)
    settings = experiment.CorpusSettings(**experiment._section(experiment.CorpusSettings, data.get("corpus"), "corpus"))
    seed = experiment.resolve_seed(args.seed, data.get("seed"))
    if args.out_dir is not None:
        out_dir = args.out_dir
    else:
        out_dir = base_dir / (data.get("paths") or {}).get("corpus_dir", "corpus")
    test_clips = args.test_clips
    if test_clips is None and args.clips_per_speaker is None:
        test_clips = settings.test_clips_per_speaker
    corpus.synthesize_toy_corpus(
        args.n_speakers if args.n_speakers is not None else settings.n_speakers,
        args.clips_per_speaker if args.clips_per_speaker is not None else settings.clips_per_speaker,
        seed,
        out_dir,
        test_clips_per_speaker=test_clips,
    )


def _cmd_train(args) -> None:
    cfg = build_config(args)
    with experiment.stage("config"):
        cfg.check_paths()
    experiment.train_stage(cfg)


def _cmd_attack(args) -> None:
    cfg = build_config(args)
    experiment.run_experiment(cfg)


def _cmd_eval(args) -> None:
    data, base_dir = _load_mapping(args)
    data.setdefault("seed", 0)  # evaluation draws no random numbers
    paths = dict(data.get("paths") or {})
    for flag in ("corpus_dir", "checkpoint"):
        value = getattr(args, flag)
        if value is not None:
            paths[flag] = _relative_to(value, base_dir)
    data["paths"] = paths
    cfg = experiment.ExperimentConfig.from_mapping(data, base_dir, environ={})
    report = experiment.evaluate_directory(cfg, args.adversarial_dir)
    output = args.output or args.adversarial_dir.parent / "eval_summary.json"
    results_output = args.results_output or args.adversarial_dir.parent / "eval_results.csv"
    experiment.write_results_csv(report.records, results_output)
    experiment.write_summary(report.to_dict(), output)


def _emit_text(text: str, path: Optional[Path]) -> None:
    if path:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        print(text)


def _cmd_report(args, parser: argparse.ArgumentParser) -> None:
    if args.summarize:
        _emit_text(json_report_to_text(args.summarize), args.text_output)
        return
    if args.results is None:
        parser.error("report needs --results or --summarize")
    results = args.results / experiment.RESULTS_NAME if args.results.is_dir() else args.results
    summary = experiment.report_from_csv(results)
    if args.output:
        experiment.write_summary(summary, args.output)
    _emit_text(summary_to_text(summary), args.text_output)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
        for handler in logging.getLogger().handlers:
            handler.setLevel(logging.DEBUG)
        logger.debug("Verbose logging enabled.")

    try:
        if args.command == "synth":
            _cmd_synth(args)
        elif args.command == "train":
            _cmd_train(args)
        elif args.command == "attack":
            _cmd_attack(args)
        elif args.command == "eval":
            _cmd_eval(args)
        else:
            _cmd_report(args, parser)
        return 0
    except FileNotFoundError as e:
        logger.critical(f"A critical file was not found: {e}")
        _print_error(e)
    except FoolHDError as e:
        logger.critical(f"{type(e).__name__}: {e}")
        _print_error(e)
    except Exception as e:
        logger.critical(f"An unexpected error occurred: {e}", exc_info=True)
        _print_error(e)
    return 1


def _print_error(error: BaseException) -> None:
    payload = {"error": type(error).__name__, "stage": getattr(error, "stage", None), "message": str(error)}
    print(json.dumps(payload), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
