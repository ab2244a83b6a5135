"""Experiment configuration and the train / attack / evaluate / report stages."""

import contextlib
import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import attacks
from . import corpus
from . import dsp
from . import losses
from . import metrics
from . import nets
from . import wavio
from .errors import ConfigError, StageError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SEED_ENV_VAR = "FOOLHD_SEED"
LOG_FORMAT = "[%(levelname)s] %(asctime)s - %(name)s - %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"
RESULTS_NAME = "results.csv"
SUMMARY_NAME = "summary.json"
RUN_LOG_NAME = "run.log"
INCOMPLETE_MARKER = "INCOMPLETE"
ADVERSARIAL_DIR = "adversarial"

TOP_LEVEL_KEYS = {
    "schema_version", "seed", "workers", "limit", "record_wall_clock",
    "paths", "corpus", "attack", "frontend", "training", "fine_tune",
}
PATH_KEYS = ("corpus_dir", "output_dir", "checkpoint", "base_checkpoint")


def _merge_dicts(base: dict, new: dict) -> dict:
    """Merge ``new`` into ``base``: lists concatenate, mappings merge recursively, scalars are replaced."""
    for key, value in new.items():
        if isinstance(value, list):
            existing = base.get(key)
            if isinstance(existing, list):
                base[key] = existing + value
            else:
                base[key] = list(value)
        elif isinstance(value, dict):
            if isinstance(base.get(key), dict):
                base[key] = _merge_dicts(base[key], value)
            else:
                base[key] = _merge_dicts({}, value)
        else:
            base[key] = value
    return base


def _resolve_relative_paths(config: dict, base_dir: Path, root_dir: Path) -> None:
    """Re-anchor relative entries under ``paths`` from ``base_dir`` to ``root_dir``.

    Stored paths stay relative so that the configuration echo in a report
    does not depend on where the run happened.
    """
    paths = config.get("paths")
    if isinstance(paths, dict):
        for key, value in paths.items():
            if isinstance(value, str) and not Path(value).is_absolute():
                abs_path = (base_dir / value).resolve()
                paths[key] = os.path.relpath(abs_path, root_dir.resolve())


def load_config(config_path: Path, *, _root_dir: Optional[Path] = None) -> dict:
    """Load a YAML experiment file, following ``extends`` (a path or a list of paths)."""
    logger.info(f"Loading configuration from '{config_path}'...")
    config_path = Path(config_path)
    if not config_path.is_file():
        logger.error(f"Configuration file not found: {config_path}")
        raise FileNotFoundError(f"Configuration file not found: {config_path}")
    with open(config_path, "r", encoding="utf-8") as f:
        try:
            config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"'{config_path}' is not valid YAML: {e}") from e
    if not isinstance(config, dict):
        raise ConfigError(f"'{config_path}' must contain a mapping at the top level")

    if _root_dir is None:
        _root_dir = config_path.parent

    _resolve_relative_paths(config, config_path.parent, _root_dir)

    combined: dict = {}
    extends_list = config.get("extends", [])
    if isinstance(extends_list, str):
        extends_list = [extends_list]

    for ext in extends_list:
        ext_path = Path(ext)
        if not ext_path.is_absolute():
            ext_path = config_path.parent / ext_path
        extended_cfg = load_config(ext_path.resolve(), _root_dir=_root_dir)
        combined = _merge_dicts(combined, extended_cfg)

    config.pop("extends", None)
    combined = _merge_dicts(combined, config)
    logger.info("Configuration loaded successfully.")
    return combined


@dataclass(frozen=True)
class CorpusSettings:
    n_speakers: int = 10
    clips_per_speaker: int = 30
    test_clips_per_speaker: Optional[int] = 10


@dataclass(frozen=True)
class FineTuneSettings:
    """Start training from ``paths.base_checkpoint`` instead of random weights.

    ``keep_classes`` lists, for corpus speakers 0, 1, ..., the base-model class
    each one corresponds to; the other output neurons are dropped.
    """

    keep_classes: Optional[Tuple[int, ...]] = None
    lr_scale: float = 0.1


def _section(cls, data, name: str, exclude: Sequence[str] = ()) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    allowed = {f.name for f in fields(cls)} - set(exclude)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    return dict(data)


def resolve_seed(cli_seed: Optional[int], file_seed: Optional[int], environ=None) -> int:
    """Command line beats the environment, which beats the configuration file."""
    environ = os.environ if environ is None else environ
    if cli_seed is not None:
        return int(cli_seed)
    if environ.get(SEED_ENV_VAR, "") != "":
        try:
            return int(environ[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{environ[SEED_ENV_VAR]}'") from None
    if file_seed is not None:
        if isinstance(file_seed, bool) or not isinstance(file_seed, int):
            raise ConfigError(f"seed must be an integer, got {file_seed!r}")
        return file_seed
    raise ConfigError(f"a seed is mandatory: pass --seed, set {SEED_ENV_VAR} or add 'seed' to the configuration")


@dataclass
class ExperimentConfig:
    seed: int
    corpus_dir: Path = Path("corpus")
    output_dir: Path = Path("runs/foolhd")
    checkpoint: Path = Path("runs/classifier.npz")
    base_checkpoint: Optional[Path] = None
    base_dir: Path = Path(".")
    workers: int = 1
    limit: Optional[int] = None
    record_wall_clock: bool = False
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    attack: attacks.AttackConfig = field(default_factory=attacks.AttackConfig)
    frontend: dsp.MfccConfig = dsp.CLASSIFIER_MFCC
    training: nets.TrainingConfig = field(default_factory=nets.TrainingConfig)
    train_if_missing: bool = True
    fine_tune: FineTuneSettings = field(default_factory=FineTuneSettings)

    @classmethod
    def from_mapping(cls, data: dict, base_dir: Path = Path("."), cli_seed: Optional[int] = None,
                     environ=None) -> "ExperimentConfig":
        """Validate a loaded configuration mapping; nothing is computed before this succeeds."""
        unknown = set(data) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}; this release reads version {SCHEMA_VERSION}")

        paths = data.get("paths") or {}
        if not isinstance(paths, dict) or set(paths) - set(PATH_KEYS):
            raise ConfigError(f"'paths' accepts only {list(PATH_KEYS)}")

        corpus_section = _section(CorpusSettings, data.get("corpus"), "corpus")
        attack_section = _section(attacks.AttackConfig, data.get("attack"), "attack", exclude=("seed",))
        frontend_section = _section(dsp.MfccConfig, data.get("frontend"), "frontend")
        training_data = dict(data.get("training") or {})
        train_if_missing = training_data.pop("train_if_missing", True)
        training_section = _section(nets.TrainingConfig, training_data, "training")
        if "dense_dims" in training_section:
            training_section["dense_dims"] = tuple(training_section["dense_dims"])
        fine_tune_section = _section(FineTuneSettings, data.get("fine_tune"), "fine_tune")
        if fine_tune_section.get("keep_classes") is not None:
            fine_tune_section["keep_classes"] = tuple(int(k) for k in fine_tune_section["keep_classes"])

        seed = resolve_seed(cli_seed, data.get("seed"), environ)
        try:
            method = attack_section.pop("method", "foolhd")
            attack = attacks.AttackConfig.for_method(method, seed=seed, **attack_section)
            frontend = dsp.with_overrides(dsp.CLASSIFIER_MFCC, **frontend_section)
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from e

        defaults = cls(seed=seed)
        cfg = cls(
            seed=seed,
            corpus_dir=Path(paths.get("corpus_dir", defaults.corpus_dir)),
            output_dir=Path(paths.get("output_dir", defaults.output_dir)),
            checkpoint=Path(paths.get("checkpoint", defaults.checkpoint)),
            base_checkpoint=Path(paths["base_checkpoint"]) if paths.get("base_checkpoint") else None,
            base_dir=Path(base_dir),
            workers=data.get("workers", 1),
            limit=data.get("limit"),
            record_wall_clock=bool(data.get("record_wall_clock", False)),
            corpus=CorpusSettings(**corpus_section),
            attack=attack,
            frontend=frontend,
            training=nets.TrainingConfig(**training_section),
            train_if_missing=bool(train_if_missing),
            fine_tune=FineTuneSettings(**fine_tune_section),
        )
        return cfg.validate()

    def validate(self) -> "ExperimentConfig":
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"workers must be a positive integer, got {self.workers!r}")
        if self.limit is not None and (not isinstance(self.limit, int) or self.limit < 1):
            raise ConfigError(f"limit must be a positive integer or null, got {self.limit!r}")
        if self.training.epochs < 1 or self.training.batch_size < 2:
            raise ConfigError("training needs epochs >= 1 and batch_size >= 2")
        if self.fine_tune.lr_scale <= 0:
            raise ConfigError(f"fine_tune.lr_scale must be positive, got {self.fine_tune.lr_scale}")
        if self.fine_tune.keep_classes is not None and self.base_checkpoint is None:
            raise ConfigError("fine_tune.keep_classes needs paths.base_checkpoint")
        return self

    def resolve(self, path: Path) -> Path:
        return path if path.is_absolute() else self.base_dir / path

    @property
    def manifest_path(self) -> Path:
        return self.resolve(self.corpus_dir) / corpus.MANIFEST_NAME

    @property
    def checkpoint_path(self) -> Path:
        return self.resolve(self.checkpoint)

    @property
    def base_checkpoint_path(self) -> Optional[Path]:
        return None if self.base_checkpoint is None else self.resolve(self.base_checkpoint)

    @property
    def run_dir(self) -> Path:
        return self.resolve(self.output_dir)

    def check_paths(self, need_checkpoint: bool = False) -> None:
        if not self.manifest_path.is_file():
            raise FileNotFoundError(f"Corpus manifest not found: {self.manifest_path}")
        if need_checkpoint and not self.train_if_missing and not self.checkpoint_path.is_file():
            raise FileNotFoundError(
                f"Checkpoint not found: {self.checkpoint_path} (set training.train_if_missing to train one)"
            )
        will_train = not need_checkpoint or not self.checkpoint_path.is_file()
        base = self.base_checkpoint_path
        if will_train and base is not None and not base.is_file():
            raise FileNotFoundError(f"Base checkpoint not found: {base}")

    def echo(self) -> Dict[str, object]:
        """Configuration as written into run logs and reports."""
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "limit": self.limit,
            "paths": {
                key: None if getattr(self, key) is None else Path(getattr(self, key)).as_posix() for key in PATH_KEYS
            },
            "attack": {**asdict(self.attack), "iterations": self.attack.max_iterations},
            "frontend": asdict(self.frontend),
            "training": {**asdict(self.training), "dense_dims": list(self.training.dense_dims)},
            "fine_tune": {
                "keep_classes": None if self.fine_tune.keep_classes is None else list(self.fine_tune.keep_classes),
                "lr_scale": self.fine_tune.lr_scale,
            },
        }


# -- stages --------------------------------------------------------------------


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    """Tag any failure inside the block with the stage it happened in."""
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logger.error(f"Stage '{name}' failed: {e}")
        raise StageError(name, str(e)) from e


def _training_set(manifest: corpus.CorpusManifest, frontend: dsp.MfccConfig,
                  split: str) -> List[Tuple[np.ndarray, int]]:
    return [
        (dsp.mfcc(clip, frontend).values, entry.speaker)
        for entry, clip in corpus.labelled_clips(manifest, manifest.split(split))
    ]


def _initial_model(cfg: ExperimentConfig, num_classes: int) -> Tuple[Optional[nets.XVectorModel], nets.TrainingConfig]:
    """Base model to fine-tune, restricted to the corpus speakers, and the reduced-rate hyperparameters."""
    if cfg.base_checkpoint_path is None:
        return None, cfg.training
    base, _ = nets.load_checkpoint(cfg.base_checkpoint_path)
    keep = cfg.fine_tune.keep_classes
    if keep is not None:
        if len(keep) != num_classes:
            raise ConfigError(f"fine_tune.keep_classes names {len(keep)} classes for {num_classes} corpus speakers")
        base = nets.restrict_output_classes(base, keep)
    elif base.num_classes != num_classes:
        raise ConfigError(
            f"base checkpoint scores {base.num_classes} classes, corpus has {num_classes}; set fine_tune.keep_classes"
        )
    lr = cfg.training.lr * cfg.fine_tune.lr_scale
    logger.info(f"Fine-tuning '{cfg.base_checkpoint_path}' on {num_classes} speakers at lr {lr:.2e}.")
    return base, replace(cfg.training, lr=lr)


def train_stage(cfg: ExperimentConfig, manifest: Optional[corpus.CorpusManifest] = None) -> nets.SpeakerIdentifier:
    """Train the classifier on the train split and write its checkpoint and training curve."""
    logger.info("--- Training Classifier ---")
    with stage("corpus"):
        manifest = manifest or corpus.load_manifest(cfg.manifest_path)
        train_set = _training_set(manifest, cfg.frontend, "train")
        test_set = _training_set(manifest, cfg.frontend, "test")
    with stage("train"):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7121]))
        initial, hyperparams = _initial_model(cfg, len(manifest.speakers))
        model, record = nets.train_classifier(
            train_set, hyperparams, rng, num_classes=len(manifest.speakers), initial_model=initial
        )
        test_accuracy = nets.evaluate_accuracy(model, test_set)
        logger.info(f"Clean test accuracy: {test_accuracy:.3f} over {len(test_set)} clips.")
    with stage("write"):
        extra = {
            "frontend": asdict(cfg.frontend),
            "corpus_hash": corpus.corpus_hash(manifest),
            "seed": cfg.seed,
            "train_accuracy": record.final_accuracy,
            "test_accuracy": test_accuracy,
        }
        nets.save_checkpoint(model, cfg.checkpoint_path, extra)
        curve_path = Path(f"{cfg.checkpoint_path}.curve.json")
        with open(curve_path, "w", encoding="utf-8") as f:
            json.dump(record.to_dict(), f, indent=4)
            f.write("\n")
        logger.info(f"Training curve written to '{curve_path}'.")
    logger.info("--- Classifier Training Complete ---")
    return nets.SpeakerIdentifier(model, cfg.frontend)


def load_identifier(checkpoint: Path, frontend: dsp.MfccConfig = dsp.CLASSIFIER_MFCC) -> nets.SpeakerIdentifier:
    """Classifier from a checkpoint, with the front-end recorded in it when present."""
    model, extra = nets.load_checkpoint(checkpoint)
    if "frontend" in extra:
        frontend = dsp.MfccConfig(**extra["frontend"]).validate()
    if frontend.feature_dim != model.feature_dim:
        raise ConfigError(f"front-end yields {frontend.feature_dim} features, classifier expects {model.feature_dim}")
    return nets.SpeakerIdentifier(model, frontend)


def prepare_identifier(cfg: ExperimentConfig, manifest: Optional[corpus.CorpusManifest] = None) -> nets.SpeakerIdentifier:
    if cfg.checkpoint_path.is_file():
        with stage("train"):
            return load_identifier(cfg.checkpoint_path, cfg.frontend)
    if not cfg.train_if_missing:
        raise StageError("train", f"checkpoint {cfg.checkpoint_path} is missing and train_if_missing is off")
    return train_stage(cfg, manifest)


@dataclass(frozen=True)
class AttackJob:
    index: int
    entry: corpus.ManifestEntry
    root: Path
    adversarial_dir: Path


def attack_clip(job: AttackJob, identifier: nets.SpeakerIdentifier, attack_cfg: attacks.AttackConfig,
                seed: int) -> metrics.ClipRecord:
    """Attack one clip, write the adversarial WAV and score it as stored on disk."""
    clip = corpus.prepare_clip(wavio.read_wav(job.root / job.entry.path))
    result = attacks.run_attack(clip, job.entry.speaker, identifier, attack_cfg, attacks.clip_rng(seed, job.index))
    wavio.write_wav(job.adversarial_dir / f"{job.entry.clip_id}.wav", result.adversarial)
    stored = dsp.AudioClip(wavio.quantize_pcm16(result.adversarial.samples, warn=False), clip.sample_rate)
    return metrics.evaluate_clip(
        job.entry.clip_id,
        clip,
        stored,
        label=job.entry.speaker,
        clean_prediction=result.clean_prediction,
        prediction=result.prediction,
        target=result.target,
        perceptual_loss=result.perceptual_loss,
        adversarial_loss=result.adversarial_loss,
        iterations=result.iterations,
    )


def attack_stage(cfg: ExperimentConfig, identifier: nets.SpeakerIdentifier,
                 manifest: corpus.CorpusManifest) -> List[metrics.ClipRecord]:
    """Attack every test clip; results come back in manifest order whatever the worker count."""
    logger.info("--- Attacking Clips ---")
    entries = manifest.split("test")
    if cfg.limit is not None:
        entries = entries[:cfg.limit]
    adversarial_dir = cfg.run_dir / ADVERSARIAL_DIR
    adversarial_dir.mkdir(parents=True, exist_ok=True)
    jobs = [AttackJob(i, entry, manifest.root, adversarial_dir) for i, entry in enumerate(entries)]
    logger.info(f"{len(jobs)} clip(s), method {cfg.attack.method}, M={cfg.attack.max_iterations}, workers={cfg.workers}.")

    records: List[metrics.ClipRecord] = []
    if cfg.workers == 1:
        for job in jobs:
            with _clip_stage(job):
                records.append(attack_clip(job, identifier, cfg.attack, cfg.seed))
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(attack_clip, job, identifier, cfg.attack, cfg.seed) for job in jobs]
            for job, future in zip(jobs, futures):
                with _clip_stage(job):
                    records.append(future.result())
    logger.info("--- Attacks Complete ---")
    return records


@contextlib.contextmanager
def _clip_stage(job: AttackJob) -> Iterator[None]:
    try:
        yield
    except Exception as e:
        logger.error(f"Attack on '{job.entry.clip_id}' failed: {e}")
        raise StageError("attack", str(e), clip_id=job.entry.clip_id) from e


def write_results_csv(records: Sequence[metrics.ClipRecord], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=metrics.CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for record in records:
            writer.writerow(record.to_row())
    logger.info(f"Per-clip results written to '{path}'.")


def read_results_csv(path: Path) -> List[metrics.ClipRecord]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Results file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        return [metrics.ClipRecord.from_row(row) for row in csv.DictReader(f)]


def write_summary(summary: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=4, ensure_ascii=False)
        f.write("\n")
    logger.info(f"Summary written to '{path}'.")


@contextlib.contextmanager
def _run_log(path: Path) -> Iterator[None]:
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATEFMT))
    handler.setLevel(logging.INFO)
    root = logging.getLogger()
    root.addHandler(handler)
    try:
        yield
    finally:
        root.removeHandler(handler)
        handler.close()


def run_experiment(cfg: ExperimentConfig) -> metrics.EvaluationReport:
    """Train if needed, attack the test split, and write WAVs, CSV, JSON and the run log."""
    with stage("config"):
        cfg.check_paths(need_checkpoint=True)
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    marker = run_dir / INCOMPLETE_MARKER
    marker.write_text("run in progress or failed; outputs in this directory are partial\n", encoding="utf-8")
    started = time.perf_counter()

    with _run_log(run_dir / RUN_LOG_NAME):
        logger.info(f"Configuration: {json.dumps(cfg.echo(), sort_keys=True)}")
        logger.info("--- Loading Corpus ---")
        with stage("corpus"):
            manifest = corpus.load_manifest(cfg.manifest_path)
            digest = corpus.corpus_hash(manifest)
        logger.info(f"Corpus hash: {digest}")

        identifier = prepare_identifier(cfg, manifest)
        records = attack_stage(cfg, identifier, manifest)

        logger.info("--- Writing Results ---")
        wall_clock = time.perf_counter() - started
        with stage("metrics"):
            report = metrics.EvaluationReport(
                records,
                config=cfg.echo(),
                corpus_hash=digest,
                wall_clock_seconds=wall_clock if cfg.record_wall_clock else None,
            )
            summary = report.to_dict()
        with stage("write"):
            write_results_csv(records, run_dir / RESULTS_NAME)
            write_summary(summary, run_dir / SUMMARY_NAME)
        logger.info(
            f"S={summary['S']:.3f} Acc_clean={summary['Acc_clean']:.3f} "
            f"Acc_adv={summary['Acc_adv']:.3f} wall-clock {wall_clock:.1f}s"
        )
        marker.unlink()
        logger.info(f"✅ Run complete: {run_dir.resolve()}")
    return report


def evaluate_directory(cfg: ExperimentConfig, adversarial_dir: Path,
                       identifier: Optional[nets.SpeakerIdentifier] = None) -> metrics.EvaluationReport:
    """Score stored adversarial WAVs against the corpus originals with the full classifier pipeline.

    Targets are taken from a ``results.csv`` next to ``adversarial_dir`` when one exists.
    """
    logger.info("--- Evaluating Stored Clips ---")
    adversarial_dir = Path(adversarial_dir)
    if not adversarial_dir.is_dir():
        raise FileNotFoundError(f"Adversarial directory not found: {adversarial_dir}")
    with stage("corpus"):
        manifest = corpus.load_manifest(cfg.manifest_path)
    identifier = identifier or load_identifier(cfg.checkpoint_path, cfg.frontend)
    previous = {}
    results_path = adversarial_dir.parent / RESULTS_NAME
    if results_path.is_file():
        previous = {r.clip_id: r for r in read_results_csv(results_path)}

    records = []
    with stage("metrics"):
        for entry in manifest.split("test"):
            adv_path = adversarial_dir / f"{entry.clip_id}.wav"
            if not adv_path.is_file():
                continue
            original = corpus.load_clip(manifest, entry)
            adversarial = wavio.read_wav(adv_path)
            earlier = previous.get(entry.clip_id)
            target = earlier.target if earlier else None
            logits = identifier.predict_logits(adversarial.samples)
            prediction = int(np.argmax(logits))
            margin = (
                losses.adversarial_loss_targeted(logits, target)
                if target is not None
                else losses.adversarial_loss_untargeted(logits, entry.speaker)
            ).item()
            features = dsp.mfcc(original, dsp.PERCEPTUAL_MFCC).values
            features_adv = dsp.mfcc(adversarial, dsp.PERCEPTUAL_MFCC).values
            records.append(
                metrics.evaluate_clip(
                    entry.clip_id,
                    original,
                    adversarial,
                    label=entry.speaker,
                    clean_prediction=identifier.predict(original.samples),
                    prediction=prediction,
                    target=target,
                    perceptual_loss=losses.perceptual_loss(features, features_adv).item(),
                    adversarial_loss=margin,
                    iterations=earlier.iterations if earlier else 0,
                )
            )
    if not records:
        raise StageError("metrics", f"no adversarial clip of the test split found in '{adversarial_dir}'")
    logger.info(f"Evaluated {len(records)} stored clip(s).")
    return metrics.EvaluationReport(records, config=cfg.echo())


def report_from_csv(csv_path: Path) -> Dict[str, object]:
    """Aggregate a per-clip results file into the summary layout."""
    with stage("metrics"):
        records = read_results_csv(csv_path)
        return metrics.EvaluationReport(records).to_dict()
