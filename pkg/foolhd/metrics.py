"""Effectiveness rates and imperceptibility proxies for adversarial clips."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.fft
import scipy.signal

from . import dsp
from . import losses
from .errors import ContractViolation

logger = logging.getLogger(__name__)

SEGSNR_FLOOR_DB = -10.0
SEGSNR_CEILING_DB = 35.0
POWER_FLOOR = 1e-12
SEGMENT_LEN = 256
SEGMENT_HOP = 128

CSV_COLUMNS = (
    "clip_id",
    "speaker",
    "prediction_clean",
    "prediction_adv",
    "target",
    "success",
    "L_P",
    "L_A",
    "iterations",
    "segSNR_dB",
    "LSD_dB",
    "mfcc_cos_dist",
)
METRIC_COLUMNS = ("L_P", "L_A", "segSNR_dB", "LSD_dB", "mfcc_cos_dist")


# -- rates --------------------------------------------------------------------


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ContractViolation(f"{predictions.size} predictions for {labels.size} labels")
    if predictions.size == 0:
        raise ContractViolation("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


def success_rate_untargeted(results: Sequence, only_correct: bool = False) -> float:
    """Share of results whose prediction differs from the true label.

    With ``only_correct`` the rate is restricted to clips the classifier got
    right before the attack.
    """
    if only_correct:
        results = [r for r in results if r.clean_prediction == r.label]
    if not results:
        raise ContractViolation("success rate of an empty set is undefined")
    return sum(0 <= r.prediction != r.label for r in results) / len(results)


def success_rate_targeted(results: Sequence) -> float:
    if not results:
        raise ContractViolation("success rate of an empty set is undefined")
    missing = [i for i, r in enumerate(results) if r.target is None]
    if missing:
        raise ContractViolation(f"results {missing[:5]} carry no target")
    return sum(r.prediction == r.target for r in results) / len(results)


def confusion_matrix(labels: Sequence[int], predictions: Sequence[int], num_classes: Optional[int] = None) -> np.ndarray:
    """Counts with true labels on rows and predictions on columns."""
    labels, predictions = np.asarray(labels, dtype=int), np.asarray(predictions, dtype=int)
    if labels.shape != predictions.shape:
        raise ContractViolation(f"{predictions.size} predictions for {labels.size} labels")
    if num_classes is None:
        num_classes = int(max(labels.max(initial=-1), predictions.max(initial=-1))) + 1
    valid = predictions >= 0
    if not valid.all():
        logger.warning(f"Ignoring {int(np.sum(~valid))} unclassifiable clip(s) in the confusion matrix.")
    matrix = np.zeros((num_classes, num_classes), dtype=int)
    np.add.at(matrix, (labels[valid], predictions[valid]), 1)
    return matrix


# -- imperceptibility proxies -------------------------------------------------


def _pair(x, x_adv):
    x = x.samples if isinstance(x, dsp.AudioClip) else np.asarray(x, dtype=np.float64)
    x_adv = x_adv.samples if isinstance(x_adv, dsp.AudioClip) else np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise ContractViolation(f"clips differ in length: {x.shape[0]} vs {x_adv.shape[0]}")
    return x, x_adv


def segmental_snr(x, x_adv, frame_len: int = SEGMENT_LEN, hop: int = SEGMENT_HOP) -> float:
    """Mean per-frame SNR in dB, each frame clamped to [-10, 35] dB."""
    x, x_adv = _pair(x, x_adv)
    clean = dsp.frame_signal(x, frame_len, hop)
    noise = clean - dsp.frame_signal(x_adv, frame_len, hop)
    signal_power = np.sum(clean * clean, axis=1)
    noise_power = np.maximum(np.sum(noise * noise, axis=1), POWER_FLOOR)
    with np.errstate(divide="ignore"):
        ratios = 10.0 * np.log10(signal_power / noise_power)
    return float(np.mean(np.clip(ratios, SEGSNR_FLOOR_DB, SEGSNR_CEILING_DB)))


def _log_power(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    frames = dsp.frame_signal(samples, n_fft, hop) * scipy.signal.get_window("hann", n_fft)
    power = np.abs(scipy.fft.rfft(frames, axis=1)) ** 2
    return np.log10(np.maximum(power, POWER_FLOOR))


def log_spectral_distance(x, x_adv, n_fft: int = SEGMENT_LEN, hop: int = SEGMENT_HOP) -> float:
    """RMS over frames and bins of the dB difference between power spectra."""
    x, x_adv = _pair(x, x_adv)
    diff = 10.0 * (_log_power(x, n_fft, hop) - _log_power(x_adv, n_fft, hop))
    return float(np.sqrt(np.mean(diff * diff)))


def mfcc_cosine_distance(x, x_adv, cfg: dsp.MfccConfig = dsp.PERCEPTUAL_MFCC) -> float:
    """Perceptual loss between the two clips divided by the frame count."""
    x, x_adv = _pair(x, x_adv)
    features = dsp.mfcc(dsp.AudioClip(x, cfg.sample_rate), cfg).values
    features_adv = dsp.mfcc(dsp.AudioClip(x_adv, cfg.sample_rate), cfg).values
    return losses.perceptual_loss(features, features_adv).item() / features.shape[0]


# -- per-clip records and aggregates ------------------------------------------


@dataclass
class ClipRecord:
    clip_id: str
    label: int
    clean_prediction: int
    prediction: int
    target: Optional[int]
    success: bool
    perceptual_loss: float
    adversarial_loss: float
    iterations: int
    seg_snr_db: float
    lsd_db: float
    mfcc_cos_dist: float

    def to_row(self) -> Dict[str, str]:
        return {
            "clip_id": self.clip_id,
            "speaker": str(self.label),
            "prediction_clean": str(self.clean_prediction),
            "prediction_adv": str(self.prediction),
            "target": "" if self.target is None else str(self.target),
            "success": str(int(self.success)),
            "L_P": repr(float(self.perceptual_loss)),
            "L_A": repr(float(self.adversarial_loss)),
            "iterations": str(self.iterations),
            "segSNR_dB": repr(float(self.seg_snr_db)),
            "LSD_dB": repr(float(self.lsd_db)),
            "mfcc_cos_dist": repr(float(self.mfcc_cos_dist)),
        }

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "ClipRecord":
        missing = [c for c in CSV_COLUMNS if c not in row]
        if missing:
            raise ContractViolation(f"results row lacks columns {missing}")
        return cls(
            clip_id=row["clip_id"],
            label=int(row["speaker"]),
            clean_prediction=int(row["prediction_clean"]),
            prediction=int(row["prediction_adv"]),
            target=int(row["target"]) if row["target"] != "" else None,
            success=row["success"] in ("1", "True", "true"),
            perceptual_loss=float(row["L_P"]),
            adversarial_loss=float(row["L_A"]),
            iterations=int(row["iterations"]),
            seg_snr_db=float(row["segSNR_dB"]),
            lsd_db=float(row["LSD_dB"]),
            mfcc_cos_dist=float(row["mfcc_cos_dist"]),
        )

    def metric(self, column: str) -> float:
        return {
            "L_P": self.perceptual_loss,
            "L_A": self.adversarial_loss,
            "segSNR_dB": self.seg_snr_db,
            "LSD_dB": self.lsd_db,
            "mfcc_cos_dist": self.mfcc_cos_dist,
        }[column]


def evaluate_clip(clip_id: str, original, adversarial, label: int, clean_prediction: int, prediction: int,
                  target: Optional[int] = None, perceptual_loss: float = math.nan,
                  adversarial_loss: float = math.nan, iterations: int = 0) -> ClipRecord:
    """Record for one attacked clip, computing the three imperceptibility proxies."""
    success = prediction == target if target is not None else prediction >= 0 and prediction != label
    return ClipRecord(
        clip_id=clip_id,
        label=label,
        clean_prediction=clean_prediction,
        prediction=prediction,
        target=target,
        success=success,
        perceptual_loss=perceptual_loss,
        adversarial_loss=adversarial_loss,
        iterations=iterations,
        seg_snr_db=segmental_snr(original, adversarial),
        lsd_db=log_spectral_distance(original, adversarial),
        mfcc_cos_dist=mfcc_cosine_distance(original, adversarial),
    )


def _stats(values: Sequence[float]) -> Dict[str, Optional[float]]:
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return {"mean": None, "std": None, "median": None}
    return {"mean": float(np.mean(values)), "std": float(np.std(values)), "median": float(np.median(values))}


def summarize_records(records: Sequence[ClipRecord]) -> Dict[str, object]:
    """Rates and per-metric mean/std/median; recomputable from the records alone."""
    if not records:
        raise ContractViolation("cannot summarize an empty set of results")
    labels = [r.label for r in records]
    targeted = all(r.target is not None for r in records)
    correct = [r for r in records if r.clean_prediction == r.label]
    summary: Dict[str, object] = {
        "num_clips": len(records),
        "Acc_clean": accuracy([r.clean_prediction for r in records], labels),
        "Acc_adv": accuracy([r.prediction for r in records], labels),
        "S": success_rate_untargeted(records),
        "S_correct": success_rate_untargeted(records, only_correct=True) if correct else None,
        "S_t": success_rate_targeted(records) if targeted else None,
        "metrics": {column: _stats([r.metric(column) for r in records]) for column in METRIC_COLUMNS},
    }
    return summary


@dataclass
class EvaluationReport:
    records: List[ClipRecord]
    config: Dict[str, object] = field(default_factory=dict)
    corpus_hash: Optional[str] = None
    wall_clock_seconds: Optional[float] = None

    @property
    def aggregates(self) -> Dict[str, object]:
        return summarize_records(self.records)

    def confusion(self, adversarial: bool = True, num_classes: Optional[int] = None) -> np.ndarray:
        predictions = [r.prediction if adversarial else r.clean_prediction for r in self.records]
        return confusion_matrix([r.label for r in self.records], predictions, num_classes)

    def num_classes(self) -> int:
        seen = [max(r.label, r.clean_prediction, r.prediction, -1 if r.target is None else r.target) for r in self.records]
        return max(seen, default=-1) + 1

    def to_dict(self) -> Dict[str, object]:
        num_classes = self.num_classes()
        report: Dict[str, object] = {
            "config": self.config,
            "corpus_hash": self.corpus_hash,
            **self.aggregates,
            "confusion_clean": self.confusion(adversarial=False, num_classes=num_classes).tolist(),
            "confusion_adv": self.confusion(adversarial=True, num_classes=num_classes).tolist(),
            "external_metrics": {"pesq": None, "jnd": None},
            # None unless the run asked for record_wall_clock
            "wall_clock_seconds": self.wall_clock_seconds,
        }
        return report
