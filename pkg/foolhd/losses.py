"""Objectives of the attack: perceptual, adversarial and their sum."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from . import tensorcore as tc
from .errors import ContractViolation

logger = logging.getLogger(__name__)

COSINE_EPS = 1e-12


@dataclass
class LossBreakdown:
    perceptual: float
    adversarial: float
    total: float
    cosine_similarities: np.ndarray


def cosine_similarity(f, f_adv, eps_num: float = COSINE_EPS) -> tc.Tensor:
    """Cosine similarity along the last axis, clamped to [-1, 1].

    Norms are floored at ``eps_num`` so an all-zero vector yields ~0 instead of NaN.
    """
    f, f_adv = tc.as_tensor(f), tc.as_tensor(f_adv)
    if f.shape != f_adv.shape:
        raise ContractViolation(f"cosine_similarity: shapes {f.shape} and {f_adv.shape} differ")
    if f.ndim == 0 or f.shape[-1] < 1:
        raise ContractViolation("cosine_similarity needs at least one feature")
    dot = tc.reduce_sum(f * f_adv, axis=-1)
    norm = tc.sqrt(tc.clamp_min(tc.reduce_sum(tc.square(f), axis=-1), eps_num * eps_num))
    norm_adv = tc.sqrt(tc.clamp_min(tc.reduce_sum(tc.square(f_adv), axis=-1), eps_num * eps_num))
    return tc.clip(dot / (norm * norm_adv), -1.0, 1.0)


def perceptual_loss(features, features_adv) -> tc.Tensor:
    """Sum over frames of ``1 - cos(f_t, f_adv_t)``; lies in [0, 2T]."""
    features, features_adv = tc.as_tensor(features), tc.as_tensor(features_adv)
    if features.ndim != 2 or features.shape != features_adv.shape:
        raise ContractViolation(
            f"perceptual_loss needs two T x F matrices of equal shape, got {features.shape} and {features_adv.shape}"
        )
    return tc.reduce_sum(1.0 - cosine_similarity(features, features_adv))


def _check_class(logits: tc.Tensor, label: int, name: str) -> int:
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ContractViolation(f"adversarial losses need a logit vector with N >= 2, got shape {logits.shape}")
    if not 0 <= label < logits.shape[0]:
        raise ContractViolation(f"{name} {label} outside [0, {logits.shape[0]})")
    return int(label)


def _others(num_classes: int, label: int) -> np.ndarray:
    return np.array([i for i in range(num_classes) if i != label])


def adversarial_loss_untargeted(logits, label: int) -> tc.Tensor:
    """``z_y - max_{i != y} z_i``; negative exactly when the prediction differs from ``y``."""
    logits = tc.as_tensor(logits)
    label = _check_class(logits, label, "label")
    runner_up, _ = tc.max_with_index(logits[_others(logits.shape[0], label)])
    return logits[label] - runner_up


def adversarial_loss_targeted(logits, target: int) -> tc.Tensor:
    """``max_{i != t} z_i - z_t``; negative exactly when the prediction is ``t``."""
    logits = tc.as_tensor(logits)
    target = _check_class(logits, target, "target")
    runner_up, _ = tc.max_with_index(logits[_others(logits.shape[0], target)])
    return runner_up - logits[target]


def total_loss(perceptual, adversarial, adversarial_weight: float = 1.0) -> tc.Tensor:
    """Plain sum of the two terms; ``adversarial_weight`` other than 1 is an extension."""
    perceptual, adversarial = tc.as_tensor(perceptual), tc.as_tensor(adversarial)
    if not (np.all(np.isfinite(perceptual.values)) and np.all(np.isfinite(adversarial.values))):
        raise ContractViolation("total_loss: loss terms must be finite")
    if adversarial_weight == 1.0:
        return perceptual + adversarial
    return perceptual + adversarial * adversarial_weight


def mse_loss(x, x_adv) -> tc.Tensor:
    x, x_adv = tc.as_tensor(x), tc.as_tensor(x_adv)
    if x.shape != x_adv.shape:
        raise ContractViolation(f"mse_loss: lengths differ ({x.shape} vs {x_adv.shape})")
    return tc.reduce_mean(tc.square(x_adv - x))


def cross_entropy(logits, labels: Union[int, Sequence[int]]) -> tc.Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    logits = tc.as_tensor(logits)
    log_probs = tc.log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        return -log_probs[int(labels)]
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (logits.shape[0],):
        raise ContractViolation(f"cross_entropy: {labels.shape[0]} labels for {logits.shape[0]} rows")
    return -tc.reduce_mean(log_probs[np.arange(labels.shape[0]), labels])


def combined_loss(
    features,
    features_adv,
    logits,
    label: int,
    *,
    targeted: bool = False,
    perceptual_term=None,
    adversarial_weight: float = 1.0,
) -> Tuple[tc.Tensor, LossBreakdown]:
    """Perceptual plus adversarial objective and its numeric breakdown.

    ``label`` is the true speaker, or the target speaker when ``targeted``.
    ``perceptual_term`` replaces the MFCC perceptual loss (used for the mse variant).
    """
    with tc.no_grad():
        cosines = cosine_similarity(features, features_adv).values
    if perceptual_term is None:
        perceptual_term = perceptual_loss(features, features_adv)
    if targeted:
        adversarial = adversarial_loss_targeted(logits, label)
    else:
        adversarial = adversarial_loss_untargeted(logits, label)
    total = total_loss(perceptual_term, adversarial, adversarial_weight)
    breakdown = LossBreakdown(
        perceptual=perceptual_term.item(),
        adversarial=adversarial.item(),
        total=total.item(),
        cosine_similarities=np.atleast_1d(cosines),
    )
    return total, breakdown
