"""Adversarial attacks on the speaker classifier.

FoolHD trains a fresh gated convolutional autoencoder per clip. The network
rewrites the clip's MDCT spectrogram so that the classifier changes its
decision while the MFCCs of the result stay close to the original. FGSM and
BIM perturb the waveform directly and serve as baselines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Union

import numpy as np

from . import dsp
from . import losses
from . import nets
from . import tensorcore as tc
from . import wavio
from .errors import ContractViolation

logger = logging.getLogger(__name__)

UNTARGETED = "untargeted"
TARGETED = "targeted"
METHODS = ("foolhd", "foolhd-t", "foolhd-mse", "foolhd-noskip", "fgsm", "bim")
DEFAULT_ITERATIONS = {UNTARGETED: 500, TARGETED: 1000}

_METHOD_OVERRIDES = {
    "foolhd": {},
    "foolhd-t": {"mode": TARGETED},
    "foolhd-mse": {"loss_variant": "mse"},
    "foolhd-noskip": {"skip_enabled": False},
    "fgsm": {},
    "bim": {},
}


@dataclass(frozen=True)
class AttackConfig:
    method: str = "foolhd"
    mode: str = UNTARGETED
    loss_variant: str = "perceptual"
    skip_enabled: bool = True
    iterations: Optional[int] = None
    lr: float = 1e-3
    weight_decay: float = 1e-5
    dropout: float = 1e-3
    seed: int = 0
    epsilon: float = 0.004
    bim_iterations: int = 10
    bim_step: Optional[float] = None
    gca_channels: int = 64
    mdct_frame_len: int = dsp.MDCT_FRAME_LEN
    adversarial_weight: float = 1.0
    target: Optional[int] = None
    log_every: int = 50

    @classmethod
    def for_method(cls, name: str, **overrides) -> "AttackConfig":
        """Preset for one of :data:`METHODS`; keyword overrides win over the preset."""
        if name not in _METHOD_OVERRIDES:
            raise ContractViolation(f"unknown attack method '{name}'; choose from {', '.join(METHODS)}")
        return cls(method=name, **{**_METHOD_OVERRIDES[name], **overrides}).validate()

    @property
    def targeted(self) -> bool:
        return self.mode == TARGETED

    @property
    def is_baseline(self) -> bool:
        return self.method in ("fgsm", "bim")

    @property
    def max_iterations(self) -> int:
        return self.iterations if self.iterations is not None else DEFAULT_ITERATIONS[self.mode]

    def validate(self) -> "AttackConfig":
        if self.method not in METHODS:
            raise ContractViolation(f"unknown attack method '{self.method}'")
        if self.mode not in DEFAULT_ITERATIONS:
            raise ContractViolation(f"mode must be '{UNTARGETED}' or '{TARGETED}', got '{self.mode}'")
        if self.loss_variant not in ("perceptual", "mse"):
            raise ContractViolation(f"loss_variant must be 'perceptual' or 'mse', got '{self.loss_variant}'")
        if self.max_iterations < 1:
            raise ContractViolation(f"iterations must be at least 1, got {self.max_iterations}")
        if self.lr <= 0:
            raise ContractViolation(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.is_baseline:
            if self.targeted:
                raise ContractViolation(f"{self.method} only supports untargeted attacks")
            if self.epsilon < 0:
                raise ContractViolation(f"epsilon must be non-negative, got {self.epsilon}")
            if self.bim_iterations < 1:
                raise ContractViolation(f"bim_iterations must be at least 1, got {self.bim_iterations}")
        return self


@dataclass
class IterationRecord:
    iteration: int
    perceptual: float
    adversarial: float
    total: float
    prediction: int
    goal_met: bool


@dataclass
class Candidate:
    iteration: int
    samples: np.ndarray
    perceptual: float
    adversarial: float
    prediction: int


@dataclass
class CandidatePool:
    """Iterates whose evaluation-mode output met the attack goal."""

    entries: List[Candidate] = field(default_factory=list)

    def add(self, candidate: Candidate) -> None:
        self.entries.append(candidate)

    def __len__(self) -> int:
        return len(self.entries)

    def best(self) -> Optional[Candidate]:
        # min() keeps the earliest entry among equal losses
        return min(self.entries, key=lambda c: c.perceptual) if self.entries else None


@dataclass
class AttackResult:
    adversarial: dsp.AudioClip
    label: int
    prediction: int
    clean_prediction: int
    success: bool
    perceptual_loss: float
    adversarial_loss: float
    iterations: int
    method: str = "foolhd"
    target: Optional[int] = None
    best_iteration: Optional[int] = None
    trace: List[IterationRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.target is not None:
            expected = self.prediction == self.target
        else:
            expected = self.prediction >= 0 and self.prediction != self.label
        if self.success != expected:
            raise ContractViolation(
                f"success={self.success} contradicts prediction {self.prediction} "
                f"(label {self.label}, target {self.target})"
            )


def _as_identifier(model: Union[nets.SpeakerIdentifier, nets.XVectorModel]) -> nets.SpeakerIdentifier:
    return model if isinstance(model, nets.SpeakerIdentifier) else nets.SpeakerIdentifier(model)


def choose_random_target(label: int, num_classes: int, rng: np.random.Generator) -> int:
    """Uniform draw from every class except ``label``."""
    if num_classes < 2:
        raise ContractViolation(f"a target needs at least 2 classes, got {num_classes}")
    if not 0 <= label < num_classes:
        raise ContractViolation(f"label {label} outside [0, {num_classes})")
    draw = int(rng.integers(0, num_classes - 1))
    return draw + 1 if draw >= label else draw


@dataclass
class _Verdict:
    samples: np.ndarray
    prediction: int
    perceptual: float
    adversarial: float
    goal_met: bool


class _Judge:
    """Scores a candidate waveform the way it will be deployed: PCM16, fresh VAD."""

    def __init__(self, identifier: nets.SpeakerIdentifier, clip: dsp.AudioClip, label: int, target: Optional[int]):
        self.identifier = identifier
        self.label = label
        self.target = target
        self.reference = clip.samples
        self.reference_features = dsp.mfcc(clip, dsp.PERCEPTUAL_MFCC).values

    def goal_met(self, prediction: int) -> bool:
        if prediction < 0:
            return False
        return prediction == self.target if self.target is not None else prediction != self.label

    def __call__(self, samples: np.ndarray) -> _Verdict:
        deployed = wavio.quantize_pcm16(samples, warn=False)
        with tc.no_grad():
            perceptual = losses.perceptual_loss(
                self.reference_features, dsp.mfcc(dsp.AudioClip(deployed), dsp.PERCEPTUAL_MFCC).values
            ).item()
            try:
                logits = self.identifier.predict_logits(deployed)
            except ContractViolation as e:
                logger.warning(f"Candidate waveform cannot be classified: {e}")
                return _Verdict(samples, -1, perceptual, float("nan"), False)
            prediction = int(np.argmax(logits))
            if self.target is not None:
                adversarial = losses.adversarial_loss_targeted(logits, self.target).item()
            else:
                adversarial = losses.adversarial_loss_untargeted(logits, self.label).item()
        return _Verdict(samples, prediction, perceptual, adversarial, self.goal_met(prediction))


def _resolve_target(cfg: AttackConfig, label: int, num_classes: int, rng: np.random.Generator) -> Optional[int]:
    if not cfg.targeted:
        return None
    target = cfg.target if cfg.target is not None else choose_random_target(label, num_classes, rng)
    if target == label or not 0 <= target < num_classes:
        raise ContractViolation(f"target {target} must differ from label {label} and lie in [0, {num_classes})")
    return target


def _check_inputs(clip: dsp.AudioClip, label: int, identifier: nets.SpeakerIdentifier) -> None:
    if not 0 <= label < identifier.num_classes:
        raise ContractViolation(f"label {label} outside [0, {identifier.num_classes})")
    if clip.sample_rate != identifier.frontend.sample_rate:
        raise ContractViolation(
            f"clip rate {clip.sample_rate} Hz differs from classifier rate {identifier.frontend.sample_rate} Hz"
        )


def _synthesize(gca: nets.Gca, s_norm: np.ndarray, stats: nets.NormStats, spec: dsp.MdctSpectrogram, training: bool):
    s_dot = nets.denormalize_spectrogram(nets.gca_forward(gca, s_norm, training), stats)
    return dsp.imdct_tensor(s_dot, spec.frame_len, spec.num_samples)


def foolhd_attack(
    x: dsp.AudioClip,
    y: int,
    model: Union[nets.SpeakerIdentifier, nets.XVectorModel],
    cfg: AttackConfig,
    rng: np.random.Generator,
) -> AttackResult:
    """Train a fresh GCA on one clip and return the least perceptible successful output."""
    cfg = cfg.validate()
    identifier = _as_identifier(model)
    _check_inputs(x, y, identifier)
    target = _resolve_target(cfg, y, identifier.num_classes, rng)
    goal_label = target if target is not None else y

    frozen_vad = identifier.vad(x.samples)
    clean_prediction = identifier.predict(wavio.quantize_pcm16(x.samples, warn=False))
    judge = _Judge(identifier, x, y, target)
    reference = tc.Tensor(judge.reference_features)
    x_tensor = tc.Tensor(x.samples)

    spec = dsp.mdct(x, cfg.mdct_frame_len)
    s_norm, stats = nets.normalize_spectrogram(spec)
    gca = nets.Gca.initialize(rng, channels=cfg.gca_channels, dropout_rate=cfg.dropout, skip_enabled=cfg.skip_enabled)
    params = gca.parameters()
    adam = tc.AdamState.create(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    pool = CandidatePool()
    trace: List[IterationRecord] = []
    last: Optional[_Verdict] = None
    for m in range(1, cfg.max_iterations + 1):
        tc.zero_grad(params)
        wave = _synthesize(gca, s_norm, stats, spec, training=True)
        logits = identifier.logits(wave, frozen_vad)
        features = dsp.mfcc_tensor(wave, dsp.PERCEPTUAL_MFCC)
        mse_term = losses.mse_loss(x_tensor, wave) if cfg.loss_variant == "mse" else None
        total, breakdown = losses.combined_loss(
            reference,
            features,
            logits,
            goal_label,
            targeted=target is not None,
            perceptual_term=mse_term,
            adversarial_weight=cfg.adversarial_weight,
        )
        tc.backward(total)
        tc.adam_step(params, adam)

        with tc.no_grad():
            eval_wave = _synthesize(gca, s_norm, stats, spec, training=False).values
        last = judge(eval_wave)
        selection_loss = last.perceptual
        if cfg.loss_variant == "mse":
            selection_loss = float(np.mean((wavio.quantize_pcm16(eval_wave, warn=False) - x.samples) ** 2))
        if last.goal_met:
            pool.add(Candidate(m, eval_wave, selection_loss, last.adversarial, last.prediction))
        trace.append(
            IterationRecord(m, breakdown.perceptual, breakdown.adversarial, breakdown.total, last.prediction, last.goal_met)
        )
        if m % cfg.log_every == 0 or m == 1:
            logger.debug(
                f"Iteration {m}/{cfg.max_iterations}: L_P={breakdown.perceptual:.4f} "
                f"L_A={breakdown.adversarial:.4f} prediction={last.prediction} pool={len(pool)}"
            )

    best = pool.best()
    if best is None:
        chosen, best_iteration = last, None
    else:
        chosen, best_iteration = judge(best.samples), best.iteration
    logger.info(
        f"{cfg.method}: label {y} -> {chosen.prediction}"
        f"{f' (target {target})' if target is not None else ''}, "
        f"{len(pool)} successful iterates, best at {best_iteration}."
    )
    return AttackResult(
        adversarial=dsp.AudioClip(chosen.samples, x.sample_rate),
        label=y,
        prediction=chosen.prediction,
        clean_prediction=clean_prediction,
        success=chosen.goal_met,
        perceptual_loss=chosen.perceptual,
        adversarial_loss=chosen.adversarial,
        iterations=cfg.max_iterations,
        method=cfg.method,
        target=target,
        best_iteration=best_iteration,
        trace=trace,
    )


def _input_gradient(identifier: nets.SpeakerIdentifier, samples: np.ndarray, label: int, vad_mask) -> np.ndarray:
    """Gradient of the cross-entropy of ``label`` with respect to the waveform."""
    wave = tc.Tensor(samples, requires_grad=True)
    loss = losses.cross_entropy(identifier.logits(wave, vad_mask), label)
    tc.backward(loss)
    return wave.grad


def _sign_step(samples: np.ndarray, gradient: np.ndarray, step: float) -> np.ndarray:
    return samples + step * np.sign(gradient)


def _baseline_result(method: str, x: dsp.AudioClip, y: int, samples: np.ndarray, judge: _Judge,
                     clean_prediction: int, iterations: int) -> AttackResult:
    verdict = judge(samples)
    logger.info(f"{method}: label {y} -> {verdict.prediction}.")
    return AttackResult(
        adversarial=dsp.AudioClip(samples, x.sample_rate),
        label=y,
        prediction=verdict.prediction,
        clean_prediction=clean_prediction,
        success=verdict.goal_met,
        perceptual_loss=verdict.perceptual,
        adversarial_loss=verdict.adversarial,
        iterations=iterations,
        method=method,
    )


def fgsm_attack(
    x: dsp.AudioClip, y: int, model: Union[nets.SpeakerIdentifier, nets.XVectorModel], epsilon: float
) -> AttackResult:
    """One signed-gradient ascent step of size ``epsilon`` on the waveform."""
    identifier = _as_identifier(model)
    _check_inputs(x, y, identifier)
    if epsilon < 0:
        raise ContractViolation(f"epsilon must be non-negative, got {epsilon}")
    vad_mask = identifier.vad(x.samples)
    clean_prediction = identifier.predict(wavio.quantize_pcm16(x.samples, warn=False))
    gradient = _input_gradient(identifier, x.samples, y, vad_mask)
    samples = np.clip(_sign_step(x.samples, gradient, epsilon), -1.0, 1.0)
    return _baseline_result("fgsm", x, y, samples, _Judge(identifier, x, y, None), clean_prediction, 1)


def bim_attack(
    x: dsp.AudioClip,
    y: int,
    model: Union[nets.SpeakerIdentifier, nets.XVectorModel],
    epsilon: float,
    iterations: int,
    step: Optional[float] = None,
) -> AttackResult:
    """Iterated FGSM, projected onto the epsilon ball around ``x`` after every step.

    ``step`` defaults to ``2 * epsilon / iterations``.
    """
    identifier = _as_identifier(model)
    _check_inputs(x, y, identifier)
    if epsilon < 0:
        raise ContractViolation(f"epsilon must be non-negative, got {epsilon}")
    if iterations < 1:
        raise ContractViolation(f"BIM needs at least one iteration, got {iterations}")
    alpha = 2.0 * epsilon / iterations if step is None else step
    vad_mask = identifier.vad(x.samples)
    clean_prediction = identifier.predict(wavio.quantize_pcm16(x.samples, warn=False))
    lower, upper = x.samples - epsilon, x.samples + epsilon
    samples = x.samples.copy()
    for i in range(iterations):
        gradient = _input_gradient(identifier, samples, y, vad_mask)
        samples = np.clip(np.clip(_sign_step(samples, gradient, alpha), lower, upper), -1.0, 1.0)
        logger.debug(f"BIM step {i + 1}/{iterations}: max |dx| = {np.max(np.abs(samples - x.samples)):.5f}")
    return _baseline_result("bim", x, y, samples, _Judge(identifier, x, y, None), clean_prediction, iterations)


def run_attack(
    x: dsp.AudioClip,
    y: int,
    model: Union[nets.SpeakerIdentifier, nets.XVectorModel],
    cfg: AttackConfig,
    rng: np.random.Generator,
) -> AttackResult:
    cfg = cfg.validate()
    if cfg.method == "fgsm":
        return fgsm_attack(x, y, model, cfg.epsilon)
    if cfg.method == "bim":
        return bim_attack(x, y, model, cfg.epsilon, cfg.bim_iterations, cfg.bim_step)
    return foolhd_attack(x, y, model, cfg, rng)


def clip_rng(seed: int, clip_index: int) -> np.random.Generator:
    """Independent random stream for one clip of a run."""
    return np.random.default_rng(np.random.SeedSequence([seed, clip_index]))


def with_overrides(cfg: AttackConfig, **changes) -> AttackConfig:
    return replace(cfg, **changes).validate()
