"""The gated convolutional autoencoder and the x-vector speaker classifier."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import dsp
from . import losses
from . import tensorcore as tc
from .errors import ContractViolation

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8
SIGMA_FLOOR = 1e-8
CHECKPOINT_FORMAT = "foolhd-xvector"
CHECKPOINT_VERSION = 1


def _he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> tc.Tensor:
    return tc.Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


@dataclass
class BatchNorm:
    """Per-channel normalization with learned scale and shift.

    With ``track_running_stats`` off the layer always normalizes with the
    statistics of its current input.
    """

    gamma: tc.Tensor
    beta: tc.Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    track_running_stats: bool = True
    momentum: float = 0.1
    eps_num: float = 1e-5

    @classmethod
    def create(cls, channels: int, track_running_stats: bool = True) -> "BatchNorm":
        return cls(
            gamma=tc.Tensor(np.ones(channels), requires_grad=True),
            beta=tc.Tensor(np.zeros(channels), requires_grad=True),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            track_running_stats=track_running_stats,
        )

    def parameters(self) -> List[tc.Tensor]:
        return [self.gamma, self.beta]

    def __call__(self, x: tc.Tensor, axis: int, training: bool) -> tc.Tensor:
        if training or not self.track_running_stats:
            if training and self.track_running_stats:
                reduce_axes = tuple(d for d in range(x.ndim) if d != axis % x.ndim)
                count = x.size // x.shape[axis]
                batch_var = x.values.var(axis=reduce_axes) * count / max(count - 1, 1)
                self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * x.values.mean(axis=reduce_axes)
                self.running_var = (1 - self.momentum) * self.running_var + self.momentum * batch_var
            return tc.batch_norm(x, self.gamma, self.beta, self.eps_num, axis=axis)
        shape = [1] * x.ndim
        shape[axis] = x.shape[axis]
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps_num)
        xhat = (x - self.running_mean.reshape(shape)) * inv_std.reshape(shape)
        return xhat * tc.reshape(self.gamma, shape) + tc.reshape(self.beta, shape)


# -- gated convolutional autoencoder ----------------------------------------


@dataclass
class GatedConvLayer:
    feature_kernels: tc.Tensor
    gate_kernels: tc.Tensor
    norm: BatchNorm
    dropout_rate: float = 1e-3

    def __post_init__(self):
        if self.feature_kernels.shape != self.gate_kernels.shape:
            raise ContractViolation(
                f"feature and gate kernels differ in shape: {self.feature_kernels.shape} vs {self.gate_kernels.shape}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractViolation(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")

    @classmethod
    def initialize(
        cls, in_channels: int, out_channels: int, rng: np.random.Generator, dropout_rate: float = 1e-3
    ) -> "GatedConvLayer":
        shape = (out_channels, in_channels, 3, 3)
        return cls(
            feature_kernels=_he_normal(rng, shape, in_channels * 9),
            gate_kernels=_he_normal(rng, shape, in_channels * 9),
            norm=BatchNorm.create(out_channels, track_running_stats=False),
            dropout_rate=dropout_rate,
        )

    @property
    def in_channels(self) -> int:
        return self.feature_kernels.shape[1]

    def parameters(self) -> List[tc.Tensor]:
        return [self.feature_kernels, self.gate_kernels, *self.norm.parameters()]


def gated_conv_forward(
    layer: GatedConvLayer, x: tc.Tensor, training: bool, rng: Optional[np.random.Generator] = None
) -> tc.Tensor:
    """``conv_W(x) * sigmoid(conv_V(x))``, then batch norm, then dropout."""
    if x.ndim != 3 or x.shape[0] != layer.in_channels:
        raise ContractViolation(f"gated layer expects {layer.in_channels} x H x W input, got {x.shape}")
    gated = tc.conv2d(x, layer.feature_kernels) * tc.sigmoid(tc.conv2d(x, layer.gate_kernels))
    normed = layer.norm(gated, axis=0, training=training)
    return tc.dropout(normed, layer.dropout_rate, training, rng)


@dataclass
class Gca:
    """Encoder of gated layers, optional skip concatenation, gated decoder, linear projection."""

    encoder: List[GatedConvLayer]
    decoder: List[GatedConvLayer]
    projection: tc.Tensor
    skip_enabled: bool = True
    rng: Optional[np.random.Generator] = None

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        channels: int = 64,
        dropout_rate: float = 1e-3,
        skip_enabled: bool = True,
        encoder_depth: int = 3,
        decoder_depth: int = 4,
    ) -> "Gca":
        encoder = [
            GatedConvLayer.initialize(1 if i == 0 else channels, channels, rng, dropout_rate)
            for i in range(encoder_depth)
        ]
        first_decoder_in = channels + 1 if skip_enabled else channels
        decoder = [
            GatedConvLayer.initialize(first_decoder_in if i == 0 else channels, channels, rng, dropout_rate)
            for i in range(decoder_depth)
        ]
        projection = _he_normal(rng, (1, channels, 3, 3), channels * 9)
        return cls(encoder=encoder, decoder=decoder, projection=projection, skip_enabled=skip_enabled, rng=rng)

    @property
    def decoder_in_channels(self) -> int:
        return self.decoder[0].in_channels

    def parameters(self) -> List[tc.Tensor]:
        params: List[tc.Tensor] = []
        for layer in (*self.encoder, *self.decoder):
            params.extend(layer.parameters())
        params.append(self.projection)
        return params


def gca_forward(gca: Gca, s_norm, training: bool) -> tc.Tensor:
    """Map a normalized frames x bins spectrogram to the normalized adversarial one."""
    s_norm = tc.as_tensor(s_norm)
    if s_norm.ndim != 2:
        raise ContractViolation(f"GCA input must be frames x bins, got shape {s_norm.shape}")
    image = tc.reshape(s_norm, (1, *s_norm.shape))
    h = image
    for layer in gca.encoder:
        h = gated_conv_forward(layer, h, training, gca.rng)
    h_dot = tc.concat(h, image, axis=0) if gca.skip_enabled else h
    for layer in gca.decoder:
        h_dot = gated_conv_forward(layer, h_dot, training, gca.rng)
    return tc.reshape(tc.conv2d(h_dot, gca.projection), s_norm.shape)


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float
    constant: bool = False


def normalize_spectrogram(spec) -> Tuple[np.ndarray, NormStats]:
    """Zero-mean, unit-variance copy of the coefficients plus the statistics to undo it."""
    coeffs = spec.coeffs if isinstance(spec, dsp.MdctSpectrogram) else np.asarray(spec, dtype=np.float64)
    if coeffs.size == 0:
        raise ContractViolation("cannot normalize an empty spectrogram")
    mean = float(coeffs.mean())
    std = float(coeffs.std())
    constant = std < STD_FLOOR
    if constant:
        logger.warning(f"Spectrogram is constant (std={std:.3g}); flooring std at {STD_FLOOR}.")
        std = STD_FLOOR
    if isinstance(spec, dsp.MdctSpectrogram):
        spec.origin_stats = (mean, std)
    return (coeffs - mean) / std, NormStats(mean=mean, std=std, constant=constant)


def denormalize_spectrogram(s_norm, stats: NormStats) -> tc.Tensor:
    """Re-standardize the GCA output and restore the saved mean and std."""
    s_norm = tc.as_tensor(s_norm)
    centered = s_norm - tc.reduce_mean(s_norm)
    std = tc.sqrt(tc.clamp_min(tc.reduce_mean(tc.square(centered)), STD_FLOOR * STD_FLOOR))
    return centered / std * stats.std + stats.mean


# -- x-vector classifier -----------------------------------------------------

TDNN_CONTEXT = ((5, 1), (3, 2), (3, 3), (1, 1), (1, 1))


@dataclass
class TdnnLayer:
    kernels: tc.Tensor
    bias: tc.Tensor
    dilation: int
    norm: BatchNorm

    def parameters(self) -> List[tc.Tensor]:
        return [self.kernels, self.bias, *self.norm.parameters()]


@dataclass
class AttentionHead:
    weight: tc.Tensor
    bias: tc.Tensor
    score: tc.Tensor

    def parameters(self) -> List[tc.Tensor]:
        return [self.weight, self.bias, self.score]


@dataclass
class DenseLayer:
    weight: tc.Tensor
    bias: tc.Tensor
    norm: Optional[BatchNorm] = None

    def parameters(self) -> List[tc.Tensor]:
        return [self.weight, self.bias, *(self.norm.parameters() if self.norm else [])]


@dataclass
class XVectorModel:
    tdnn: List[TdnnLayer]
    attention: AttentionHead
    dense: List[DenseLayer]
    feature_dim: int
    num_classes: int
    dropout_rate: float = 1e-3
    widths: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def initialize(
        cls,
        feature_dim: int,
        num_classes: int,
        rng: np.random.Generator,
        tdnn_channels: int = 64,
        attention_dim: int = 32,
        dense_dims: Sequence[int] = (128, 64),
        dropout_rate: float = 1e-3,
    ) -> "XVectorModel":
        if num_classes < 2:
            raise ContractViolation(f"a speaker classifier needs at least 2 classes, got {num_classes}")
        tdnn = []
        in_channels = feature_dim
        for taps, dilation in TDNN_CONTEXT:
            tdnn.append(
                TdnnLayer(
                    kernels=_he_normal(rng, (tdnn_channels, in_channels, taps), in_channels * taps),
                    bias=tc.Tensor(np.zeros(tdnn_channels), requires_grad=True),
                    dilation=dilation,
                    norm=BatchNorm.create(tdnn_channels),
                )
            )
            in_channels = tdnn_channels
        attention = AttentionHead(
            weight=tc.Tensor(rng.normal(0.0, np.sqrt(1.0 / tdnn_channels), (tdnn_channels, attention_dim)), requires_grad=True),
            bias=tc.Tensor(np.zeros(attention_dim), requires_grad=True),
            score=tc.Tensor(rng.normal(0.0, np.sqrt(1.0 / attention_dim), (attention_dim, 1)), requires_grad=True),
        )
        dense = []
        width = 2 * tdnn_channels
        for dim in dense_dims:
            dense.append(
                DenseLayer(
                    weight=_he_normal(rng, (width, dim), width),
                    bias=tc.Tensor(np.zeros(dim), requires_grad=True),
                    norm=BatchNorm.create(dim),
                )
            )
            width = dim
        dense.append(
            DenseLayer(
                weight=tc.Tensor(rng.normal(0.0, np.sqrt(1.0 / width), (width, num_classes)), requires_grad=True),
                bias=tc.Tensor(np.zeros(num_classes), requires_grad=True),
            )
        )
        widths = {
            "tdnn_channels": tdnn_channels,
            "attention_dim": attention_dim,
            "dense_dims": list(dense_dims),
        }
        return cls(tdnn, attention, dense, feature_dim, num_classes, dropout_rate, widths)

    @property
    def min_frames(self) -> int:
        return 1 + sum((layer.kernels.shape[2] - 1) * layer.dilation for layer in self.tdnn)

    def parameters(self) -> List[tc.Tensor]:
        params: List[tc.Tensor] = []
        for layer in self.tdnn:
            params.extend(layer.parameters())
        params.extend(self.attention.parameters())
        for layer in self.dense:
            params.extend(layer.parameters())
        return params

    def set_trainable(self, trainable: bool) -> "XVectorModel":
        """Switch gradient tracking of every weight; a frozen model only passes gradients through."""
        for p in self.parameters():
            p.requires_grad = trainable
            p.grad = None
        return self

    def _named_slots(self):
        for i, layer in enumerate(self.tdnn):
            yield f"tdnn.{i}.kernels", layer, "kernels"
            yield f"tdnn.{i}.bias", layer, "bias"
            yield from _norm_slots(f"tdnn.{i}.norm", layer.norm)
        for name in ("weight", "bias", "score"):
            yield f"attention.{name}", self.attention, name
        for i, layer in enumerate(self.dense):
            yield f"dense.{i}.weight", layer, "weight"
            yield f"dense.{i}.bias", layer, "bias"
            if layer.norm is not None:
                yield from _norm_slots(f"dense.{i}.norm", layer.norm)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {}
        for name, owner, attr in self._named_slots():
            value = getattr(owner, attr)
            state[name] = (value.values if isinstance(value, tc.Tensor) else value).copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, owner, attr in self._named_slots():
            if name not in state:
                raise ContractViolation(f"checkpoint is missing '{name}'")
            current = getattr(owner, attr)
            array = np.asarray(state[name], dtype=np.float64)
            expected = current.shape
            if array.shape != expected:
                raise ContractViolation(f"'{name}' has shape {array.shape}, model expects {expected}")
            if isinstance(current, tc.Tensor):
                current.values = array.copy()
            else:
                setattr(owner, attr, array.copy())

    def config(self) -> Dict[str, object]:
        return {
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
            "dropout_rate": self.dropout_rate,
            **self.widths,
        }


def _norm_slots(prefix: str, norm: BatchNorm):
    yield f"{prefix}.gamma", norm, "gamma"
    yield f"{prefix}.beta", norm, "beta"
    yield f"{prefix}.running_mean", norm, "running_mean"
    yield f"{prefix}.running_var", norm, "running_var"


def attentive_stat_pooling(frames, head: AttentionHead) -> tc.Tensor:
    """Attention-weighted mean and standard deviation over time.

    ``frames`` is C x T (or B x C x T); the result is 2C (or B x 2C).
    """
    frames = tc.as_tensor(frames)
    single = frames.ndim == 2
    if single:
        frames = tc.reshape(frames, (1, *frames.shape))
    batch, channels, length = frames.shape
    if length < 2:
        raise ContractViolation(f"statistics pooling needs at least 2 frames, got {length}")
    per_frame = tc.transpose(frames, (0, 2, 1))
    scores = tc.tanh(per_frame @ head.weight + head.bias) @ head.score
    alpha = tc.reshape(tc.softmax(tc.reshape(scores, (batch, length)), axis=1), (batch, 1, length))
    mu = tc.reduce_sum(frames * alpha, axis=2)
    second = tc.reduce_sum(tc.square(frames) * alpha, axis=2)
    sigma = tc.sqrt(tc.clamp_min(second - tc.square(mu), SIGMA_FLOOR))
    pooled = tc.concat(mu, sigma, axis=1)
    return tc.reshape(pooled, (2 * channels,)) if single else pooled


def xvector_forward(
    model: XVectorModel, features, training: bool, rng: Optional[np.random.Generator] = None
) -> tc.Tensor:
    """Speaker logits for T x F features (or a B x T x F batch)."""
    x = tc.as_tensor(features)
    single = x.ndim == 2
    if single:
        x = tc.reshape(x, (1, *x.shape))
    if x.ndim != 3 or x.shape[2] != model.feature_dim:
        raise ContractViolation(f"x-vector expects [B x] T x {model.feature_dim} features, got {features.shape}")
    if x.shape[1] < model.min_frames:
        raise ContractViolation(f"x-vector needs at least {model.min_frames} frames, got {x.shape[1]}")
    h = tc.transpose(x, (0, 2, 1))
    for layer in model.tdnn:
        h = tc.conv1d_dilated(h, layer.kernels, layer.dilation) + tc.reshape(layer.bias, (1, -1, 1))
        h = layer.norm(h, axis=1, training=training)
        h = tc.dropout(tc.relu(h), model.dropout_rate, training, rng)
    h = attentive_stat_pooling(h, model.attention)
    for layer in model.dense:
        h = h @ layer.weight + layer.bias
        if layer.norm is not None:
            h = layer.norm(h, axis=1, training=training)
            h = tc.dropout(tc.relu(h), model.dropout_rate, training, rng)
    return tc.reshape(h, (model.num_classes,)) if single else h


def restrict_output_classes(model: XVectorModel, keep: Sequence[int]) -> XVectorModel:
    """Copy of ``model`` whose output layer only scores the classes in ``keep``, in that order."""
    keep = [int(k) for k in keep]
    if len(keep) < 2 or len(set(keep)) != len(keep) or not all(0 <= k < model.num_classes for k in keep):
        raise ContractViolation(f"invalid class subset {keep} for a {model.num_classes}-class model")
    restricted = copy.deepcopy(model)
    head = restricted.dense[-1]
    head.weight = tc.Tensor(head.weight.values[:, keep], requires_grad=head.weight.requires_grad)
    head.bias = tc.Tensor(head.bias.values[keep], requires_grad=head.bias.requires_grad)
    restricted.num_classes = len(keep)
    return restricted


# -- classifier wrapped with its front-end -----------------------------------


@dataclass
class SpeakerIdentifier:
    """A trained x-vector model together with the MFCC front-end it was trained on.

    Wrapping freezes the model: attacks differentiate through it, never into it.
    """

    model: XVectorModel
    frontend: dsp.MfccConfig = dsp.CLASSIFIER_MFCC

    def __post_init__(self):
        self.model.set_trainable(False)

    @property
    def num_classes(self) -> int:
        return self.model.num_classes

    def vad(self, samples: np.ndarray) -> np.ndarray:
        if not self.frontend.vad:
            return np.ones(1 + (len(samples) - self.frontend.win_samples) // self.frontend.hop_samples, dtype=bool)
        mask = dsp.energy_vad_mask(samples, self.frontend)
        if mask.silent:
            raise ContractViolation("clip is silent: the energy VAD kept no frame")
        return mask.keep

    def features(self, wave, vad_mask: Optional[np.ndarray] = None) -> tc.Tensor:
        return dsp.mfcc_tensor(tc.as_tensor(wave), self.frontend, vad_mask)

    def logits(self, wave, vad_mask: Optional[np.ndarray] = None) -> tc.Tensor:
        return xvector_forward(self.model, self.features(wave, vad_mask), training=False)

    def predict_logits(self, samples: np.ndarray) -> np.ndarray:
        """Logits through the full pipeline, with a VAD mask computed from ``samples`` themselves."""
        with tc.no_grad():
            return self.logits(tc.Tensor(samples), self.vad(samples)).values

    def predict(self, samples: np.ndarray) -> int:
        return int(np.argmax(self.predict_logits(samples)))


# -- training -----------------------------------------------------------------


@dataclass
class TrainingConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 16
    crop_frames: int = 200
    dropout: float = 1e-3
    weight_decay: float = 0.0
    lr_decay: float = 0.05
    lr_decay_period: int = 30
    tdnn_channels: int = 64
    attention_dim: int = 32
    dense_dims: Tuple[int, ...] = (128, 64)

    def learning_rate(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_period)


@dataclass
class TrainingRecord:
    losses: List[float] = field(default_factory=list)
    accuracies: List[float] = field(default_factory=list)
    learning_rates: List[float] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1] if self.accuracies else 0.0

    def to_dict(self) -> Dict[str, List[float]]:
        return {"loss": self.losses, "train_accuracy": self.accuracies, "learning_rate": self.learning_rates}


def _check_dataset(dataset: Sequence[Tuple[np.ndarray, int]], min_frames: int) -> Tuple[int, int]:
    if not dataset:
        raise ContractViolation("training set is empty")
    labels = np.array([label for _, label in dataset])
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise ContractViolation(f"training needs at least 2 speakers, got {classes.size}")
    if counts.min() < 2:
        raise ContractViolation(f"every speaker needs at least 2 clips; speaker {classes[np.argmin(counts)]} has 1")
    short = [i for i, (feats, _) in enumerate(dataset) if feats.shape[0] < min_frames]
    if short:
        raise ContractViolation(f"clips {short[:5]} have fewer than {min_frames} frames after VAD")
    return int(labels.max()) + 1, int(dataset[0][0].shape[1])


def _batches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # batch norm needs two examples per batch
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def evaluate_accuracy(model: XVectorModel, dataset: Sequence[Tuple[np.ndarray, int]]) -> float:
    with tc.no_grad():
        hits = sum(
            int(np.argmax(xvector_forward(model, feats, training=False).values)) == label for feats, label in dataset
        )
    return hits / len(dataset)


def train_classifier(
    dataset: Sequence[Tuple[np.ndarray, int]],
    hyperparams: TrainingConfig,
    rng: np.random.Generator,
    *,
    num_classes: Optional[int] = None,
    initial_model: Optional[XVectorModel] = None,
) -> Tuple[XVectorModel, TrainingRecord]:
    """Cross-entropy training with Adam on random fixed-length crops of each utterance."""
    if hyperparams.batch_size < 2:
        raise ContractViolation("batch_size must be at least 2 for batch normalization")
    min_frames = 1 + sum((k - 1) * d for k, d in TDNN_CONTEXT)
    inferred_classes, feature_dim = _check_dataset(dataset, min_frames)
    if initial_model is not None:
        model = copy.deepcopy(initial_model)
    else:
        model = XVectorModel.initialize(
            feature_dim,
            num_classes or inferred_classes,
            rng,
            tdnn_channels=hyperparams.tdnn_channels,
            attention_dim=hyperparams.attention_dim,
            dense_dims=hyperparams.dense_dims,
            dropout_rate=hyperparams.dropout,
        )
    if inferred_classes > model.num_classes:
        raise ContractViolation(f"labels reach {inferred_classes - 1} but the model scores {model.num_classes} classes")
    if model.feature_dim != feature_dim:
        raise ContractViolation(f"features have {feature_dim} dimensions, the model expects {model.feature_dim}")
    params = model.set_trainable(True).parameters()
    state = tc.AdamState.create(params, lr=hyperparams.lr, weight_decay=hyperparams.weight_decay)
    record = TrainingRecord()
    logger.info(f"Training x-vector classifier: {len(dataset)} clips, {model.num_classes} speakers, {hyperparams.epochs} epochs.")

    for epoch in range(hyperparams.epochs):
        state.lr = hyperparams.learning_rate(epoch)
        epoch_losses = []
        for batch in _batches(rng.permutation(len(dataset)), hyperparams.batch_size):
            length = min(hyperparams.crop_frames, min(dataset[i][0].shape[0] for i in batch))
            crops = []
            for i in batch:
                feats = dataset[i][0]
                start = int(rng.integers(0, feats.shape[0] - length + 1))
                crops.append(feats[start:start + length])
            labels = [dataset[i][1] for i in batch]
            tc.zero_grad(params)
            logits = xvector_forward(model, np.stack(crops), training=True, rng=rng)
            loss = losses.cross_entropy(logits, labels)
            tc.backward(loss)
            tc.adam_step(params, state)
            epoch_losses.append(loss.item())
        record.losses.append(float(np.mean(epoch_losses)))
        record.accuracies.append(evaluate_accuracy(model, dataset))
        record.learning_rates.append(state.lr)
        logger.debug(
            f"Epoch {epoch + 1}/{hyperparams.epochs}: loss={record.losses[-1]:.4f} "
            f"train_acc={record.accuracies[-1]:.3f} lr={state.lr:.2e}"
        )
    tc.zero_grad(params)
    logger.info(f"Classifier training finished: train accuracy {record.final_accuracy:.3f}.")
    return model, record


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(model: XVectorModel, path: Path, extra: Optional[Dict[str, object]] = None) -> None:
    """Write an ``.npz`` container: a JSON header plus one float64 array per tensor."""
    state = model.state_dict()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.config(),
        "shapes": {name: list(arr.shape) for name, arr in state.items()},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, __header__=np.array(json.dumps(header, sort_keys=True)), **state)
    logger.info(f"Checkpoint written to '{path}'.")


def load_checkpoint(path: Path) -> Tuple[XVectorModel, Dict[str, object]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if "__header__" not in data.files:
            raise ContractViolation(f"'{path}' is not a foolhd checkpoint (no header)")
        header = json.loads(str(data["__header__"]))
        state = {name: data[name] for name in data.files if name != "__header__"}
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise ContractViolation(
            f"unsupported checkpoint {header.get('format')} v{header.get('version')}; "
            f"expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}"
        )
    cfg = header["model"]
    model = XVectorModel.initialize(
        cfg["feature_dim"],
        cfg["num_classes"],
        np.random.default_rng(0),
        tdnn_channels=cfg["tdnn_channels"],
        attention_dim=cfg["attention_dim"],
        dense_dims=tuple(cfg["dense_dims"]),
        dropout_rate=cfg["dropout_rate"],
    )
    model.load_state_dict(state)
    logger.info(f"Loaded {model.num_classes}-speaker checkpoint from '{path}'.")
    return model, header.get("extra", {})
