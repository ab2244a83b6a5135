import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

import numpy as np
import pytest

from foolhd import corpus, dsp, nets
from foolhd import tensorcore as tc


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-10)
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_gradcheck(fn, *inputs, h: float = 1e-5) -> float:
    """Worst relative error between backward() and central differences over all inputs."""
    tensors = [tc.Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    tc.backward(fn(*tensors))
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.values)
        numeric = np.zeros_like(t.values)
        for idx in np.ndindex(t.shape):
            original = t.values[idx]
            t.values[idx] = original + h
            with tc.no_grad():
                plus = fn(*tensors).item()
            t.values[idx] = original - h
            with tc.no_grad():
                minus = fn(*tensors).item()
            t.values[idx] = original
            numeric[idx] = (plus - minus) / (2 * h)
        worst = max(worst, _relative_error(analytic, numeric))
    return worst


def directional_gradcheck(loss_fn, params, rng, h: float = 1e-5) -> float:
    """Compare the gradient along one random direction per parameter with a central difference."""
    tc.zero_grad(params)
    tc.backward(loss_fn())
    worst = 0.0
    for p in params:
        direction = rng.standard_normal(p.shape)
        analytic = float(np.sum(p.grad * direction))
        original = p.values.copy()
        p.values = original + h * direction
        with tc.no_grad():
            plus = loss_fn().item()
        p.values = original - h * direction
        with tc.no_grad():
            minus = loss_fn().item()
        p.values = original
        numeric = (plus - minus) / (2 * h)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
    return worst


@pytest.fixture
def gradcheck():
    return numeric_gradcheck


@pytest.fixture
def dircheck():
    return directional_gradcheck


TINY_TRAINING = nets.TrainingConfig(
    epochs=25,
    lr=1e-2,
    batch_size=4,
    crop_frames=60,
    tdnn_channels=16,
    attention_dim=8,
    dense_dims=(16, 8),
)


def two_speaker_clips(clips_per_speaker: int = 6, duration: float = 1.0, seed: int = 7):
    voices = corpus.speaker_voices(2, seed)
    clips = []
    for speaker, voice in enumerate(voices):
        for index in range(clips_per_speaker):
            rng = np.random.default_rng(np.random.SeedSequence([seed, speaker, index]))
            clips.append((corpus.synthesize_clip(voice, rng, duration=duration), speaker))
    return clips


@pytest.fixture(scope="session")
def tiny_clips():
    return two_speaker_clips()


@pytest.fixture(scope="session")
def tiny_identifier(tiny_clips):
    """Two-speaker classifier on one-second synthetic clips."""
    dataset = [(dsp.mfcc(clip, dsp.CLASSIFIER_MFCC).values, label) for clip, label in tiny_clips]
    model, _ = nets.train_classifier(dataset, TINY_TRAINING, np.random.default_rng(0))
    return nets.SpeakerIdentifier(model, dsp.CLASSIFIER_MFCC)
