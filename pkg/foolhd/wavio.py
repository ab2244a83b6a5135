"""16-bit PCM mono WAV files."""

import logging
import wave
from pathlib import Path

import numpy as np

from .dsp import AudioClip
from .errors import WavFormatError

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0
PCM16_MIN, PCM16_MAX = -32768, 32767


def _to_pcm16(samples: np.ndarray, warn: bool = True) -> np.ndarray:
    scaled = np.asarray(samples, dtype=np.float64) * PCM16_SCALE
    # round half away from zero
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    clamped = np.clip(rounded, PCM16_MIN, PCM16_MAX)
    if warn:
        count = int(np.count_nonzero(clamped != rounded))
        if count:
            logger.warning(f"Clamped {count} sample(s) outside the PCM16 range.")
    return clamped.astype(np.int16)


def quantize_pcm16(samples: np.ndarray, warn: bool = True) -> np.ndarray:
    """The samples :func:`read_wav` returns after :func:`write_wav` stores ``samples``."""
    return _to_pcm16(samples, warn).astype(np.float64) / PCM16_SCALE


def write_wav(path: Path, clip: AudioClip) -> None:
    path = Path(path)
    pcm = _to_pcm16(clip.samples)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.astype("<i2").tobytes())
    logger.debug(f"Wrote {len(pcm)} samples to '{path}'.")


def read_wav(path: Path) -> AudioClip:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"WAV file not found: {path}")
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, count = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(count)
    except (wave.Error, EOFError) as e:
        raise WavFormatError(f"'{path}' is not a readable PCM WAV file: {e}") from e
    if channels != 1:
        raise WavFormatError(f"'{path}' has {channels} channels; only mono is supported")
    if width != 2:
        raise WavFormatError(f"'{path}' uses {8 * width}-bit samples; only 16-bit PCM is supported")
    if len(raw) != 2 * count:
        raise WavFormatError(f"'{path}' is truncated: header declares {count} frames, found {len(raw) // 2}")
    if count == 0:
        raise WavFormatError(f"'{path}' contains no samples")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM16_SCALE
    return AudioClip(samples, rate)
