"""Audio transforms: the MDCT carrier domain and a differentiable MFCC front-end."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import NamedTuple, Optional, Tuple

import numpy as np
import scipy.fft
import scipy.signal
from numpy.lib.stride_tricks import sliding_window_view

from . import tensorcore as tc
from .errors import ContractViolation

logger = logging.getLogger(__name__)

SAMPLE_RATE = 8000
MDCT_FRAME_LEN = 512


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ContractViolation(f"AudioClip needs a non-empty 1-D waveform, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ContractViolation("AudioClip samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class MdctSpectrogram:
    """Frames x bins MDCT coefficients of a clip padded by ``frame_len / 2`` at both ends."""

    coeffs: np.ndarray
    frame_len: int
    num_samples: int
    window: str = "sine"
    origin_stats: Optional[Tuple[float, float]] = None

    @property
    def hop(self) -> int:
        return self.frame_len // 2

    @property
    def bins(self) -> int:
        return self.coeffs.shape[1]


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = SAMPLE_RATE
    win_len: float = 0.025
    hop: float = 0.010
    n_fft: int = 256
    n_mels: int = 30
    n_ceps: int = 29
    include_log_energy: bool = False
    log_floor: float = 1e-8
    cmn_window: Optional[int] = None
    vad: bool = False
    vad_offset: float = -2.0
    f_min: float = 20.0
    f_max: Optional[float] = None

    @property
    def win_samples(self) -> int:
        return int(round(self.win_len * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop * self.sample_rate))

    @property
    def feature_dim(self) -> int:
        return self.n_ceps + (1 if self.include_log_energy else 0)

    @property
    def upper_edge(self) -> float:
        return self.sample_rate / 2 if self.f_max is None else self.f_max

    def validate(self) -> "MfccConfig":
        if self.n_ceps > self.n_mels:
            raise ContractViolation(f"n_ceps ({self.n_ceps}) cannot exceed n_mels ({self.n_mels})")
        if self.n_fft < self.win_samples:
            raise ContractViolation(f"n_fft ({self.n_fft}) is shorter than the analysis window ({self.win_samples})")
        if self.log_floor <= 0:
            raise ContractViolation(f"log_floor must be positive, got {self.log_floor}")
        if self.hop_samples < 1:
            raise ContractViolation("hop must cover at least one sample")
        if self.cmn_window is not None and self.cmn_window < 1:
            raise ContractViolation(f"cmn_window must be >= 1 or disabled, got {self.cmn_window}")
        if not 0 <= self.f_min < self.upper_edge <= self.sample_rate / 2:
            raise ContractViolation(f"invalid mel band edges [{self.f_min}, {self.upper_edge}] at {self.sample_rate} Hz")
        return self


# Features compared by the perceptual loss: every frame, no energy term, no normalization.
PERCEPTUAL_MFCC = MfccConfig()
# Speaker classifier front-end: 29 cepstra + log-energy, sliding CMN, energy VAD.
CLASSIFIER_MFCC = MfccConfig(include_log_energy=True, cmn_window=300, vad=True)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    frame_times: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


class VadMask(NamedTuple):
    keep: np.ndarray
    silent: bool


# -- MDCT -------------------------------------------------------------------


def _check_frame_len(frame_len: int) -> None:
    if frame_len <= 0 or frame_len % 2:
        raise ContractViolation(f"MDCT frame_len must be a positive even number, got {frame_len}")


@lru_cache(maxsize=8)
def mdct_basis(frame_len: int) -> np.ndarray:
    """Sine-windowed orthonormal MDCT basis, shape (frame_len/2, frame_len)."""
    _check_frame_len(frame_len)
    half = frame_len // 2
    n = np.arange(frame_len)
    k = np.arange(half)
    window = np.sin(np.pi * (n + 0.5) / frame_len)
    basis = np.sqrt(2.0 / half) * np.cos(np.pi / half * np.outer(k + 0.5, n + 0.5 + half / 2))
    basis = basis * window
    basis.setflags(write=False)
    return basis


def _padded(samples: np.ndarray, frame_len: int) -> np.ndarray:
    half = frame_len // 2
    tail = half + (-len(samples)) % half
    return np.concatenate([np.zeros(half), samples, np.zeros(tail)])


def mdct(clip: AudioClip, frame_len: int = MDCT_FRAME_LEN) -> MdctSpectrogram:
    _check_frame_len(frame_len)
    half = frame_len // 2
    padded = _padded(clip.samples, frame_len)
    frames = sliding_window_view(padded, frame_len)[::half]
    coeffs = frames @ mdct_basis(frame_len).T
    return MdctSpectrogram(coeffs=coeffs, frame_len=frame_len, num_samples=len(clip))


def mdct_tensor(wave: tc.Tensor, frame_len: int = MDCT_FRAME_LEN) -> tc.Tensor:
    """Differentiable analysis; same layout as :func:`mdct`."""
    _check_frame_len(frame_len)
    half = frame_len // 2
    wave = tc.as_tensor(wave)
    tail = half + (-wave.shape[0]) % half
    padded = tc.concat(tc.Tensor(np.zeros(half)), wave, tc.Tensor(np.zeros(tail)))
    frames = tc.frame(padded, frame_len, half)
    return tc.matmul(frames, tc.Tensor(mdct_basis(frame_len).T))


def imdct_tensor(coeffs: tc.Tensor, frame_len: int, num_samples: int) -> tc.Tensor:
    """Differentiable overlap-add synthesis with the padding stripped."""
    _check_frame_len(frame_len)
    half = frame_len // 2
    frames = tc.matmul(coeffs, tc.Tensor(mdct_basis(frame_len)))
    signal = tc.overlap_add(frames, half)
    return signal[half:half + num_samples]


def imdct(spec: MdctSpectrogram) -> AudioClip:
    if spec.coeffs.ndim != 2 or spec.coeffs.shape[1] != spec.frame_len // 2:
        raise ContractViolation(f"spectrogram of shape {spec.coeffs.shape} does not match frame_len {spec.frame_len}")
    with tc.no_grad():
        signal = imdct_tensor(tc.Tensor(spec.coeffs), spec.frame_len, spec.num_samples)
    return AudioClip(signal.values)


# -- MFCC building blocks --------------------------------------------------


def frame_signal(samples: np.ndarray, win_len: int, hop: int) -> np.ndarray:
    """Rows of ``win_len`` samples, ``hop`` apart, without padding."""
    if len(samples) < win_len:
        raise ContractViolation(f"clip of {len(samples)} samples is shorter than one frame ({win_len})")
    return sliding_window_view(np.asarray(samples, dtype=np.float64), win_len)[::hop].copy()


@lru_cache(maxsize=8)
def dft_power_matrices(n_fft: int) -> Tuple[np.ndarray, np.ndarray]:
    """Real and imaginary DFT rows for bins 0..n_fft/2; power = (C x)^2 + (S x)^2."""
    if n_fft < 2:
        raise ContractViolation(f"n_fft must be at least 2, got {n_fft}")
    phase = 2.0 * np.pi * np.outer(np.arange(n_fft // 2 + 1), np.arange(n_fft)) / n_fft
    cos_m, sin_m = np.cos(phase), -np.sin(phase)
    cos_m.setflags(write=False)
    sin_m.setflags(write=False)
    return cos_m, sin_m


def hz_to_mel(freq):
    return 2595.0 * np.log10(1.0 + np.asarray(freq) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=16)
def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, f_min: float, f_max: float) -> np.ndarray:
    """Triangular filters with centers evenly spaced on the mel scale."""
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ContractViolation(f"invalid mel band edges [{f_min}, {f_max}] at {sample_rate} Hz")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs - lower) / (center - lower)
    falling = (upper - bin_freqs) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(bank.sum(axis=1) <= 0)
    if empty.size:
        raise ContractViolation(f"mel filters {empty.tolist()} cover no DFT bin; lower n_mels or raise n_fft")
    bank.setflags(write=False)
    return bank


@lru_cache(maxsize=8)
def dct_matrix(n_mels: int) -> np.ndarray:
    """Orthonormal DCT-II, rows are cepstral basis vectors."""
    matrix = scipy.fft.dct(np.eye(n_mels), type=2, norm="ortho", axis=0)
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=8)
def _windowed_dft(win_samples: int, n_fft: int) -> Tuple[tc.Tensor, tc.Tensor]:
    window = scipy.signal.get_window("hamming", win_samples, fftbins=False)
    cos_m, sin_m = dft_power_matrices(n_fft)
    return tc.Tensor((cos_m[:, :win_samples] * window).T), tc.Tensor((sin_m[:, :win_samples] * window).T)


@lru_cache(maxsize=8)
def _cepstral_projection(cfg: MfccConfig) -> Tuple[tc.Tensor, tc.Tensor]:
    bank = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, cfg.upper_edge)
    return tc.Tensor(bank.T), tc.Tensor(dct_matrix(cfg.n_mels)[:cfg.n_ceps].T)


def frame_log_energy(samples: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    frames = frame_signal(samples, cfg.win_samples, cfg.hop_samples)
    return np.log(np.maximum((frames * frames).sum(axis=1), cfg.log_floor))


def energy_vad_mask(clip, cfg: MfccConfig) -> VadMask:
    """Keep frames whose log-energy exceeds the clip mean plus ``cfg.vad_offset``."""
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    log_energy = frame_log_energy(samples, cfg)
    floor = np.log(cfg.log_floor)
    if np.all(log_energy <= floor):
        logger.warning("Energy VAD found no active frame: clip is silent.")
        return VadMask(np.zeros(log_energy.shape, dtype=bool), True)
    keep = log_energy > log_energy.mean() + cfg.vad_offset
    return VadMask(keep, not keep.any())


@lru_cache(maxsize=32)
def _cmn_matrix(num_frames: int, window: int) -> np.ndarray:
    width = min(window, num_frames)
    averaging = np.zeros((num_frames, num_frames))
    for t in range(num_frames):
        start = min(max(t - width // 2, 0), num_frames - width)
        averaging[t, start:start + width] = 1.0 / width
    matrix = np.eye(num_frames) - averaging
    matrix.setflags(write=False)
    return matrix


def sliding_cmn(features, window_frames: int):
    """Subtract from every frame the mean of a centered window of frames.

    Near the clip boundaries the window is shifted to stay inside the clip, so
    a window covering the whole clip reduces to global mean subtraction.
    """
    if window_frames < 1:
        raise ContractViolation(f"CMN window must be at least one frame, got {window_frames}")
    if isinstance(features, tc.Tensor):
        return tc.matmul(tc.Tensor(_cmn_matrix(features.shape[0], window_frames)), features)
    features = np.asarray(features, dtype=np.float64)
    return _cmn_matrix(features.shape[0], window_frames) @ features


def mfcc_tensor(wave: tc.Tensor, cfg: MfccConfig, vad_mask: Optional[np.ndarray] = None) -> tc.Tensor:
    """MFCC features of a waveform tensor, differentiable with respect to the samples.

    With ``cfg.vad`` enabled, ``vad_mask`` selects the kept frames; when it is
    omitted a fresh mask is computed from the waveform values.
    """
    cfg.validate()
    frames = tc.frame(wave, cfg.win_samples, cfg.hop_samples)
    cos_w, sin_w = _windowed_dft(cfg.win_samples, cfg.n_fft)
    power = tc.square(frames @ cos_w) + tc.square(frames @ sin_w)
    mel_t, dct_t = _cepstral_projection(cfg)
    features = tc.log(tc.clamp_min(power @ mel_t, cfg.log_floor)) @ dct_t
    if cfg.include_log_energy:
        energy = tc.reduce_sum(tc.square(frames), axis=1, keepdims=True)
        features = tc.concat(features, tc.log(tc.clamp_min(energy, cfg.log_floor)), axis=1)
    if cfg.cmn_window is not None:
        features = sliding_cmn(features, cfg.cmn_window)
    if cfg.vad:
        if vad_mask is None:
            vad_mask = energy_vad_mask(wave.values, cfg).keep
        if vad_mask.shape != (features.shape[0],):
            raise ContractViolation(f"VAD mask covers {vad_mask.shape[0]} frames, features have {features.shape[0]}")
        features = features[vad_mask]
    return features


def mfcc(clip: AudioClip, cfg: MfccConfig = PERCEPTUAL_MFCC, vad_mask: Optional[np.ndarray] = None) -> FeatureMatrix:
    cfg = cfg.validate()
    if clip.sample_rate != cfg.sample_rate:
        raise ContractViolation(f"clip rate {clip.sample_rate} Hz differs from front-end rate {cfg.sample_rate} Hz")
    with tc.no_grad():
        values = mfcc_tensor(tc.Tensor(clip.samples), cfg, vad_mask).values
    count = 1 + (len(clip) - cfg.win_samples) // cfg.hop_samples
    times = (np.arange(count) * cfg.hop_samples + cfg.win_samples / 2) / cfg.sample_rate
    if cfg.vad:
        keep = vad_mask if vad_mask is not None else energy_vad_mask(clip, cfg).keep
        times = times[keep]
    return FeatureMatrix(values=values, frame_times=times)


def with_overrides(cfg: MfccConfig, **changes) -> MfccConfig:
    return replace(cfg, **changes).validate()
