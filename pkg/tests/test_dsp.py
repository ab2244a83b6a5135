import numpy as np
import pytest
import scipy.fft

from foolhd import dsp
from foolhd import tensorcore as tc
from foolhd.errors import ContractViolation


def test_mdct_perfect_reconstruction(rng):
    for _ in range(1000):
        frame_len = int(rng.choice([8, 16, 64]))
        length = (frame_len // 2) * int(rng.integers(1, 12))
        clip = dsp.AudioClip(rng.uniform(-1, 1, length))
        restored = dsp.imdct(dsp.mdct(clip, frame_len))
        assert np.max(np.abs(restored.samples - clip.samples)) <= 1e-9


def test_mdct_reconstructs_lengths_off_the_hop_grid(rng):
    clip = dsp.AudioClip(rng.uniform(-1, 1, 1001))
    spec = dsp.mdct(clip)
    assert spec.bins == 256
    assert np.max(np.abs(dsp.imdct(spec).samples - clip.samples)) <= 1e-9


def test_mdct_matches_direct_summation(rng):
    frame_len = 16
    half = frame_len // 2
    samples = rng.uniform(-1, 1, half)
    spec = dsp.mdct(dsp.AudioClip(samples), frame_len)
    padded = np.concatenate([np.zeros(half), samples, np.zeros(half)])
    block = padded[:frame_len]
    n = np.arange(frame_len)
    window = np.sin(np.pi * (n + 0.5) / frame_len)
    expected = [
        np.sqrt(2.0 / half) * np.sum(window * block * np.cos(np.pi / half * (n + 0.5 + half / 2) * (k + 0.5)))
        for k in range(half)
    ]
    np.testing.assert_allclose(spec.coeffs[0], expected, atol=1e-10)


def test_mdct_is_linear(rng):
    for _ in range(100):
        frame_len = int(rng.choice([8, 16, 64, 512]))
        length = int(rng.integers(frame_len // 2, 2000))
        x, y = rng.uniform(-0.5, 0.5, (2, length))
        a, b = rng.uniform(-1.0, 1.0, 2)
        combined = dsp.mdct(dsp.AudioClip(a * x + b * y), frame_len).coeffs
        separate = a * dsp.mdct(dsp.AudioClip(x), frame_len).coeffs + b * dsp.mdct(dsp.AudioClip(y), frame_len).coeffs
        np.testing.assert_allclose(combined, separate, atol=1e-10)


def test_mdct_of_silence_is_zero():
    spec = dsp.mdct(dsp.AudioClip(np.zeros(1024)))
    assert not np.any(spec.coeffs)
    assert not np.any(dsp.imdct(dsp.MdctSpectrogram(np.zeros_like(spec.coeffs), 512, 1024)).samples)


def test_mdct_tensor_matches_array_version(rng):
    samples = rng.uniform(-1, 1, 900)
    expected = dsp.mdct(dsp.AudioClip(samples), 64).coeffs
    np.testing.assert_allclose(dsp.mdct_tensor(tc.Tensor(samples), 64).values, expected, atol=1e-12)


@pytest.mark.parametrize("frame_len", [0, -4, 7])
def test_mdct_rejects_bad_frame_len(frame_len):
    with pytest.raises(ContractViolation):
        dsp.mdct(dsp.AudioClip(np.zeros(16)), frame_len)


def test_audio_clip_rejects_empty_and_nan():
    with pytest.raises(ContractViolation):
        dsp.AudioClip(np.zeros(0))
    with pytest.raises(ContractViolation):
        dsp.AudioClip(np.array([0.0, np.nan]))


def test_frame_signal_counts():
    assert dsp.frame_signal(np.zeros(400), 200, 80).shape == (3, 200)
    assert dsp.frame_signal(np.zeros(32000), 200, 80).shape[0] == 398
    samples = np.arange(12.0)
    np.testing.assert_array_equal(dsp.frame_signal(samples, 4, 4).ravel(), samples)
    with pytest.raises(ContractViolation):
        dsp.frame_signal(np.zeros(10), 20, 5)


def test_dft_power_of_dc_and_cosine():
    cos_m, sin_m = dsp.dft_power_matrices(32)
    ones = np.ones(32)
    power = (cos_m @ ones) ** 2 + (sin_m @ ones) ** 2
    assert power[0] > 0
    assert np.all(power[1:] <= 1e-18)
    tone = np.cos(2 * np.pi * 4 * np.arange(32) / 32)
    power = (cos_m @ tone) ** 2 + (sin_m @ tone) ** 2
    assert np.all(np.delete(power, 4) <= 1e-18)


def test_dft_power_matches_naive_sum(rng):
    n_fft = 256
    cos_m, sin_m = dsp.dft_power_matrices(n_fft)
    n = np.arange(n_fft)
    for _ in range(100):
        frame = rng.uniform(-1, 1, n_fft)
        power = (cos_m @ frame) ** 2 + (sin_m @ frame) ** 2
        naive = [abs(np.sum(frame * np.exp(-2j * np.pi * k * n / n_fft))) ** 2 for k in range(n_fft // 2 + 1)]
        np.testing.assert_allclose(power, naive, rtol=1e-8, atol=1e-9)


def test_mel_filterbank_shape_and_centers():
    bank = dsp.mel_filterbank(23, 256, 8000, 20.0, 4000.0)
    assert bank.shape == (23, 129)
    assert np.all(bank >= 0)
    peaks = bank.argmax(axis=1)
    assert np.all(np.diff(peaks) >= 0)
    for row in bank:
        support = row[row > 0]
        top = int(np.argmax(support))
        assert np.all(np.diff(support[:top + 1]) >= 0)
        assert np.all(np.diff(support[top:]) <= 0)
    mel_lo, mel_hi = 2595 * np.log10(1 + 20 / 700), 2595 * np.log10(1 + 4000 / 700)
    hand_centers = [700 * (10 ** ((mel_lo + (i + 1) * (mel_hi - mel_lo) / 24) / 2595) - 1) for i in range(23)]
    bin_width = 8000 / 256
    assert np.all(np.abs(peaks * bin_width - np.array(hand_centers)) <= bin_width)


def test_mel_filterbank_rejects_bad_edges():
    with pytest.raises(ContractViolation):
        dsp.mel_filterbank(23, 256, 8000, 3000.0, 2000.0)
    with pytest.raises(ContractViolation):
        dsp.mel_filterbank(120, 64, 8000, 20.0, 4000.0)


def _reference_mfcc(samples, cfg):
    frames = np.array([
        samples[start:start + cfg.win_samples]
        for start in range(0, len(samples) - cfg.win_samples + 1, cfg.hop_samples)
    ])
    spectrum = np.fft.rfft(frames * np.hamming(cfg.win_samples), n=cfg.n_fft)
    power = np.abs(spectrum) ** 2
    bank = dsp.mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, cfg.upper_edge)
    log_mel = np.log(np.maximum(power @ bank.T, cfg.log_floor))
    return scipy.fft.dct(log_mel, type=2, norm="ortho", axis=1)[:, :cfg.n_ceps]


def test_mfcc_matches_per_block_reference(rng):
    samples = rng.uniform(-0.5, 0.5, 4000)
    features = dsp.mfcc(dsp.AudioClip(samples)).values
    assert features.shape == (48, 29)
    assert np.max(np.abs(features - _reference_mfcc(samples, dsp.PERCEPTUAL_MFCC))) <= 1e-8


def test_mfcc_matches_reference_on_random_clips(rng):
    cfg = dsp.PERCEPTUAL_MFCC
    for _ in range(100):
        length = cfg.win_samples + cfg.hop_samples * int(rng.integers(0, 40)) + int(rng.integers(cfg.hop_samples))
        samples = rng.uniform(-1, 1, length) * rng.uniform(1e-3, 1.0)
        features = dsp.mfcc(dsp.AudioClip(samples), cfg).values
        assert np.max(np.abs(features - _reference_mfcc(samples, cfg))) <= 1e-8


def test_mfcc_gain_only_moves_c0(rng):
    samples = rng.uniform(-0.4, 0.4, 2000)
    plain = dsp.mfcc(dsp.AudioClip(samples)).values
    louder = dsp.mfcc(dsp.AudioClip(2 * samples)).values
    np.testing.assert_allclose(louder[:, 1:], plain[:, 1:], atol=1e-9)
    shift = np.log(4.0) * np.sqrt(dsp.PERCEPTUAL_MFCC.n_mels)
    np.testing.assert_allclose(louder[:, 0] - plain[:, 0], shift, atol=1e-9)


def test_mfcc_of_silence_is_finite_and_constant():
    features = dsp.mfcc(dsp.AudioClip(np.zeros(1600))).values
    assert np.all(np.isfinite(features))
    assert np.all(features == features[0])


def test_mfcc_with_log_energy_and_cmn(rng):
    cfg = dsp.with_overrides(dsp.CLASSIFIER_MFCC, vad=False)
    features = dsp.mfcc(dsp.AudioClip(rng.uniform(-0.5, 0.5, 8000)), cfg)
    assert features.values.shape == (98, 30)
    np.testing.assert_allclose(features.values.mean(axis=0), 0.0, atol=1e-12)
    assert features.frame_times[0] == pytest.approx(0.0125)


def test_mfcc_tensor_gradient(gradcheck, rng):
    cfg = dsp.with_overrides(dsp.PERCEPTUAL_MFCC, n_mels=8, n_ceps=6, win_len=0.004, hop=0.002, n_fft=32)
    weights = rng.standard_normal((4, 6))
    loss = lambda wave: tc.reduce_sum(dsp.mfcc_tensor(wave, cfg) * weights)
    assert gradcheck(loss, rng.uniform(-0.5, 0.5, 80)) <= 1e-4


def test_mfcc_config_validation():
    with pytest.raises(ContractViolation):
        dsp.with_overrides(dsp.PERCEPTUAL_MFCC, n_ceps=40)
    with pytest.raises(ContractViolation):
        dsp.with_overrides(dsp.PERCEPTUAL_MFCC, n_fft=128)
    with pytest.raises(ContractViolation):
        dsp.with_overrides(dsp.PERCEPTUAL_MFCC, cmn_window=0)


def test_mfcc_rejects_short_clip():
    with pytest.raises(ContractViolation):
        dsp.mfcc(dsp.AudioClip(np.zeros(100)))


def test_sliding_cmn_cases(rng):
    features = rng.standard_normal((20, 3))
    np.testing.assert_allclose(dsp.sliding_cmn(features, 50).mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(dsp.sliding_cmn(features, 20), features - features.mean(axis=0), atol=1e-12)
    assert np.max(np.abs(dsp.sliding_cmn(features, 1))) <= 1e-12
    constant = np.tile([1.0, -2.0, 3.0], (20, 1))
    assert np.max(np.abs(dsp.sliding_cmn(constant, 5))) <= 1e-12
    with pytest.raises(ContractViolation):
        dsp.sliding_cmn(features, 0)


def test_sliding_cmn_tensor_matches_array(rng):
    features = rng.standard_normal((15, 4))
    np.testing.assert_allclose(dsp.sliding_cmn(tc.Tensor(features), 5).values, dsp.sliding_cmn(features, 5))


def _tone(seconds, amplitude=0.5):
    t = np.arange(int(seconds * dsp.SAMPLE_RATE)) / dsp.SAMPLE_RATE
    return amplitude * np.sin(2 * np.pi * 440 * t)


def test_vad_keeps_every_frame_of_a_steady_tone():
    mask = dsp.energy_vad_mask(dsp.AudioClip(_tone(1.0)), dsp.CLASSIFIER_MFCC)
    assert mask.keep.all()
    assert not mask.silent


def test_vad_splits_tone_from_silence():
    cfg = dsp.with_overrides(dsp.CLASSIFIER_MFCC, vad_offset=0.0)
    samples = np.concatenate([_tone(0.5), np.zeros(4000)])
    mask = dsp.energy_vad_mask(samples, cfg).keep
    starts = np.arange(mask.shape[0]) * cfg.hop_samples
    np.testing.assert_array_equal(mask, starts < 4000)


def test_vad_flags_silent_clip():
    mask = dsp.energy_vad_mask(np.zeros(8000), dsp.CLASSIFIER_MFCC)
    assert mask.silent
    assert not mask.keep.any()


def test_mfcc_rejects_mismatched_vad_mask(rng):
    with pytest.raises(ContractViolation):
        dsp.mfcc(dsp.AudioClip(rng.uniform(-0.5, 0.5, 8000)), dsp.CLASSIFIER_MFCC, vad_mask=np.ones(5, dtype=bool))
