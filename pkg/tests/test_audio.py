import numpy as np
import pytest
import scipy.io.wavfile
from hypothesis import given, settings, strategies as st

from melodyssl import audio

SR = audio.SAMPLE_RATE


def test_load_wav_silence(tmp_path):
    scipy.io.wavfile.write(tmp_path / "s.wav", SR, np.zeros(SR, dtype=np.int16))
    clip = audio.load_wav(tmp_path / "s.wav")
    assert clip.sample_rate == SR and len(clip) == SR and not clip.samples.any()


def test_load_wav_full_scale(tmp_path):
    scipy.io.wavfile.write(tmp_path / "q.wav", SR, np.full(100, 32767, dtype=np.int16))
    clip = audio.load_wav(tmp_path / "q.wav")
    assert np.all(np.abs(clip.samples - 1.0) <= 1 / 32768)


def test_load_wav_stereo_and_float(tmp_path):
    data = np.stack([np.linspace(-0.5, 0.5, 50), np.linspace(0.5, -0.5, 50)], 1).astype(np.float32)
    scipy.io.wavfile.write(tmp_path / "st.wav", 16000, data)
    clip = audio.load_wav(tmp_path / "st.wav")
    assert clip.channels == 2 and np.array_equal(clip.samples, data.astype(np.float64))


def test_load_wav_errors(tmp_path):
    with pytest.raises(audio.AudioError):
        audio.load_wav(tmp_path / "missing.wav")
    scipy.io.wavfile.write(tmp_path / "i32.wav", SR, np.zeros(10, dtype=np.int32))
    with pytest.raises(audio.AudioError):
        audio.load_wav(tmp_path / "i32.wav")
    scipy.io.wavfile.write(tmp_path / "empty.wav", SR, np.zeros(0, dtype=np.int16))
    with pytest.raises(audio.AudioError):
        audio.load_wav(tmp_path / "empty.wav")


def test_to_mono_8k_length_and_cancel():
    assert len(audio.to_mono_8k(audio.AudioClip(np.zeros(16000), 16000))) == 8000
    x = np.sin(np.arange(16000) * 0.05)
    out = audio.to_mono_8k(audio.AudioClip(np.stack([x, -x], 1), 16000))
    assert out.channels == 1 and not out.samples.any()


def test_to_mono_8k_antialias():
    t = np.arange(16000) / 16000
    x = np.sin(2 * np.pi * 6000 * t)
    y = audio.to_mono_8k(audio.AudioClip(x, 16000)).samples
    assert np.sqrt(np.mean(y ** 2)) < 0.05 * np.sqrt(np.mean(x ** 2))


def test_to_mono_8k_rejects_low_rate():
    with pytest.raises(audio.AudioError):
        audio.to_mono_8k(audio.AudioClip(np.zeros(100), 4000))


def test_to_mono_8k_idempotent():
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    assert np.array_equal(audio.to_mono_8k(audio.AudioClip(x, SR)).samples, x)


def test_stft_frame_count_and_silence():
    spec = audio.stft_logmag(audio.AudioClip(np.zeros(8000), SR))
    assert spec.n_frames == 100 and spec.hop_seconds == 0.01
    assert spec.values.shape == (100, 513)
    assert np.all(spec.values == np.float32(np.log(1e-7)))


def test_stft_sine_peak_matches_direct_dft():
    k = 55
    n = np.arange(8000)
    x = np.sin(2 * np.pi * k * n / 1024)
    spec = audio.stft_logmag(audio.AudioClip(x, SR)).values
    interior = spec[7:-7]
    assert np.all(np.argmax(interior, axis=1) == k)
    # direct DFT of frame 20 (centred on sample 1600), Hann window
    t = 20
    seg = x[t * 80 - 512:t * 80 + 512]
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(1024) / 1024)
    m = np.arange(1024)
    dft = np.abs([np.sum(seg * w * np.exp(-2j * np.pi * b * m / 1024)) for b in range(513)])
    assert np.allclose(spec[t], np.log(dft + 1e-7), atol=1e-4)


def test_stft_translation_consistent():
    x = np.random.default_rng(1).standard_normal(4000) * 0.1
    a = audio.stft_logmag(audio.AudioClip(x[80:], SR)).values
    b = audio.stft_logmag(audio.AudioClip(x, SR)).values
    assert np.allclose(a[7:30], b[8:31], atol=1e-5)


def test_make_patches_examples():
    spec = audio.Spectrogram(np.arange(100, dtype=np.float32)[:, None] * np.ones(513, np.float32))
    assert len(audio.make_patches(spec, 1)) == 100
    p31 = audio.make_patches(spec, 31)
    assert [p.center_frame_index for p in p31] == [0, 31, 62, 93]
    first = p31[0].values[:, 0]
    assert list(first) == list(range(15, 0, -1)) + list(range(16))
    assert all(p.values.shape == (31, 513) for p in p31)


def test_make_patches_normalised():
    values = np.random.default_rng(2).standard_normal((40, 513)).astype(np.float32)
    mean, std = values.mean(0), values.std(0)
    p = audio.make_patches(audio.Spectrogram(values), 31, norm=(mean, std))
    assert np.allclose(p[1].values[15], (values[31] - mean) / std, atol=1e-6)


@given(st.integers(1, 200))
def test_stride_one_gives_one_patch_per_frame(n):
    spec = audio.Spectrogram(np.zeros((n, 513), np.float32))
    assert len(audio.make_patches(spec, 1)) == n


@given(st.integers(1, 3000))
@settings(max_examples=30, deadline=None)
def test_frame_count_rule(n):
    assert audio.stft_logmag(audio.AudioClip(np.zeros(n), SR)).n_frames == -(-n // 80)
