import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings, strategies as st

from melodyssl import audio, augment, pitch, synth
from oracles import autocorr_f0

SR = 8000


def _sine(freq, n=8000, amp=1.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / SR)


def _rms(x):
    return np.sqrt(np.mean(np.asarray(x) ** 2))


def test_raa_deterministic_and_in_range():
    assert augment.raa_sample(42) == augment.raa_sample(42)
    for seed in range(200):
        augment.validate_chain(augment.raa_sample(seed))


def test_raa_inclusion_statistics():
    counts = np.array([len(augment.raa_sample(s).effects) for s in range(10000)])
    assert abs(counts.mean() - 2.8) <= 0.1
    # binomial zero term 0.6**7 = 0.028; 4 standard errors is about 0.0066
    assert abs(np.mean(counts == 0) - 0.6 ** 7) <= 0.0066


def test_raa_keeps_kind_order():
    for seed in range(100):
        kinds = augment.raa_sample(seed).kinds()
        assert kinds == [k for k in augment.EFFECT_KINDS if k in kinds]


def test_validate_chain_rejects_bad_params():
    with pytest.raises(ValueError):
        augment.validate_chain(augment.EffectChain([("low_pass", {"freq": 500.0})]))
    with pytest.raises(ValueError):
        augment.validate_chain(augment.EffectChain([("flanger", {})]))


def test_empty_chain_is_identity():
    x = _sine(300, amp=0.5)
    out = augment.apply_chain(audio.AudioClip(x, SR), augment.EffectChain([], 1))
    assert np.array_equal(out.samples, x)


def test_low_pass_attenuates_three_khz():
    x = _sine(3000, amp=0.5)
    chain = augment.EffectChain([("low_pass", {"freq": 1000.0})])
    y = augment.apply_chain(audio.AudioClip(x, SR), chain).samples
    assert 20 * np.log10(_rms(y[2000:]) / _rms(x[2000:])) <= -20


def test_overdrive_peak_and_distortion():
    x = _sine(250)
    chain = augment.EffectChain([("overdrive", {"gain_db": 20.0})])
    y = augment.apply_chain(audio.AudioClip(x, SR), chain).samples
    assert np.max(np.abs(y)) <= 0.99
    spec = np.abs(np.fft.rfft(y))  # 250 Hz is bin 250 of an 8000-point DFT
    harmonics = spec[[500, 750, 1000, 1250, 1500]]
    assert np.sqrt(np.sum(harmonics ** 2)) / spec[250] > 0.01


def test_shelf_dc_and_nyquist_gain():
    b, a = augment.shelf_coefficients("low_shelf", 300.0, 9.0)
    assert 20 * np.log10(abs(b.sum() / a.sum())) == pytest.approx(9.0, abs=1e-9)
    alt = np.array([1, -1, 1])
    b, a = augment.shelf_coefficients("high_shelf", 2000.0, -6.0)
    assert 20 * np.log10(abs((b * alt).sum() / (a * alt).sum())) == pytest.approx(-6.0, abs=1e-9)


def test_butterworth_half_power_at_cutoff():
    b, a = scipy.signal.butter(2, 1500.0, fs=SR)
    _, h = scipy.signal.freqz(b, a, worN=[1500.0], fs=SR)
    assert 20 * np.log10(abs(h[0])) == pytest.approx(-3.0103, abs=1e-3)
    x = _sine(1500, n=16000, amp=0.5)
    y = augment.butter2(x, "low_pass", 1500.0)
    assert _rms(y[8000:]) / _rms(x[8000:]) == pytest.approx(abs(h[0]), rel=1e-3)


def test_comb_matches_direct_recursion():
    x = np.random.default_rng(0).standard_normal(3000)
    d, g = 297, 0.7
    a = np.zeros(d + 1)
    a[0], a[d] = 1.0, -g
    b = np.zeros(d + 1)
    b[d] = 1.0
    assert np.allclose(augment.comb(x, d, g), scipy.signal.lfilter(b, a, x), atol=1e-12)


def test_phaser_preserves_energy_roughly():
    x = np.random.default_rng(1).standard_normal(8000) * 0.1
    y = augment.phaser(x, 1.0)
    assert y.shape == x.shape and np.all(np.isfinite(y))
    # all-pass stages keep power; the 50/50 mix can at most keep it
    assert _rms(y) <= _rms(x) * 1.0001


@given(st.integers(0, 2 ** 63 - 1), st.integers(100, 4000))
@settings(max_examples=40, deadline=None)
def test_chain_invariants(seed, n):
    x = np.random.default_rng(seed % 1000).uniform(-1, 1, n)
    clip = audio.AudioClip(x, SR)
    chain = augment.raa_sample(seed)
    a = augment.apply_chain(clip, chain)
    b = augment.apply_chain(clip, chain)
    assert len(a) == n and a.sample_rate == SR and a.channels == 1
    assert np.array_equal(a.samples, b.samples)
    assert np.all(np.isfinite(a.samples))
    if chain.effects:
        assert np.max(np.abs(a.samples)) <= 0.99 + 1e-12


def test_pitch_shift_octave_up():
    clip = synth.render_vocal(np.full(100, 440.0), seed=3)
    shifted, contour = augment.pitch_shift_pair(clip, np.full(100, 440.0), 12)
    f0, _ = autocorr_f0(shifted.samples)
    interior = f0[5:-5]
    assert np.median(np.abs(pitch.cents(interior, 880.0))) <= 10
    assert np.allclose(contour, 880.0)


def test_pitch_shift_lengths_and_unvoiced():
    x = np.random.default_rng(2).uniform(-0.5, 0.5, 8000)
    contour = np.r_[np.zeros(30), np.full(40, 300.0), np.zeros(30)]
    for s in (-2, -1, 1, 2):
        y, c = augment.pitch_shift_pair(audio.AudioClip(x, SR), contour, s)
        assert abs(len(y) - 8000 * 2 ** (-s / 12)) <= 1
        assert c.size == -(-len(y) // 80)
        assert np.all(c[:int(30 * 2 ** (-s / 12)) - 1] == 0)
        assert np.allclose(c[c > 0], 300.0 * 2 ** (s / 12))
    with pytest.raises(ValueError):
        augment.pitch_shift_pair(audio.AudioClip(x, SR), contour, 0)


@given(st.sampled_from([-2, -1, 1, 2]))
@settings(max_examples=4, deadline=None)
def test_pitch_shift_label_alignment(s):
    spec = synth.random_song_spec(13)
    c = synth.sample_contour(spec)
    clip = synth.render_vocal(c, 13, spec.n_samples)
    y, c2 = augment.pitch_shift_pair(clip, c, s)
    f0, _ = autocorr_f0(y.samples)
    v = c2 > 0
    ok = np.abs(pitch.cents(np.maximum(f0[v], 1e-9), c2[v])) <= 25
    assert ok.mean() >= 0.9
