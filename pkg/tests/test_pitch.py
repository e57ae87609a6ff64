import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from melodyssl import pitch


def test_codec_anchor_points():
    assert pitch.freq_to_label(82.4) == 1
    assert pitch.freq_to_label(1975.7) == 441
    assert pitch.freq_to_label(0.0) == 0
    assert pitch.freq_to_label(164.8) == 97
    assert round(96 * math.log2(1975.7 / 82.4)) == 440


def test_label_to_freq_closed_form():
    assert pitch.label_to_freq(0) == 0.0
    assert pitch.label_to_freq(1) == pytest.approx(82.4, abs=1e-12)
    assert pitch.label_to_freq(441) == pytest.approx(82.4 * 2 ** (440 / 96), rel=1e-12)


@pytest.mark.xfail(reason="closed form gives 1975.37 Hz, 0.33 Hz from the rounded B6 endpoint",
                   strict=True)
def test_label_441_within_tenth_hz_of_b6():
    assert abs(pitch.label_to_freq(441) - 1975.7) <= 0.1


def test_roundtrip_all_labels():
    idx = np.arange(pitch.N_CLASSES)
    assert np.array_equal(pitch.freq_to_label(pitch.label_to_freq(idx)), idx)


def test_invalid_frequencies_rejected():
    for bad in (-1.0, np.nan, np.inf):
        with pytest.raises(ValueError):
            pitch.freq_to_label(bad)
    with pytest.raises(ValueError):
        pitch.label_to_freq(442)


def test_contour_to_labels():
    assert np.all(pitch.contour_to_labels(np.zeros(20)).labels == 0)
    seq = pitch.contour_to_labels(np.full(5, 440.0))
    expected = 1 + round(96 * math.log2(440 / 82.4))
    assert np.all(seq.labels == expected) and expected == pitch.freq_to_label(440.0)
    seq = pitch.contour_to_labels(np.array([3000.0, 440.0, 0.0]))
    assert seq.labels[0] == 441 and seq.n_clamped == 1


def test_shift_labels():
    assert pitch.shift_labels([97], 1).labels[0] == 105
    assert pitch.shift_labels([0], 3).labels[0] == 0
    out = pitch.shift_labels([440], 1)
    assert out.labels[0] == 441 and out.n_clamped == 1
    with pytest.raises(ValueError):
        pitch.shift_labels([10], 5)


def _round_half_away(x):
    return math.floor(x + 0.5) if x >= 0 else -math.floor(-x + 0.5)


@given(st.floats(min_value=1.0, max_value=5000.0))
def test_freq_to_label_matches_scalar_oracle(f):
    steps = _round_half_away(96 * math.log2(f / 82.4))
    assert pitch.freq_to_label(f) == min(max(1 + steps, 1), 441)


@given(st.floats(min_value=82.4, max_value=1975.0), st.floats(min_value=82.4, max_value=1975.0))
def test_monotone(f1, f2):
    lo, hi = sorted((f1, f2))
    assert pitch.freq_to_label(lo) <= pitch.freq_to_label(hi)


@given(st.floats(min_value=82.4, max_value=987.0))
def test_octave_structure(f):
    a, b = pitch.freq_to_label(f), pitch.freq_to_label(2 * f)
    if 1 < a and b < 441:
        assert b == a + 96


@given(st.lists(st.integers(0, 441), min_size=1, max_size=30), st.integers(-4, 4))
def test_shift_inverse_without_clamp(labels, s):
    up = pitch.shift_labels(labels, s)
    if up.n_clamped == 0:
        assert np.array_equal(pitch.shift_labels(up.labels, -s).labels, labels)


@given(st.lists(st.one_of(st.just(0.0), st.floats(min_value=1e-3, max_value=5000.0)),
                min_size=0, max_size=40))
def test_f0_text_roundtrip_six_decimals(freqs):
    values = np.round(np.asarray(freqs, dtype=np.float64), 6)
    times, back = pitch.parse_f0(pitch.format_f0(values))
    assert np.array_equal(back, values)
    assert np.array_equal(times, np.round(np.arange(len(values)) * 0.01, 6))


def test_f0_file_roundtrip(tmp_path):
    values = np.array([0.0, 220.123456, 440.0, 1975.366])
    pitch.write_f0(tmp_path / "a.f0", values)
    assert np.array_equal(pitch.read_f0(tmp_path / "a.f0"), values)
    assert (tmp_path / "a.f0").read_text().splitlines()[1] == "0.010000\t220.123456"
