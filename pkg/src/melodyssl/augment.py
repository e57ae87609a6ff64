"""Random audio effect chains and label-consistent pitch shifting.

Every effect is a small causal filter or waveshaper operating at 8 kHz.
Chains are sampled from a seed, so the same seed always yields the same
chain and the same processed audio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .audio import HOP, SAMPLE_RATE, AudioClip, AudioError, n_frames_for

EFFECT_KINDS = ("low_shelf", "high_shelf", "low_pass", "high_pass", "overdrive", "phaser", "reverb")
INCLUDE_PROB = 0.4
PEAK_TARGET = 0.99

# uniform parameter ranges per effect
PARAM_RANGES = {
    "low_shelf": {"freq": (100.0, 500.0), "gain_db": (-12.0, 12.0)},
    "high_shelf": {"freq": (1500.0, 3500.0), "gain_db": (-12.0, 12.0)},
    "low_pass": {"freq": (1000.0, 3500.0)},
    "high_pass": {"freq": (40.0, 400.0)},
    "overdrive": {"gain_db": (5.0, 20.0)},
    "phaser": {"rate_hz": (0.1, 2.0)},
    "reverb": {"feedback": (0.6, 0.8), "wet": (0.1, 0.5)},
}

COMB_MS = (29.7, 37.1, 41.1, 43.7)
ALLPASS_MS = (5.0, 1.7)
ALLPASS_GAIN = 0.7
PHASER_STAGES = 4
PHASER_BAND = (200.0, 2000.0)
PHASER_BLOCK = 64


@dataclass
class EffectChain:
    effects: list = field(default_factory=list)  # [(kind, {param: value}), ...]
    seed: int = 0

    def kinds(self):
        return [k for k, _ in self.effects]

    def describe(self) -> str:
        lines = ["seed = %d" % self.seed]
        for kind, params in self.effects:
            args = ", ".join("%s=%.6g" % kv for kv in sorted(params.items()))
            lines.append("%s(%s)" % (kind, args))
        return "\n".join(lines) + "\n"


def raa_sample(rng_seed: int) -> EffectChain:
    """Include each effect with probability 0.4, parameters uniform in range.

    Parameters are drawn for every effect whether or not it is kept, so the
    values of one effect do not depend on which others were included.
    """
    rng = np.random.default_rng(int(rng_seed))
    effects = []
    for kind in EFFECT_KINDS:
        keep = rng.random() < INCLUDE_PROB
        params = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in PARAM_RANGES[kind].items()}
        if keep:
            effects.append((kind, params))
    return EffectChain(effects, int(rng_seed))


def validate_chain(chain: EffectChain) -> None:
    for kind, params in chain.effects:
        if kind not in PARAM_RANGES:
            raise ValueError("unknown effect %r" % kind)
        for name, (lo, hi) in PARAM_RANGES[kind].items():
            if name not in params:
                raise ValueError("%s is missing parameter %r" % (kind, name))
            if not lo <= params[name] <= hi:
                raise ValueError("%s.%s=%g outside [%g, %g]" % (kind, name, params[name], lo, hi))


# ---------------------------------------------------------------------------
# individual effects (x: float64 mono at 8 kHz)

def shelf_coefficients(kind: str, freq: float, gain_db: float, fs: int = SAMPLE_RATE):
    """Audio-EQ-cookbook shelving biquad with slope 1; returns normalised (b, a)."""
    A = 10.0 ** (gain_db / 40.0)
    w0 = 2 * np.pi * freq / fs
    cw, sw = np.cos(w0), np.sin(w0)
    alpha = sw / 2 * np.sqrt(2.0)
    k = 2 * np.sqrt(A) * alpha
    if kind == "low_shelf":
        b = [A * ((A + 1) - (A - 1) * cw + k), 2 * A * ((A - 1) - (A + 1) * cw),
             A * ((A + 1) - (A - 1) * cw - k)]
        a = [(A + 1) + (A - 1) * cw + k, -2 * ((A - 1) + (A + 1) * cw),
             (A + 1) + (A - 1) * cw - k]
    else:
        b = [A * ((A + 1) + (A - 1) * cw + k), -2 * A * ((A - 1) + (A + 1) * cw),
             A * ((A + 1) + (A - 1) * cw - k)]
        a = [(A + 1) - (A - 1) * cw + k, 2 * ((A - 1) - (A + 1) * cw),
             (A + 1) - (A - 1) * cw - k]
    b, a = np.array(b), np.array(a)
    return b / a[0], a / a[0]


def shelf(x, kind, freq, gain_db):
    b, a = shelf_coefficients(kind, freq, gain_db)
    return scipy.signal.lfilter(b, a, x)


def butter2(x, kind, freq):
    b, a = scipy.signal.butter(2, freq, btype="lowpass" if kind == "low_pass" else "highpass",
                               fs=SAMPLE_RATE)
    return scipy.signal.lfilter(b, a, x)


def overdrive(x, gain_db):
    g = 10.0 ** (gain_db / 20.0)
    return np.tanh(g * x) / np.tanh(g)


def phaser(x, rate_hz, fs=SAMPLE_RATE):
    """Four first-order all-passes swept log-uniformly over 200-2000 Hz, mixed 50/50 with dry.

    The break frequency is held constant over 64-sample (8 ms) blocks; stage state
    (previous input and output) is carried across blocks exactly.
    """
    n = x.size
    lo, hi = PHASER_BAND
    starts = np.arange(0, n, PHASER_BLOCK)
    t = (starts + PHASER_BLOCK / 2) / fs
    fb = lo * (hi / lo) ** (0.5 - 0.5 * np.cos(2 * np.pi * rate_hz * t))
    tn = np.tan(np.pi * fb / fs)
    coef = (tn - 1) / (tn + 1)
    y = np.asarray(x, dtype=np.float64).copy()
    for _ in range(PHASER_STAGES):
        out = np.empty(n)
        xp = yp = 0.0
        for s, c in zip(starts, coef):
            seg = y[s:s + PHASER_BLOCK]
            # y[n] = c x[n] + x[n-1] - c y[n-1]
            zi = [xp - c * yp]
            out[s:s + seg.size], _ = scipy.signal.lfilter([c, 1.0], [1.0, c], seg, zi=zi)
            xp, yp = seg[-1], out[s + seg.size - 1]
        y = out
    return 0.5 * x + 0.5 * y


def comb(x, d: int, g: float) -> np.ndarray:
    """Feedback comb y[n] = x[n-d] + g*y[n-d], computed one d-sample block at a time."""
    n = x.size
    y = np.zeros(n + d)
    xp = np.concatenate([np.zeros(d), x])
    for s in range(d, n + d, d):
        e = min(s + d, n + d)
        y[s:e] = xp[s - d:e - d] + g * y[s - d:e - d]
    return y[d:]


def reverb(x, feedback, wet, fs=SAMPLE_RATE):
    """Schroeder reverberator: four parallel combs into two series all-passes."""
    x = np.asarray(x, dtype=np.float64)
    combs = np.zeros_like(x)
    for ms in COMB_MS:
        combs += comb(x, int(round(ms * fs / 1000.0)), feedback)
    y = combs / len(COMB_MS)
    for ms in ALLPASS_MS:
        d = int(round(ms * fs / 1000.0))
        b = np.zeros(d + 1)
        b[0], b[d] = -ALLPASS_GAIN, 1.0
        a = np.zeros(d + 1)
        a[0], a[d] = 1.0, -ALLPASS_GAIN
        y = scipy.signal.lfilter(b, a, y)
    return (1 - wet) * x + wet * y


def apply_effect(x, kind, params):
    if kind in ("low_shelf", "high_shelf"):
        return shelf(x, kind, params["freq"], params["gain_db"])
    if kind in ("low_pass", "high_pass"):
        return butter2(x, kind, params["freq"])
    if kind == "overdrive":
        return overdrive(x, params["gain_db"])
    if kind == "phaser":
        return phaser(x, params["rate_hz"])
    if kind == "reverb":
        return reverb(x, params["feedback"], params["wet"])
    raise ValueError("unknown effect %r" % kind)


def apply_chain(clip: AudioClip, chain: EffectChain) -> AudioClip:
    """Run the effects in order, then rescale to peak 0.99 if the result is louder.

    An empty chain returns an exact copy of the input.
    """
    if clip.sample_rate != SAMPLE_RATE or clip.channels != 1:
        raise AudioError("apply_chain expects 8 kHz mono audio")
    if not chain.effects:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    y = np.asarray(clip.samples, dtype=np.float64)
    for kind, params in chain.effects:
        y = apply_effect(y, kind, params)
    peak = np.max(np.abs(y))
    if peak > PEAK_TARGET:
        y = y * (PEAK_TARGET / peak)
    return AudioClip(y, SAMPLE_RATE)


def augment_samples(x, seed: int) -> np.ndarray:
    """Shortcut used by the trainer: sample a chain from ``seed`` and apply it."""
    return apply_chain(AudioClip(x, SAMPLE_RATE), raa_sample(seed)).samples


# ---------------------------------------------------------------------------
# pitch shift

MAX_SHIFT = 12


def regrid_contour(contour, factor: float, n_frames: int) -> np.ndarray:
    """Contour whose frame j describes time ``j * 0.01 / factor`` of the original.

    Voiced-voiced neighbours are interpolated in log frequency; otherwise the
    nearest original frame is used, so voicing boundaries move with time.
    """
    c = np.asarray(contour, dtype=np.float64)
    n = c.size
    pos = np.arange(n_frames) / factor
    lo = np.clip(np.floor(pos).astype(int), 0, n - 1)
    hi = np.clip(lo + 1, 0, n - 1)
    frac = np.clip(pos - lo, 0.0, 1.0)
    near = np.clip(np.floor(pos + 0.5).astype(int), 0, n - 1)
    out = c[near].copy()
    both = (c[lo] > 0) & (c[hi] > 0) & (c[near] > 0)
    lf = (1 - frac[both]) * np.log2(c[lo][both]) + frac[both] * np.log2(c[hi][both])
    out[both] = 2.0 ** lf
    return out


def pitch_shift_pair(clip: AudioClip, contour, semitones: int):
    """Shift audio and its f0 labels together by resampling.

    The audio is resampled by r = 2^(-s/12), so duration scales by r and
    pitch by 1/r. Returns ``(clip, contour)`` with the contour on the new
    10 ms grid (length ``ceil(new_samples / 80)``).
    """
    s = int(semitones)
    if s != semitones or s == 0 or abs(s) > MAX_SHIFT:
        raise ValueError("semitones must be a non-zero integer with |s| <= %d" % MAX_SHIFT)
    if clip.sample_rate != SAMPLE_RATE or clip.channels != 1:
        raise AudioError("pitch_shift_pair expects 8 kHz mono audio")
    r = 2.0 ** (-s / 12.0)
    n_new = max(1, int(round(len(clip) * r)))
    y = scipy.signal.resample(np.asarray(clip.samples, dtype=np.float64), n_new)
    c = regrid_contour(contour, r, n_frames_for(n_new)) * 2.0 ** (s / 12.0)
    return AudioClip(y, SAMPLE_RATE), c
