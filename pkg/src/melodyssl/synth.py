"""Synthetic songs with exactly known vocal f0.

Each song starts from a generated pitch contour (note sequence, exponential
portamento, sinusoidal vibrato, unvoiced gaps). The contour is rendered with
an additive 1/h harmonic voice and mixed over an accompaniment of sawtooth
chord pads, a pink-noise bed and percussive clicks. All of it is a function
of the seed, so a corpus can be regenerated byte for byte.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np
import scipy.signal

from . import pitch
from .audio import HOP, SAMPLE_RATE, AudioClip, n_frames_for, write_wav
from .seeding import derive_seed

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
MIDI_LOW = 45   # E2 + 5 semitones
MIDI_HIGH = 90  # B6 - 5 semitones
HARMONIC_CEILING = 3600.0
MAX_HARMONICS = 12
FADE_SAMPLES = 80
ACCOMP_PEAK = 0.5
PEAK_LIMIT = 0.99


def midi_to_hz(m):
    return 440.0 * 2.0 ** ((np.asarray(m, dtype=np.float64) - 69.0) / 12.0)


@dataclass(frozen=True)
class SongSpec:
    seed: int
    kind: str = "vocal"
    key: int = 57
    tempo: float = 100.0
    duration_seconds: float = 8.0
    vibrato_rate: float = 5.5
    vibrato_depth: float = 30.0
    portamento_ms: float = 50.0
    voicing_density: float = 0.7
    snr_db: float = 0.0

    def __post_init__(self):
        checks = [
            (self.kind in ("vocal", "instrumental"), "kind"),
            (52 <= self.key <= 64, "key"),
            (60 <= self.tempo <= 140, "tempo"),
            (6 <= self.duration_seconds <= 12, "duration_seconds"),
            (4 <= self.vibrato_rate <= 7, "vibrato_rate"),
            (10 <= self.vibrato_depth <= 60, "vibrato_depth"),
            (30 <= self.portamento_ms <= 80, "portamento_ms"),
            (0.5 <= self.voicing_density <= 0.9, "voicing_density"),
            (-5 <= self.snr_db <= 10, "snr_db"),
        ]
        bad = [name for ok, name in checks if not ok]
        if bad:
            raise ValueError("SongSpec fields out of range: %s" % ", ".join(bad))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_seconds * SAMPLE_RATE))

    @property
    def n_frames(self) -> int:
        return n_frames_for(self.n_samples)


def random_song_spec(seed: int, kind: str = "vocal") -> SongSpec:
    rng = np.random.default_rng(derive_seed(seed, "song-spec"))
    return SongSpec(
        seed=int(seed), kind=kind,
        key=int(rng.integers(52, 65)),
        tempo=float(rng.uniform(60, 140)),
        duration_seconds=float(rng.uniform(6, 12)),
        vibrato_rate=float(rng.uniform(4, 7)),
        vibrato_depth=float(rng.uniform(10, 60)),
        portamento_ms=float(rng.uniform(30, 80)),
        voicing_density=float(rng.uniform(0.5, 0.9)),
        snr_db=float(rng.uniform(-5, 10)),
    )


# ---------------------------------------------------------------------------
# contour

@dataclass
class ContourDetails:
    freqs: np.ndarray        # Hz per 10 ms frame, 0 = unvoiced
    note_midi: np.ndarray    # nominal note per frame (nan when unvoiced)
    sustained: np.ndarray    # True on frames after the portamento glide


def _split(total: int, parts: int, minimum: int, rng) -> np.ndarray:
    """Random positive integer partition of ``total`` with every part >= minimum."""
    if parts == 0:
        return np.zeros(0, dtype=int)
    spare = total - parts * minimum
    w = rng.dirichlet(np.full(parts, 3.0))
    extra = np.floor(w * spare).astype(int)
    extra[: spare - extra.sum()] += 1
    return extra + minimum


def _scale_notes(key: int) -> np.ndarray:
    notes = [m for m in range(key - 5, key + 13) if (m - key) % 12 in MAJOR_SCALE]
    return np.array([m for m in notes if MIDI_LOW <= m <= MIDI_HIGH])


def contour_details(spec: SongSpec) -> ContourDetails:
    n = spec.n_frames
    freqs = np.zeros(n)
    note_midi = np.full(n, np.nan)
    sustained = np.zeros(n, dtype=bool)
    if spec.kind == "instrumental":
        return ContourDetails(freqs, note_midi, sustained)
    rng = np.random.default_rng(derive_seed(spec.seed, "contour"))
    n_voiced = int(round(spec.voicing_density * n))
    n_gap = n - n_voiced
    n_phrases = max(1, int(round(n_voiced / rng.uniform(120, 280))))
    n_phrases = min(n_phrases, n_voiced // 20, max(1, (n_gap - 2) // 3 + 1))
    n_phrases = max(n_phrases, 1)
    phrase_len = _split(n_voiced, n_phrases, min(20, n_voiced // n_phrases), rng)
    # interior gaps at least 3 frames; leading/trailing may be empty
    gaps = _split(n_gap, n_phrases + 1, 0, rng)
    interior = gaps[1:-1]
    short = np.maximum(0, 3 - interior)
    if short.sum() and gaps[0] + gaps[-1] >= short.sum():
        interior += short
        take = short.sum()
        lead = min(gaps[0], take)
        gaps[0] -= lead
        gaps[-1] -= take - lead
    scale = _scale_notes(spec.key)
    beat = 60.0 / spec.tempo
    glide = spec.portamento_ms / 1000.0
    tau = glide / 3.0
    depth, rate = spec.vibrato_depth, spec.vibrato_rate
    pos = int(gaps[0])
    idx = int(rng.integers(len(scale)))
    for p in range(n_phrases):
        start, stop = pos, pos + int(phrase_len[p])
        t_frames = np.arange(start, stop)
        cents = np.zeros(stop - start)
        f = 0
        prev_cents = None
        while f < stop - start:
            dur = int(round(rng.choice([0.5, 1.0, 1.0, 1.5, 2.0]) * beat * 100))
            seg = slice(f, min(f + dur, stop - start))
            t = (np.arange(seg.start, seg.stop) - f) * pitch.HOP_SECONDS
            target = 100.0 * scale[idx]
            cur = np.full(t.size, target)
            sus = np.ones(t.size, dtype=bool)
            if prev_cents is not None:
                g = t < glide
                shape = (1 - np.exp(-t[g] / tau)) / (1 - np.exp(-glide / tau))
                cur[g] = prev_cents + (target - prev_cents) * shape
                sus = ~g
            ts = t - (glide if prev_cents is not None else 0.0)
            cur[sus] += depth * np.sin(2 * np.pi * rate * ts[sus])
            cents[seg] = cur
            note_midi[start + seg.start:start + seg.stop] = scale[idx]
            sustained[start + seg.start:start + seg.stop] = sus
            prev_cents = cur[-1]
            f = seg.stop
            step = rng.choice([-2, -1, -1, 0, 1, 1, 2])
            idx = int(np.clip(idx + step, 0, len(scale) - 1))
        freqs[t_frames] = midi_to_hz(cents / 100.0)
        pos = stop + (int(interior[p]) if p < n_phrases - 1 else 0)
    return ContourDetails(freqs, note_midi, sustained)


def sample_contour(spec: SongSpec) -> np.ndarray:
    """Exact f0 contour on the 10 ms grid (all zeros for instrumentals)."""
    return contour_details(spec).freqs


# ---------------------------------------------------------------------------
# rendering

def _sample_f0(contour: np.ndarray, n_samples: int):
    """Per-sample f0 (log-linear between voiced frames) and voicing mask."""
    contour = np.asarray(contour, dtype=np.float64)
    n = contour.size
    pos = np.arange(n_samples) / HOP
    nearest = np.clip(np.floor(pos + 0.5).astype(int), 0, n - 1)
    voiced = contour[nearest] > 0
    lo = np.clip(np.floor(pos).astype(int), 0, n - 1)
    hi = np.clip(lo + 1, 0, n - 1)
    frac = pos - np.floor(pos)
    c_lo, c_hi = contour[lo], contour[hi]
    both = (c_lo > 0) & (c_hi > 0)
    f = np.where(contour[nearest] > 0, contour[nearest], 0.0)
    lf = np.log2(np.where(both, c_lo, 1.0)) * (1 - frac) + np.log2(np.where(both, c_hi, 1.0)) * frac
    f = np.where(both, 2.0 ** lf, f)
    # hold the edge value for samples of a voiced run beyond its last (first) centre
    edge = voiced & ~both
    f = np.where(edge & (c_lo > 0), c_lo, f)
    f = np.where(edge & (c_lo <= 0) & (c_hi > 0), c_hi, f)
    return np.where(voiced, f, 0.0), voiced


def _fade_envelope(voiced: np.ndarray) -> np.ndarray:
    env = voiced.astype(np.float64)
    v = np.concatenate([[False], voiced, [False]]).astype(np.int8)
    starts = np.flatnonzero(np.diff(v) == 1)
    stops = np.flatnonzero(np.diff(v) == -1)
    for a, b in zip(starts, stops):
        L = min(FADE_SAMPLES, (b - a) // 2)
        if L < 1:
            continue
        ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(L) + 0.5) / L)
        env[a:a + L] = ramp
        env[b - L:b] = ramp[::-1]
    return env


def render_vocal(contour, seed: int, n_samples: int | None = None) -> AudioClip:
    """Additive 1/h harmonic voice following ``contour`` (10 ms grid)."""
    contour = np.asarray(contour, dtype=np.float64)
    if contour.size == 0:
        raise ValueError("empty contour")
    if np.any(contour >= SAMPLE_RATE / 2):
        raise ValueError("contour reaches %g Hz; cannot render below Nyquist" % contour.max())
    if n_samples is None:
        n_samples = contour.size * HOP
    f0, voiced = _sample_f0(contour, n_samples)
    out = np.zeros(n_samples)
    if not voiced.any():
        return AudioClip(out, SAMPLE_RATE)
    rng = np.random.default_rng(derive_seed(seed, "vocal-phase"))
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    n_harm = np.minimum(MAX_HARMONICS, np.floor(HARMONIC_CEILING / np.maximum(f0, 1e-9)))
    offsets = rng.uniform(0, 2 * np.pi, MAX_HARMONICS)
    for h in range(1, MAX_HARMONICS + 1):
        on = voiced & (n_harm >= h)
        if on.any():
            out[on] += np.sin(h * phase[on] + offsets[h - 1]) / h
    out *= _fade_envelope(voiced)
    return AudioClip(out * 0.3, SAMPLE_RATE)


def _sawtooth(freq: float, n: int, rng) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    H = int((SAMPLE_RATE / 2 * 0.975) // freq)
    out = np.zeros(n)
    phase0 = rng.uniform(0, 2 * np.pi)
    for h in range(1, H + 1):
        out += np.sin(2 * np.pi * h * freq * t + h * phase0) / h
    return out


def _pink_noise(n: int, rng) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spec[1:] /= np.sqrt(f[1:])
    spec[0] = 0
    x = np.fft.irfft(spec, n)
    return x / (np.sqrt(np.mean(x * x)) + 1e-12)


TRIADS = {1: (0, 4, 7), 2: (2, 5, 9), 3: (4, 7, 11), 4: (5, 9, 12), 5: (7, 11, 14), 6: (9, 12, 16)}


def render_accompaniment(spec: SongSpec) -> AudioClip:
    """Chord pads (one diatonic triad per bar), pink noise at -20 dB, clicks on beats."""
    rng = np.random.default_rng(derive_seed(spec.seed, "accompaniment"))
    n = spec.n_samples
    beat = int(round(60.0 / spec.tempo * SAMPLE_RATE))
    bar = 4 * beat
    pads = np.zeros(n)
    fade = int(0.02 * SAMPLE_RATE)
    degree = 1
    root = spec.key - 12
    for start in range(0, n, bar):
        stop = min(n, start + bar)
        seg = np.zeros(stop - start)
        for interval in TRIADS[degree]:
            seg += _sawtooth(midi_to_hz(root + interval), stop - start, rng)
        env = np.ones(stop - start)
        L = min(fade, (stop - start) // 2)
        env[:L] = np.linspace(0, 1, L)
        env[stop - start - L:] = np.linspace(1, 0, L)
        pads[start:stop] += seg * env
        degree = int(rng.choice([1, 2, 3, 4, 5, 6], p=[0.25, 0.1, 0.05, 0.25, 0.25, 0.1]))
    pad_rms = np.sqrt(np.mean(pads ** 2))
    noise = _pink_noise(n, rng) * pad_rms * 10 ** (-20 / 20)
    clicks = np.zeros(n)
    L = int(0.01 * SAMPLE_RATE)
    b, a = scipy.signal.butter(2, 1500, btype="highpass", fs=SAMPLE_RATE)
    for start in range(0, n, beat):
        burst = rng.standard_normal(L) * np.exp(-np.arange(L) / (0.002 * SAMPLE_RATE))
        burst = scipy.signal.lfilter(b, a, burst)
        stop = min(n, start + L)
        clicks[start:stop] += burst[:stop - start]
    clicks *= 1.5 * pad_rms / (np.max(np.abs(clicks)) + 1e-12)
    out = pads + noise + clicks
    out *= ACCOMP_PEAK / np.max(np.abs(out))
    return AudioClip(out, SAMPLE_RATE)


def voiced_mask(vocal: np.ndarray) -> np.ndarray:
    """Samples belonging to 10 ms frames (centred on multiples of 80) where the vocal has energy."""
    v = np.asarray(vocal, dtype=np.float64)
    n = v.size
    frame = (np.arange(n) + HOP // 2) // HOP
    energy = np.bincount(frame, weights=v * v)
    return energy[frame] > 0


def vocal_gain(vocal, accomp, snr_db: float) -> float:
    """Gain putting the vocal ``snr_db`` above the accompaniment over voiced frames."""
    v = np.asarray(vocal, dtype=np.float64)
    a = np.asarray(accomp, dtype=np.float64)
    if not np.any(a):
        raise ValueError("accompaniment has zero energy")
    mask = voiced_mask(v)
    if not mask.any():
        return 0.0
    pv = np.mean(v[mask] ** 2)
    pa = np.mean(a[mask] ** 2)
    if pa == 0:
        pa = np.mean(a ** 2)
    return float(np.sqrt(pa / pv * 10 ** (snr_db / 10)))


def mix_stems(vocal: AudioClip, accomp: AudioClip, snr_db: float):
    """Return ``(mixture, vocal_scaled, accomp_scaled)`` with mixture = sum of stems."""
    v, a = np.asarray(vocal.samples, float), np.asarray(accomp.samples, float)
    if v.shape != a.shape:
        raise ValueError("stems must have equal lengths")
    g = vocal_gain(v, a, snr_db)
    v = v * g
    m = v + a
    peak = np.max(np.abs(m))
    if peak > PEAK_LIMIT:
        s = PEAK_LIMIT / peak
        v, a, m = v * s, a * s, m * s
    return (AudioClip(m, SAMPLE_RATE), AudioClip(v, SAMPLE_RATE), AudioClip(a, SAMPLE_RATE))


def mix(vocal: AudioClip, accomp: AudioClip, snr_db: float) -> AudioClip:
    return mix_stems(vocal, accomp, snr_db)[0]


@dataclass
class RenderedTrack:
    spec: SongSpec
    mixture: AudioClip
    contour: np.ndarray
    vocal_stem: AudioClip
    accomp_stem: AudioClip


def render_track(spec: SongSpec) -> RenderedTrack:
    contour = sample_contour(spec)
    accomp = render_accompaniment(spec)
    if spec.kind == "vocal":
        vocal = render_vocal(contour, spec.seed, spec.n_samples)
    else:
        vocal = AudioClip(np.zeros(spec.n_samples), SAMPLE_RATE)
    mixture, v, a = mix_stems(vocal, accomp, spec.snr_db)
    return RenderedTrack(spec, mixture, contour, v, a)


# ---------------------------------------------------------------------------
# corpus

@dataclass
class ManifestEntry:
    track_id: str
    audio_path: str
    label_path: str | None
    split: str
    kind: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def corpus_plan(n_labeled: int, n_unlabeled: int, n_test: int, n_instrumental: int,
                master_seed: int):
    """(track_id, split, kind, labeled, seed) for every track of a corpus."""
    for name, count in (("n_labeled", n_labeled), ("n_unlabeled", n_unlabeled),
                        ("n_test", n_test), ("n_instrumental", n_instrumental)):
        if int(count) < 0:
            raise ValueError("%s must be >= 0" % name)
    plan = []
    n_val = int(round(0.2 * n_labeled))
    for i in range(n_labeled):
        split = "train" if i < n_labeled - n_val else "val"
        plan.append(("lab_%04d" % i, split, "vocal", True))
    for i in range(n_unlabeled):
        plan.append(("unl_%04d" % i, "train", "vocal", False))
    for i in range(n_instrumental):
        plan.append(("ins_%04d" % i, "train", "instrumental", False))
    for i in range(n_test):
        plan.append(("tst_%04d" % i, "test", "vocal", True))
    return [(tid, split, kind, labeled, derive_seed(master_seed, tid) % (2 ** 63))
            for tid, split, kind, labeled in plan]


def build_corpus(root, n_labeled: int, n_unlabeled: int, n_test: int, n_instrumental: int,
                 master_seed: int, threads: int = 1) -> list:
    """Render a corpus under ``root`` and return its manifest entries.

    Layout: ``audio/<id>.wav`` (float32), ``labels/<id>.f0`` for labeled
    tracks, ``hidden/<id>.f0`` ground truth for unlabeled ones, and
    ``manifest.jsonl``. Instrumental tracks only ever join the unlabeled pool.
    Files are written to a temporary sibling directory that is renamed into
    place at the end.
    """
    root = os.path.abspath(os.fspath(root))
    if os.path.exists(root) and os.listdir(root):
        raise FileExistsError("%s exists and is not empty" % root)
    parent = os.path.dirname(root)
    os.makedirs(parent, exist_ok=True)
    if not os.access(parent, os.W_OK):
        raise PermissionError("%s is not writable" % parent)
    plan = corpus_plan(n_labeled, n_unlabeled, n_test, n_instrumental, master_seed)
    tmp = tempfile.mkdtemp(prefix=".corpus-", dir=parent)
    try:
        for sub in ("audio", "labels", "hidden"):
            os.makedirs(os.path.join(tmp, sub))

        def work(item):
            tid, split, kind, labeled, seed = item
            track = render_track(random_song_spec(seed, kind))
            write_wav(os.path.join(tmp, "audio", tid + ".wav"),
                      AudioClip(track.mixture.samples, SAMPLE_RATE))
            label_dir = "labels" if labeled else "hidden"
            pitch.write_f0(os.path.join(tmp, label_dir, tid + ".f0"), track.contour)
            return ManifestEntry(tid, "audio/%s.wav" % tid,
                                 "labels/%s.f0" % tid if labeled else None, split, kind)

        with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
            entries = list(pool.map(work, plan))
        with open(os.path.join(tmp, "manifest.jsonl"), "w") as fh:
            for e in entries:
                fh.write(e.to_json() + "\n")
        if os.path.exists(root):
            os.rmdir(root)
        os.replace(tmp, root)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return entries


def read_manifest(root) -> list:
    with open(os.path.join(os.fspath(root), "manifest.jsonl")) as fh:
        return [ManifestEntry(**json.loads(line)) for line in fh if line.strip()]


def write_manifest(path, entries) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")
