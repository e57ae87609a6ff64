"""Hz <-> class-index codec for the 442-way pitch label space, plus f0 file I/O.

Index 0 is the non-vocal class. Indices 1..441 are pitch bins spaced 1/8
semitone apart, from E2 (82.4 Hz) up to B6 (about 1975.7 Hz).

F0 contours are plain 1-D arrays of Hz values on a 10 ms grid, 0 meaning
unvoiced. The text format is the usual two-column ``time<TAB>freq`` layout.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

N_CLASSES = 442
N_PITCH_BINS = 441
BINS_PER_SEMITONE = 8
BINS_PER_OCTAVE = 12 * BINS_PER_SEMITONE
F_MIN = 82.4
HOP_SECONDS = 0.01


@dataclass
class LabelSequence:
    labels: np.ndarray
    n_clamped: int = 0


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def freq_to_label(f):
    """Map frequency (Hz, scalar or array) to class indices.

    Positive frequencies outside the E2..B6 range are clamped to the edge
    bins rather than being treated as non-vocal.
    """
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)) or np.any(f < 0):
        raise ValueError("frequencies must be finite and non-negative")
    out = np.zeros(f.shape, dtype=np.int64)
    voiced = f > 0
    steps = _round_half_away(BINS_PER_OCTAVE * np.log2(f[voiced] / F_MIN))
    out[voiced] = np.clip(1 + steps, 1, N_PITCH_BINS).astype(np.int64)
    if out.ndim == 0:
        return int(out)
    return out


def label_to_freq(label):
    label = np.asarray(label)
    if np.any(label < 0) or np.any(label >= N_CLASSES):
        raise ValueError("label index out of range [0, 441]")
    f = F_MIN * 2.0 ** ((label.astype(np.float64) - 1) / BINS_PER_OCTAVE)
    f = np.where(label == 0, 0.0, f)
    if f.ndim == 0:
        return float(f)
    return f


def contour_to_labels(freqs) -> LabelSequence:
    """Element-wise :func:`freq_to_label`, counting clamped voiced frames."""
    freqs = np.asarray(freqs, dtype=np.float64)
    labels = freq_to_label(freqs)
    labels = np.atleast_1d(labels)
    voiced = freqs > 0
    raw = np.zeros_like(freqs)
    raw[voiced] = 1 + _round_half_away(BINS_PER_OCTAVE * np.log2(freqs[voiced] / F_MIN))
    n_clamped = int(np.sum(voiced & ((raw < 1) | (raw > N_PITCH_BINS))))
    return LabelSequence(labels, n_clamped)


def shift_labels(labels, semitones: int) -> LabelSequence:
    """Transpose voiced labels by whole semitones; non-vocal stays put."""
    if abs(semitones) > 4:
        raise ValueError("label shift limited to +-4 semitones")
    labels = np.asarray(labels, dtype=np.int64)
    voiced = labels > 0
    moved = labels + BINS_PER_SEMITONE * semitones
    n_clamped = int(np.sum(voiced & ((moved < 1) | (moved > N_PITCH_BINS))))
    out = np.where(voiced, np.clip(moved, 1, N_PITCH_BINS), 0)
    return LabelSequence(out, n_clamped)


def cents(f, ref):
    return 1200.0 * np.log2(np.asarray(f, dtype=np.float64) / ref)


# ---------------------------------------------------------------------------
# two-column f0 text files

def format_f0(freqs, hop: float = HOP_SECONDS) -> str:
    freqs = np.asarray(freqs, dtype=np.float64)
    if freqs.size and (not np.all(np.isfinite(freqs)) or freqs.min() < 0):
        raise ValueError("f0 values must be finite and non-negative")
    lines = ["%.6f\t%.6f" % (i * hop, f) for i, f in enumerate(freqs)]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_f0(text: str):
    """Parse two-column f0 text into ``(times, freqs)`` float arrays."""
    times, freqs = [], []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError("line %d: expected 2 columns, got %d" % (n, len(parts)))
        times.append(float(parts[0]))
        freqs.append(float(parts[1]))
    return np.array(times, dtype=np.float64), np.array(freqs, dtype=np.float64)


def write_f0(path, freqs, hop: float = HOP_SECONDS) -> None:
    with open(path, "w") as fh:
        fh.write(format_f0(freqs, hop))


def read_f0(path):
    """Read an f0 file and return only the frequency column.

    The time column must lie on the 10 ms grid starting at 0.
    """
    with open(os.fspath(path)) as fh:
        times, freqs = parse_f0(fh.read())
    if times.size:
        grid = np.arange(times.size) * HOP_SECONDS
        if np.max(np.abs(times - grid)) > 1e-6:
            raise ValueError("%s: times are not on the 10 ms grid" % path)
    return freqs
