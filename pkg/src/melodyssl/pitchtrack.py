"""Monophonic autocorrelation pitch tracker.

Used to check rendered vocals against their stored contours and as the
periodicity half of the heuristic voicing detector. It shares no code with
the synthesiser or the classifier.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import HOP, SAMPLE_RATE, n_frames_for

FMIN = 82.0
FMAX = 1976.0


def lag_correlation(x, window: int = 240, min_lag: int = 4, max_lag: int = 99,
                    hop: int = HOP) -> np.ndarray:
    """Normalised correlation ``r[t, k]`` for lags ``min_lag..max_lag``.

    For frame ``t`` (centred at sample ``t*hop``) and lag ``k`` the two
    compared windows sit symmetrically around the frame centre, ``k``
    samples apart, so the estimate refers to the frame time at every lag.
    """
    x = np.asarray(x, dtype=np.float64)
    n = n_frames_for(x.size) if hop == HOP else -(-x.size // hop)
    pad = window // 2 + max_lag
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + window)])
    view = sliding_window_view(xp, window)
    energy = np.convolve(xp * xp, np.ones(window), mode="valid")
    centers = np.arange(n) * hop + pad
    lags = np.arange(min_lag, max_lag + 1)
    r = np.zeros((n, lags.size))
    for j, k in enumerate(lags):
        left = centers - k // 2 - window // 2
        right = left + k
        num = np.einsum("ij,ij->i", view[left], view[right])
        den = np.sqrt(energy[left] * energy[right])
        r[:, j] = np.where(den > 1e-12, num / np.maximum(den, 1e-300), 0.0)
    return r


def track_pitch(x, sr: int = SAMPLE_RATE, window: int = 240, fmin: float = FMIN,
                fmax: float = FMAX, threshold: float = 0.5):
    """Frame-wise f0 on the 10 ms grid.

    Returns ``(f0, strength)``. ``strength`` is the highest normalised
    correlation peak in the lag band; ``f0`` is 0 where it is below
    ``threshold``. Among peaks within 10% of the best, the shortest lag is
    taken so the estimate does not drop an octave.
    """
    min_lag = int(np.floor(sr / fmax))
    max_lag = int(np.ceil(sr / fmin)) + 1
    r = lag_correlation(x, window, min_lag - 1, max_lag + 1)
    n = r.shape[0]
    f0 = np.zeros(n)
    strength = np.zeros(n)
    peak = (r[:, 1:-1] > r[:, :-2]) & (r[:, 1:-1] >= r[:, 2:])
    for t in range(n):
        ks = np.flatnonzero(peak[t]) + 1
        if ks.size == 0:
            continue
        vals = r[t, ks]
        best = vals.max()
        strength[t] = best
        if best < threshold:
            continue
        k = ks[np.argmax(vals >= 0.9 * best)]
        y0, y1, y2 = r[t, k - 1], r[t, k], r[t, k + 1]
        den = y0 - 2 * y1 + y2
        frac = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        f0[t] = sr / (min_lag - 1 + k + frac)
    return f0, strength
