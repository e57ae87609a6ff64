"""Frame-level melody metrics: OA, RPA, VR and VFA with corpus pooling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

DEFAULT_TOLERANCE = 50.0
# absorbs log2 roundoff so a deviation of exactly the tolerance counts as a hit
CENT_SLACK = 1e-9


@dataclass
class FrameCounts:
    total: int = 0
    voiced_ref: int = 0
    unvoiced_ref: int = 0
    voiced_hit: int = 0        # ref voiced, est voiced
    pitch_hit: int = 0         # ref voiced, est voiced, within tolerance
    false_alarm: int = 0       # ref unvoiced, est voiced
    correct_unvoiced: int = 0  # ref unvoiced, est unvoiced

    def __add__(self, other):
        return FrameCounts(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))


@dataclass
class Scores:
    oa: float
    rpa: float
    vr: float
    vfa: float
    voiced_ref: int
    unvoiced_ref: int
    total: int

    @classmethod
    def from_counts(cls, c: FrameCounts):
        rpa = c.pitch_hit / c.voiced_ref if c.voiced_ref else 0.0
        vr = c.voiced_hit / c.voiced_ref if c.voiced_ref else 0.0
        vfa = c.false_alarm / c.unvoiced_ref if c.unvoiced_ref else 0.0
        oa = (c.pitch_hit + c.correct_unvoiced) / c.total if c.total else 0.0
        return cls(oa, rpa, vr, vfa, c.voiced_ref, c.unvoiced_ref, c.total)

    def rounded(self):
        d = asdict(self)
        for k in ("oa", "rpa", "vr", "vfa"):
            d[k] = round(d[k], 6)
        return d


@dataclass
class EvalReport:
    corpus: Scores
    tracks: dict = field(default_factory=dict)  # track_id -> Scores

    @property
    def oa(self):
        return self.corpus.oa

    def to_json(self) -> str:
        return json.dumps({
            "corpus": self.corpus.rounded(),
            "tracks": [dict(id=k, **v.rounded()) for k, v in self.tracks.items()],
        }, indent=2)


def align(ref, est):
    """Pad the shorter contour with unvoiced frames so both share one grid."""
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    est = np.asarray(est, dtype=np.float64).reshape(-1)
    n = max(ref.size, est.size)
    return np.pad(ref, (0, n - ref.size)), np.pad(est, (0, n - est.size))


def frame_counts(ref, est, tolerance_cents: float = DEFAULT_TOLERANCE) -> FrameCounts:
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError("reference and estimate lengths differ: %d vs %d" % (ref.size, est.size))
    rv, ev = ref > 0, est > 0
    both = rv & ev
    dev = np.full(ref.shape, np.inf)
    dev[both] = np.abs(1200.0 * np.log2(est[both] / ref[both]))
    return FrameCounts(
        total=int(ref.size),
        voiced_ref=int(rv.sum()),
        unvoiced_ref=int((~rv).sum()),
        voiced_hit=int(both.sum()),
        pitch_hit=int((both & (dev <= tolerance_cents + CENT_SLACK)).sum()),
        false_alarm=int((~rv & ev).sum()),
        correct_unvoiced=int((~rv & ~ev).sum()),
    )


def evaluate(ref, est, tolerance_cents: float = DEFAULT_TOLERANCE) -> Scores:
    """Scores for one aligned (ref, est) pair; est pitch is used as given."""
    return Scores.from_counts(frame_counts(ref, est, tolerance_cents))


def evaluate_corpus(pairs, tolerance_cents: float = DEFAULT_TOLERANCE, ids=None) -> EvalReport:
    """Pool frame counts over tracks, so longer tracks weigh more."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_corpus needs at least one pair")
    if ids is None:
        ids = ["track_%d" % i for i in range(len(pairs))]
    total = FrameCounts()
    tracks = {}
    for tid, (ref, est) in zip(ids, pairs):
        c = frame_counts(ref, est, tolerance_cents)
        total = total + c
        tracks[tid] = Scores.from_counts(c)
    return EvalReport(Scores.from_counts(total), tracks)
