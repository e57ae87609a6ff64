"""Track-level vocal ratio and unlabeled-pool filtering."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import audio, model
from .pitchtrack import track_pitch

DEFAULT_THRESHOLD = 0.3
SILENCE_RMS = 1e-3       # about -60 dBFS
PERIODICITY = 0.5


@dataclass
class VoicingDetector:
    kind: str = "heuristic"
    params: model.ModelParams | None = None
    silence_rms: float = SILENCE_RMS
    periodicity: float = PERIODICITY

    def __post_init__(self):
        if self.kind not in ("heuristic", "model"):
            raise ValueError("detector kind must be 'heuristic' or 'model'")
        if (self.kind == "model") != (self.params is not None):
            raise ValueError("a model detector needs params; a heuristic one must not have them")

    def voiced_frames(self, clip: audio.AudioClip = None, spec: np.ndarray = None) -> np.ndarray:
        """Boolean voicing decision per 10 ms frame."""
        if self.kind == "model":
            if spec is None:
                spec = audio.stft_logmag(clip).values
            return model.predict_probs(self.params, spec)[:, 0] < 0.5
        x = np.asarray(clip.samples, dtype=np.float64)
        return heuristic_voicing(x, self.silence_rms, self.periodicity)


def frame_rms(x, window: int = 240) -> np.ndarray:
    """RMS of a ``window``-sample span centred on each frame (zero padded)."""
    n = audio.n_frames_for(x.size)
    half = window // 2
    xp = np.concatenate([np.zeros(half), x * x, np.zeros(half + audio.HOP * n)])
    c = np.concatenate([[0.0], np.cumsum(xp)])
    starts = np.arange(n) * audio.HOP
    return np.sqrt(np.maximum(c[starts + window] - c[starts], 0.0) / window)


def heuristic_voicing(x, silence_rms: float = SILENCE_RMS, periodicity: float = PERIODICITY):
    loud = frame_rms(x) > silence_rms
    _, strength = track_pitch(x, threshold=periodicity)
    return loud & (strength > periodicity)


def vocal_ratio(clip: audio.AudioClip, detector: VoicingDetector, spec=None) -> float:
    """Fraction of frames the detector calls voiced."""
    if clip is not None and (clip.sample_rate != audio.SAMPLE_RATE or clip.channels != 1):
        raise audio.AudioError("vocal_ratio expects 8 kHz mono audio")
    v = detector.voiced_frames(clip, spec)
    return float(np.mean(v)) if v.size else 0.0


@dataclass
class RatioEntry:
    track_id: str
    ratio: float
    selected: bool
    detector: str
    threshold: float


def select_by_ratio(track_ids, ratios, threshold: float = DEFAULT_THRESHOLD, detector="heuristic"):
    """Keep tracks with ratio >= threshold; returns (kept ids, report rows)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    rows = [RatioEntry(t, float(r), bool(r >= threshold), detector, float(threshold))
            for t, r in zip(track_ids, ratios)]
    return [r.track_id for r in rows if r.selected], rows


def select(entries, clips, detector: VoicingDetector, threshold: float = DEFAULT_THRESHOLD):
    """Filter manifest entries by the vocal ratio of their clips.

    Returns ``(kept_entries, report_rows)``; ``clips`` is parallel to ``entries``.
    """
    entries = list(entries)
    ratios = [vocal_ratio(c, detector) for c in clips]
    kept_ids, rows = select_by_ratio([e.track_id for e in entries], ratios, threshold,
                                     detector.kind)
    kept = set(kept_ids)
    return [e for e in entries if e.track_id in kept], rows


def write_selection(path, rows) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps({"id": r.track_id, "ratio": round(r.ratio, 6),
                                 "selected": r.selected, "detector": r.detector,
                                 "threshold": r.threshold}) + "\n")


def precision_recall(selected_ids, positive_ids):
    sel, pos = set(selected_ids), set(positive_ids)
    tp = len(sel & pos)
    precision = tp / len(sel) if sel else 0.0
    recall = tp / len(pos) if pos else 0.0
    return precision, recall
