import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from melodyssl import audio, model, selection, synth


def test_silence_ratio_zero():
    det = selection.VoicingDetector()
    assert selection.vocal_ratio(audio.AudioClip(np.zeros(8000), 8000), det) == 0.0


def test_vocal_stem_ratio_matches_density():
    spec = synth.SongSpec(seed=21, voicing_density=0.8)
    stem = synth.render_vocal(synth.sample_contour(spec), 21, spec.n_samples)
    ratio = selection.vocal_ratio(stem, selection.VoicingDetector("heuristic"))
    assert abs(ratio - 0.8) <= 0.1


def test_detector_kinds():
    with pytest.raises(ValueError):
        selection.VoicingDetector("model")
    with pytest.raises(ValueError):
        selection.VoicingDetector("cnn")
    params = model.init_params(model.desk_config(), 0)
    det = selection.VoicingDetector("model", params)
    r = selection.vocal_ratio(audio.AudioClip(np.zeros(4000), 8000), det)
    assert 0.0 <= r <= 1.0


def test_wrong_rate_rejected():
    with pytest.raises(audio.AudioError):
        selection.vocal_ratio(audio.AudioClip(np.zeros(100), 16000), selection.VoicingDetector())


def test_threshold_rules():
    ids = ["a", "b", "c"]
    ratios = [0.3, 0.2999, 1.0]
    kept, rows = selection.select_by_ratio(ids, ratios)
    assert kept == ["a", "c"]
    assert [r.selected for r in rows] == [True, False, True]
    assert selection.select_by_ratio(ids, ratios, 0.0)[0] == ids
    assert selection.select_by_ratio(ids, [0.99, 0.5, 1.0], 1.0)[0] == ["c"]
    assert selection.DEFAULT_THRESHOLD == 0.3
    with pytest.raises(ValueError):
        selection.select_by_ratio(ids, ratios, 1.5)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_raising_threshold_never_adds(ratios, t1, t2):
    lo, hi = sorted((t1, t2))
    ids = [str(i) for i in range(len(ratios))]
    assert set(selection.select_by_ratio(ids, ratios, hi)[0]) <= set(selection.select_by_ratio(ids, ratios, lo)[0])


def test_select_and_report(tmp_path):
    entries = [synth.ManifestEntry("v", "audio/v.wav", None, "train", "vocal"),
               synth.ManifestEntry("s", "audio/s.wav", None, "train", "instrumental")]
    spec = synth.SongSpec(seed=2, voicing_density=0.8)
    vocal = synth.render_vocal(synth.sample_contour(spec), 2, spec.n_samples)
    clips = [vocal, audio.AudioClip(np.zeros(8000), 8000)]
    kept, rows = selection.select(entries, clips, selection.VoicingDetector())
    assert [e.track_id for e in kept] == ["v"]
    selection.write_selection(tmp_path / "sel.jsonl", rows)
    lines = [json.loads(l) for l in open(tmp_path / "sel.jsonl")]
    assert set(lines[0]) == {"id", "ratio", "selected", "detector", "threshold"}
    assert lines[1] == {"id": "s", "ratio": 0.0, "selected": False, "detector": "heuristic",
                        "threshold": 0.3}


def test_precision_recall():
    assert selection.precision_recall(["a", "b"], ["a", "c"]) == (0.5, 0.5)
    assert selection.precision_recall([], ["a"]) == (0.0, 0.0)
