"""
Pitch labels and melody scoring
===============================

Frequencies map onto 442 classes: class 0 means "no singing", and classes
1..441 step through pitch in 1/8-semitone bins starting at 82.4 Hz (E2).
Scores compare a reference contour with an estimate frame by frame.
"""

import numpy as np

from melodyssl import metrics, pitch

# a few notes and their labels; one octave is 96 labels
freqs = np.array([0.0, 82.4, 110.0, 220.0, 440.0, 880.0])
labels = pitch.freq_to_label(freqs)
print("freq  -> label:", dict(zip(freqs.tolist(), labels.tolist())))
print("label -> freq :", np.round(pitch.label_to_freq(labels), 2).tolist())

# quantisation error never exceeds half a bin (6.25 cents)
f = np.geomspace(83, 1900, 10000)
err = pitch.cents(pitch.label_to_freq(pitch.freq_to_label(f)), f)
print("worst quantisation error: %.3f cents" % np.abs(err).max())

# scoring: 40 cents off still counts, a semitone off does not,
# and a voiced estimate over silence is a false alarm
ref = np.array([220.0, 220.0, 0.0, 0.0])
est = np.array([220.0 * 2 ** (40 / 1200), 233.08, 220.0, 0.0])
s = metrics.evaluate(ref, est)
print("RPA %.2f  VR %.2f  VFA %.2f  OA %.2f" % (s.rpa, s.vr, s.vfa, s.oa))

# corpus scores pool frames, so long tracks weigh more
good = (np.full(1000, 300.0), np.full(1000, 300.0))
bad = (np.full(10, 300.0), np.full(10, 150.0))
rep = metrics.evaluate_corpus([good, bad], ids=["long", "short"])
mean = np.mean([t.oa for t in rep.tracks.values()])
print("pooled OA %.4f, mean of track OAs %.4f" % (rep.corpus.oa, mean))
