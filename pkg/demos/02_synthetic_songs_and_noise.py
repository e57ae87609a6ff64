"""
Synthetic songs, random audio effects and vocal selection
=========================================================

Every track is rendered from a random song description, so its exact
melody is known. Unlabeled tracks get perturbed by a random chain of
audio effects during self-training, and tracks with too little singing
can be dropped from the unlabeled pool by their vocal ratio.
"""

import numpy as np

from melodyssl import audio, augment, selection, synth

spec = synth.random_song_spec(seed=11)
track = synth.render_track(spec)
voiced = track.contour > 0
print("song: %.1f s, key %d, %d%% of frames sung, SNR %.1f dB"
      % (spec.duration_seconds, spec.key, round(100 * voiced.mean()), spec.snr_db))
print("melody range: %.0f - %.0f Hz" % (track.contour[voiced].min(), track.contour[voiced].max()))

# log-magnitude spectrogram: 10 ms hop, 513 bins
x = audio.stft_logmag(track.mixture).values
print("spectrogram:", x.shape, "frames x bins; contour frames:", track.contour.size)

# three random effect chains; each effect is switched on with probability 0.4
for seed in range(3):
    chain = augment.raa_sample(seed)
    noisy = augment.apply_chain(track.mixture, chain)
    change = np.abs(audio.stft_logmag(noisy).values - x).mean()
    print("chain %d: %-60s mean |change| %.2f" % (seed, chain.describe().strip().replace("\n", "; "), change))

# vocal ratio with the signal-based detector. It only reads periodicity and
# level, so it is reliable on clean stems; in a dense mix the accompaniment
# masks the voice and a trained model is the better detector
# (``melodyssl select --detector model --checkpoint ...``).
det = selection.VoicingDetector("heuristic")
for name, clip in (("vocal stem", track.vocal_stem), ("accompaniment", track.accomp_stem),
                   ("full mix", track.mixture)):
    r = selection.vocal_ratio(clip, det)
    print("%-14s vocal ratio %.2f (true %.2f) -> %s"
          % (name, r, voiced.mean() if name != "accompaniment" else 0.0,
             "kept" if r >= 0.3 else "dropped"))
