"""
One round of teacher-student training on a small synthetic corpus
=================================================================

A teacher is trained on a few labeled songs. It then labels a pool of
unlabeled songs, and a fresh student learns from both the real labels and
the teacher's soft labels while hearing randomly effected audio.

Usage: python demos/03_teacher_student_round.py [epochs]   (default 15)
Takes about ten minutes on one core. Both networks spend the first few
epochs predicting "no singing" everywhere before pitch emerges, so very
short runs stay at that floor.
"""

import sys
import tempfile

from melodyssl import audio, model, ssl, synth

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 15

root = tempfile.mkdtemp() + "/corpus"
synth.build_corpus(root, n_labeled=40, n_unlabeled=60, n_test=10, n_instrumental=0, master_seed=3)
splits = ssl.corpus_splits(root)
print({k: len(v) for k, v in splits.items()})

teacher = ssl.train_teacher(splits["train"], splits["val"], ssl.TrainConfig(epochs=epochs, seed=0))
print("teacher: best epoch %d, test OA %.3f"
      % (teacher.best_epoch, ssl.evaluate_tracks(teacher.params, splits["test"]).corpus.oa))

cfg = ssl.SslConfig(ts_mode="noisy_student", epochs=epochs, seed=0)
final, results = ssl.self_train(splits["train"], splits["val"], splits["unlabeled"], cfg,
                                splits["test"], teacher=teacher.params)
print("student: test OA %.3f" % results[-1].report.corpus.oa)

# the student is an ordinary model: transcribe one test song
track = splits["test"][0]
f0 = model.predict_contour(final, audio.AudioClip(track.samples, audio.SAMPLE_RATE))
print("%s: %d frames, first voiced estimates %s Hz"
      % (track.track_id, f0.size, [round(float(v), 1) for v in f0[f0 > 0][:5]]))
