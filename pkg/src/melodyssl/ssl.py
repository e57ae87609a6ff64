"""Teacher-student self-training.

A teacher is trained on labeled tracks (with pitch-shifted copies), then
for each iteration it labels the unlabeled pool, a fresh student is trained
on both, and the student becomes the next teacher. Three objectives differ
only in what the student sees on unlabeled data and where its targets come
from:

    basic                  clean input,      targets from teacher(clean)
    noisy_teacher_student  augmented input,  targets from teacher(augmented)
    noisy_student          augmented input,  targets from teacher(clean)

In every case the unlabeled cross-entropy is added to the labeled one with
unit weight.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace, asdict
from enum import Enum

import numpy as np
from threadpoolctl import threadpool_limits

from . import audio, augment, metrics, model, pitch
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

SHIFTS = (-2, -1, 1, 2)


class TsMode(str, Enum):
    BASIC = "basic"
    NOISY_TEACHER_STUDENT = "noisy_teacher_student"
    NOISY_STUDENT = "noisy_student"


class TrainSchedule(str, Enum):
    JOINT = "joint"
    PRETRAIN_THEN_FINETUNE = "pretrain_then_finetune"
    PRETRAIN_ONLY = "pretrain_only"


class NumericError(RuntimeError):
    """Training diverged (loss or weights became non-finite)."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 64
    lr: float = model.INITIAL_LR
    pitch_shift: bool = True
    seed: int = 0
    model: model.ModelConfig = field(default_factory=model.desk_config)


@dataclass(frozen=True)
class SslConfig:
    ts_mode: TsMode = TsMode.NOISY_STUDENT
    schedule: TrainSchedule = TrainSchedule.JOINT
    iterations: int = 1
    pseudo_label_form: str = "soft"
    batch_mix: tuple = (1, 1)
    epochs: int = 15
    batch_size: int = 64
    lr: float = model.INITIAL_LR
    pitch_shift: bool = True
    warm_start: bool = False
    labeled_passes: int = 2    # passes over the labeled set per student epoch
    seed: int = 0
    model: model.ModelConfig = field(default_factory=model.desk_config)

    def __post_init__(self):
        object.__setattr__(self, "ts_mode", TsMode(self.ts_mode))
        object.__setattr__(self, "schedule", TrainSchedule(self.schedule))
        if not 1 <= self.iterations <= 8:
            raise ValueError("iterations must be in 1..8")
        if self.pseudo_label_form not in ("soft", "hard"):
            raise ValueError("pseudo_label_form must be 'soft' or 'hard'")
        if len(self.batch_mix) != 2 or min(self.batch_mix) <= 0:
            raise ValueError("batch_mix needs two positive components")
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("epochs must be >= 0 and batch_size >= 2")
        if self.labeled_passes < 1:
            raise ValueError("labeled_passes must be >= 1")

    @property
    def labeled_batch(self) -> int:
        """Labeled share of a mixed step; the step holds ``batch_size`` patches in all."""
        a, b = self.batch_mix
        return min(self.batch_size - 1, max(1, int(round(self.batch_size * a / (a + b)))))

    @property
    def unlabeled_batch(self) -> int:
        return self.batch_size - self.labeled_batch

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr, self.pitch_shift, self.seed,
                           self.model)


# ---------------------------------------------------------------------------
# data

@dataclass
class Track:
    track_id: str
    samples: np.ndarray           # 8 kHz mono
    contour: np.ndarray | None    # 10 ms grid, None when unlabeled
    kind: str = "vocal"
    _spec: np.ndarray | None = field(default=None, repr=False)

    @property
    def spec(self) -> np.ndarray:
        if self._spec is None:
            self._spec = spectrogram(self.samples)
        return self._spec


def spectrogram(samples) -> np.ndarray:
    return audio.stft_logmag(audio.AudioClip(np.asarray(samples, dtype=np.float64),
                                             audio.SAMPLE_RATE)).values


def pmap(fn, items, threads: int = 1):
    """Ordered map; results do not depend on the worker count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def norm_stats(tracks) -> tuple:
    """Per-bin mean and std of log-magnitudes over the given tracks."""
    total = np.zeros(audio.N_BINS)
    total_sq = np.zeros(audio.N_BINS)
    n = 0
    for t in tracks:
        v = t.spec.astype(np.float64)
        total += v.sum(axis=0)
        total_sq += (v * v).sum(axis=0)
        n += v.shape[0]
    mean = total / n
    std = np.sqrt(np.maximum(total_sq / n - mean * mean, 0.0))
    return mean.astype(np.float32), np.maximum(std, 1e-3).astype(np.float32)


@dataclass
class LabeledSet:
    """Spectrograms and frame labels of labeled tracks plus pitch-shifted copies.

    ``variants[i]`` lists ``(values, labels)`` for track i, unshifted first.
    """
    track_ids: list
    variants: list


def labeled_set(tracks, shifts=SHIFTS, threads: int = 1) -> LabeledSet:
    def work(t):
        if t.contour is None:
            raise ValueError("track %s has no labels" % t.track_id)
        out = [(t.spec, pitch.contour_to_labels(t.contour).labels)]
        clip = audio.AudioClip(np.asarray(t.samples, dtype=np.float64), audio.SAMPLE_RATE)
        for s in shifts:
            shifted, c = augment.pitch_shift_pair(clip, t.contour, s)
            out.append((spectrogram(shifted.samples), pitch.contour_to_labels(c).labels))
        return out

    return LabeledSet([t.track_id for t in tracks], pmap(work, tracks, threads))


def _epoch_rows(n_frames: int, rng) -> np.ndarray:
    offset = int(rng.integers(audio.CONTEXT))
    return audio.patch_rows(audio.patch_centers(n_frames, audio.CONTEXT, offset), n_frames)


def labeled_epoch(ls: LabeledSet, rng, use_shifts: bool):
    """Shuffled list of (values, labels, rows) patches for one pass.

    Each track contributes its patches at stride 31 from a random offset,
    taken from one randomly chosen pitch variant.
    """
    items = []
    for variants in ls.variants:
        v = int(rng.integers(len(variants))) if use_shifts else 0
        values, labels = variants[v]
        for r in _epoch_rows(values.shape[0], rng):
            items.append((values, labels, r))
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def stack_patches(items, norm):
    x = np.stack([values[r] for values, _, r in items])
    y = np.stack([targets[r] for _, targets, r in items])
    return audio.normalize(x, norm), y


# ---------------------------------------------------------------------------
# evaluation

def predict_track(params, track: Track) -> np.ndarray:
    return model.probs_to_contour(model.predict_probs(params, track.spec))


def evaluate_tracks(params, tracks, threads: int = 1, truth=None) -> metrics.EvalReport:
    """Corpus report against ``truth[id]`` (default: each track's own contour)."""
    tracks = list(tracks)
    ests = pmap(lambda t: predict_track(params, t), tracks, threads)
    refs = [truth[t.track_id] if truth is not None else t.contour for t in tracks]
    return metrics.evaluate_corpus([metrics.align(r, e) for r, e in zip(refs, ests)],
                                   ids=[t.track_id for t in tracks])


# ---------------------------------------------------------------------------
# optimisation loop

def _check_finite(loss, params):
    if not np.isfinite(loss):
        raise NumericError("training loss became non-finite")


def combined_loss_and_grads(params, xl, yl, xu=None, yu=None):
    """L_D on the labeled patches plus, if any, the unlabeled term with unit weight.

    The two parts are separate forward passes, so an empty unlabeled batch
    gives exactly the labeled loss and gradient.
    """
    loss, grads = 0.0, None
    if xl is not None and len(xl):
        loss, grads = model.loss_and_grads(params, xl, yl)
    if xu is not None and len(xu):
        lu, gu = model.loss_and_grads(params, xu, yu)
        loss += lu
        if grads is None:
            grads = gu
        else:
            for k in grads:
                grads[k] += gu[k]
    return loss, grads


@dataclass
class FitResult:
    params: model.ModelParams
    history: list
    best_epoch: int


def fit(params, epochs: int, batches_for_epoch, val_tracks, lr: float, threads: int = 1,
        label: str = "") -> FitResult:
    """Run ``epochs`` epochs; keep the weights with the best validation OA.

    ``batches_for_epoch(epoch)`` yields ``(xl, yl, xu, yu)`` tuples. After
    each epoch validation OA feeds the plateau schedule. With zero epochs the
    input parameters are returned unchanged.
    """
    state = model.OptimizerState(lr=lr)
    best, best_oa, best_epoch = params, -1.0, -1
    history = []
    for epoch in range(epochs):
        t0 = time.time()
        losses = []
        for xl, yl, xu, yu in batches_for_epoch(epoch):
            loss, grads = combined_loss_and_grads(params, xl, yl, xu, yu)
            _check_finite(loss, params)
            model.adam_step(params, grads, state)
            losses.append(loss)
        oa = evaluate_tracks(params, val_tracks, threads).oa if val_tracks else float(-epoch)
        if val_tracks:
            model.plateau_update(state, oa)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)) if losses else 0.0,
                        "val_oa": oa, "lr": state.lr, "seconds": time.time() - t0})
        log.info("%s epoch %d loss %.4f val OA %.4f lr %.5f", label, epoch, history[-1]["loss"],
                 oa, state.lr)
        if oa > best_oa:
            best, best_oa, best_epoch = params.copy(), oa, epoch
    if state.flagged_batches:
        log.warning("%s skipped %d batches with non-finite gradients", label, state.flagged_batches)
    return FitResult(best, history, best_epoch)


def _labeled_batches(ls, cfg, norm, seed_parts):
    def gen(epoch):
        rng = rng_for(*seed_parts, "batching", epoch)
        items = labeled_epoch(ls, rng, cfg.pitch_shift)
        for s in range(0, len(items), cfg.batch_size):
            xl, yl = stack_patches(items[s:s + cfg.batch_size], norm)
            yield xl, yl, None, None
    return gen


def train_teacher(train_tracks, val_tracks, cfg: TrainConfig = TrainConfig(), threads: int = 1,
                  labeled: LabeledSet | None = None) -> FitResult:
    """Supervised training on labeled tracks with pitch-shift augmentation."""
    train_tracks = list(train_tracks)
    if not train_tracks:
        raise ValueError("no labeled training tracks")
    with threadpool_limits(1):
        norm = norm_stats(train_tracks)
        params = model.init_params(cfg.model, derive_seed(cfg.seed, "init", "teacher"), norm=norm)
        if cfg.epochs == 0:
            return FitResult(params, [], -1)
        ls = labeled or labeled_set(train_tracks, SHIFTS if cfg.pitch_shift else (), threads)
        params.tag = "teacher"
        gen = _labeled_batches(ls, cfg, norm, (cfg.seed, "teacher"))
        return fit(params, cfg.epochs, gen, val_tracks, cfg.lr, threads, "teacher")


# ---------------------------------------------------------------------------
# pseudo labels

@dataclass
class PseudoLabelSet:
    """Teacher posteriors per unlabeled track: soft rows or hard indices."""
    form: str
    teacher_iteration: int
    labels: dict  # track_id -> (n_frames, 442) float32 or (n_frames,) int
    mode: TsMode = TsMode.BASIC
    chain_seeds: dict = field(default_factory=dict)

    def targets(self, track_id):
        return self.labels[track_id]

    def hard(self, track_id) -> np.ndarray:
        y = self.labels[track_id]
        return y if y.ndim == 1 else np.argmax(y, axis=-1)


def chain_seed(seed, iteration, epoch, track_id) -> int:
    return derive_seed(seed, "raa", iteration, epoch, track_id)


def augmented_spec(track: Track, cseed: int) -> np.ndarray:
    return spectrogram(augment.augment_samples(track.samples, cseed))


def _to_form(probs, form):
    return probs if form == "soft" else np.argmax(probs, axis=-1)


def make_pseudo_labels(teacher, tracks, ts_mode=TsMode.BASIC, form="soft", iteration: int = 1,
                       chain_seeds=None, threads: int = 1) -> PseudoLabelSet:
    """Run the teacher over unlabeled tracks.

    Basic and NoisyStudent label the clean audio. NoisyTeacherStudent labels
    the augmented audio, so ``chain_seeds[track_id]`` must give the chain
    each track receives in the current epoch.
    """
    ts_mode = TsMode(ts_mode)
    tracks = list(tracks)
    noisy = ts_mode == TsMode.NOISY_TEACHER_STUDENT
    if noisy and chain_seeds is None:
        raise ValueError("noisy teacher labels need per-track chain seeds")

    def work(t):
        values = augmented_spec(t, chain_seeds[t.track_id]) if noisy else t.spec
        return _to_form(model.predict_probs(teacher, values), form)

    labels = pmap(work, tracks, threads)
    return PseudoLabelSet(form, iteration, {t.track_id: y for t, y in zip(tracks, labels)},
                          ts_mode, dict(chain_seeds or {}))


# ---------------------------------------------------------------------------
# student objective

def unlabeled_inputs(ts_mode, track: Track, cseed):
    """Spectrogram the student sees for one unlabeled track."""
    if TsMode(ts_mode) == TsMode.BASIC:
        return track.spec
    return augmented_spec(track, cseed)


def student_loss(ts_mode, student, labeled_batch, unlabeled_batch, pseudo: PseudoLabelSet,
                 chain_per_item=None, with_grads: bool = False):
    """Total objective for one step.

    ``labeled_batch`` is ``(patches, labels)`` (normalised patches, frame
    labels). ``unlabeled_batch`` is a list of ``(track, rows)`` pairs; the
    student input for each comes from :func:`unlabeled_inputs` with the chain
    seed in ``chain_per_item[track_id]`` and its target from ``pseudo``.
    """
    ts_mode = TsMode(ts_mode)
    xl, yl = labeled_batch
    xu = yu = None
    if unlabeled_batch:
        if (ts_mode == TsMode.NOISY_TEACHER_STUDENT) != (pseudo.mode == TsMode.NOISY_TEACHER_STUDENT):
            raise ValueError("pseudo labels were not generated for %s" % ts_mode.value)
        xs, ys = [], []
        cache = {}
        for track, rows in unlabeled_batch:
            tid = track.track_id
            if tid not in cache:
                cseed = (chain_per_item or {}).get(tid)
                cache[tid] = unlabeled_inputs(ts_mode, track, cseed)
            xs.append(cache[tid][rows])
            ys.append(pseudo.targets(tid)[rows])
        xu = audio.normalize(np.stack(xs), student.norm)
        yu = np.stack(ys)
    loss, grads = combined_loss_and_grads(student, xl, yl, xu, yu)
    return (loss, grads) if with_grads else loss


# ---------------------------------------------------------------------------
# self-training

class UnlabeledStream:
    """Per-epoch unlabeled patches with their targets.

    Each epoch visits tracks in a fresh random order, cutting every visited
    track into stride-31 patches from a random offset, until the epoch's
    patch budget is met; the order continues across epochs so the whole
    pool is covered. A visited track gets one RAA chain for the whole epoch.
    """

    def __init__(self, tracks, cfg: SslConfig, iteration: int, pseudo, teacher, threads=1):
        self.tracks = list(tracks)
        self.cfg = cfg
        self.iteration = iteration
        self.pseudo = pseudo
        self.teacher = teacher
        self.threads = threads
        self._queue = []
        self._cycle = 0

    def _next_track(self):
        if not self._queue:
            rng = rng_for(self.cfg.seed, "pool-order", self.iteration, self._cycle)
            self._queue = list(rng.permutation(len(self.tracks)))[::-1]
            self._cycle += 1
        return self.tracks[self._queue.pop()]

    def epoch(self, epoch: int, n_patches: int, phase: str):
        mode = self.cfg.ts_mode
        rng = rng_for(self.cfg.seed, "unlabeled-rows", self.iteration, phase, epoch)
        chosen, count = [], 0
        while count < n_patches:
            t = self._next_track()
            rows = _epoch_rows(t.spec.shape[0], rng)
            chosen.append((t, rows))
            count += len(rows)
        seeds = {t.track_id: chain_seed(self.cfg.seed, self.iteration, "%s-%d" % (phase, epoch),
                                        t.track_id) for t, _ in chosen}

        def work(item):
            t, rows = item
            x = unlabeled_inputs(mode, t, seeds[t.track_id])
            if mode == TsMode.NOISY_TEACHER_STUDENT:
                y = _to_form(model.predict_probs(self.teacher, x), self.cfg.pseudo_label_form)
            else:
                y = self.pseudo.targets(t.track_id)
            return x, y, rows

        prepared = pmap(work, chosen, self.threads)
        items = [(x, y, r) for x, y, rows in prepared for r in rows]
        order = rng.permutation(len(items))[:n_patches]
        return [items[i] for i in order]


def _joint_batches(ls, stream, cfg: SslConfig, norm, phase, labeled=True, unlabeled=True):
    """Batches for one student phase.

    A mixed step holds ``cfg.batch_size`` patches split by ``batch_mix``; a
    single-source step holds ``cfg.batch_size`` patches of its one source.
    The epoch length is set by the labeled patches: ``cfg.labeled_passes``
    passes at the labeled share per step (so unlabeled-only pre-training
    runs as many steps as joint training).
    """
    both = labeled and unlabeled
    nl = cfg.labeled_batch if both else cfg.batch_size
    nu = cfg.unlabeled_batch if both else cfg.batch_size

    def gen(epoch):
        rng = rng_for(cfg.seed, "student-batching", stream.iteration, phase, epoch)
        litems = [it for _ in range(cfg.labeled_passes)
                  for it in labeled_epoch(ls, rng, cfg.pitch_shift)]
        steps = -(-len(litems) // (nl if labeled else cfg.labeled_batch))
        uitems = stream.epoch(epoch, steps * nu, phase) if unlabeled else []
        for s in range(steps):
            xl = yl = xu = yu = None
            if labeled:
                xl, yl = stack_patches(litems[s * nl:(s + 1) * nl], norm)
            if unlabeled:
                xu, yu = stack_patches(uitems[s * nu:(s + 1) * nu], norm)
            yield xl, yl, xu, yu
    return gen


@dataclass
class IterationResult:
    iteration: int
    teacher: model.ModelParams
    student: model.ModelParams
    pseudo: PseudoLabelSet | None
    report: metrics.EvalReport | None
    history: list


def train_student(teacher, ls, unlabeled_tracks, val_tracks, cfg: SslConfig, iteration: int,
                  threads: int = 1):
    """One iteration: pseudo-label with ``teacher`` and train a fresh student."""
    mode = cfg.ts_mode
    pseudo = None
    if mode != TsMode.NOISY_TEACHER_STUDENT:
        pseudo = make_pseudo_labels(teacher, unlabeled_tracks, mode, cfg.pseudo_label_form,
                                    iteration, threads=threads)
    norm = teacher.norm
    if cfg.warm_start:
        student = teacher.copy()
    else:
        student = model.init_params(cfg.model, derive_seed(cfg.seed, "init", "student", iteration),
                                    norm=norm)
    student.tag = "student-%d" % iteration
    stream = UnlabeledStream(unlabeled_tracks, cfg, iteration, pseudo, teacher, threads)
    history = []
    label = "student %d" % iteration
    if cfg.schedule == TrainSchedule.JOINT:
        res = fit(student, cfg.epochs, _joint_batches(ls, stream, cfg, norm, "joint"),
                  val_tracks, cfg.lr, threads, label)
        history += res.history
    else:
        res = fit(student, cfg.epochs,
                  _joint_batches(ls, stream, cfg, norm, "pretrain", labeled=False),
                  val_tracks, cfg.lr, threads, label + " pretrain")
        history += res.history
        if cfg.schedule == TrainSchedule.PRETRAIN_THEN_FINETUNE:
            res = fit(res.params, cfg.epochs,
                      _joint_batches(ls, stream, cfg, norm, "finetune", unlabeled=False),
                      val_tracks, cfg.lr, threads, label + " finetune")
            history += res.history
    return res.params, pseudo, history


def self_train(train_tracks, val_tracks, unlabeled_tracks, cfg: SslConfig, test_tracks=None,
               threads: int = 1, teacher=None, out_dir=None, labeled: LabeledSet | None = None,
               start_iteration: int = 1):
    """Algorithm: teacher -> (pseudo-label, train student, promote) x k.

    Returns ``(final_params, [IterationResult, ...])``. Reports are computed
    on ``test_tracks`` when given, otherwise on the validation tracks.
    ``teacher`` may be passed in to reuse an already trained first teacher;
    together with ``start_iteration`` it resumes a shorter run, since every
    iteration's random streams depend only on its own index.
    """
    unlabeled_tracks = list(unlabeled_tracks)
    if not unlabeled_tracks:
        raise ValueError("unlabeled pool is empty")
    eval_tracks = test_tracks if test_tracks is not None else val_tracks
    with threadpool_limits(1):
        ls = labeled or labeled_set(train_tracks, SHIFTS if cfg.pitch_shift else (), threads)
        if teacher is None:
            teacher = train_teacher(train_tracks, val_tracks, cfg.train_config(), threads, ls).params
        results = []
        for i in range(start_iteration, cfg.iterations + 1):
            student, pseudo, history = train_student(teacher, ls, unlabeled_tracks, val_tracks,
                                                     cfg, i, threads)
            report = evaluate_tracks(student, eval_tracks, threads) if eval_tracks else None
            res = IterationResult(i, teacher, student, pseudo, report, history)
            results.append(res)
            if out_dir is not None:
                if pseudo is None:
                    # per-epoch noisy labels are not kept; dump clean-input labels instead
                    res.pseudo = make_pseudo_labels(teacher, unlabeled_tracks, TsMode.BASIC,
                                                    "hard", i, threads=threads)
                write_iteration(out_dir, res)
            teacher = student
    return teacher, results


def write_iteration(out_dir, res: IterationResult) -> None:
    d = os.path.join(os.fspath(out_dir), "iter_%d" % res.iteration)
    os.makedirs(os.path.join(d, "pseudo"), exist_ok=True)
    model.save_checkpoint(os.path.join(d, "teacher.ckpt"), res.teacher)
    model.save_checkpoint(os.path.join(d, "student.ckpt"), res.student)
    if res.pseudo is not None:
        for tid in res.pseudo.labels:
            pitch.write_f0(os.path.join(d, "pseudo", tid + ".f0"),
                           pitch.label_to_freq(res.pseudo.hard(tid)))
    payload = {"iteration": res.iteration, "history": res.history}
    if res.report is not None:
        payload["corpus"] = res.report.corpus.rounded()
        payload["tracks"] = [dict(id=k, **v.rounded()) for k, v in res.report.tracks.items()]
    with open(os.path.join(d, "metrics.json"), "w") as fh:
        json.dump(payload, fh, indent=2)


# ---------------------------------------------------------------------------
# corpus access

def load_track(root, entry, with_hidden: bool = False) -> Track:
    """Load one manifest entry; ``with_hidden`` attaches archived ground truth."""
    clip = audio.to_mono_8k(audio.load_wav(os.path.join(os.fspath(root), entry.audio_path)))
    contour = None
    if entry.label_path:
        contour = pitch.read_f0(os.path.join(os.fspath(root), entry.label_path))
    elif with_hidden:
        hidden = os.path.join(os.fspath(root), "hidden", entry.track_id + ".f0")
        if os.path.exists(hidden):
            contour = pitch.read_f0(hidden)
    return Track(entry.track_id, clip.samples, contour, entry.kind)


def load_tracks(root, entries, with_hidden: bool = False, threads: int = 1):
    return pmap(lambda e: load_track(root, e, with_hidden), list(entries), threads)


def corpus_splits(root, threads: int = 1):
    """Dict with ``train``, ``val``, ``test`` and ``unlabeled`` track lists."""
    from .synth import read_manifest
    entries = read_manifest(root)
    groups = {"train": [], "val": [], "test": [], "unlabeled": []}
    for e in entries:
        if e.label_path is None:
            groups["unlabeled"].append(e)
        else:
            groups[e.split].append(e)
    return {k: load_tracks(root, v, threads=threads) for k, v in groups.items()}
