"""Command-line entry point: ``melodyssl <subcommand> ...``.

Exit codes: 0 success, 2 bad arguments or config, 3 data error, 4 numeric
failure. Directory outputs are built in a temporary sibling and renamed
into place only when complete.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from . import audio, augment, experiments, metrics, model, pitch, selection, ssl, synth

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("melodyssl")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# run configuration

PRESETS = {"desk": model.desk_config, "full": model.full_config}

# section -> key -> parser
CONFIG_KEYS = {
    "corpus": {"root": str},
    "model": {"preset": str},
    "train": {"epochs": int, "batch_size": int, "lr": float, "pitch_shift": "bool"},
    "ssl": {"ts_mode": str, "schedule": str, "iterations": int, "pseudo_label_form": str,
            "batch_mix": "mix", "warm_start": "bool", "labeled_passes": int},
    "run": {"seeds": "ints", "output": str, "threads": int},
}


@dataclass
class RunConfig:
    corpus: str | None = None
    preset: str = "desk"
    epochs: int = 15
    batch_size: int = 64
    lr: float = model.INITIAL_LR
    pitch_shift: bool = True
    ts_mode: str = "noisy_student"
    schedule: str = "joint"
    iterations: int = 1
    pseudo_label_form: str = "soft"
    batch_mix: tuple = (1, 1)
    warm_start: bool = False
    labeled_passes: int = 2
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    output: str | None = None
    threads: int = 1

    def ssl_config(self, seed=None) -> ssl.SslConfig:
        if self.preset not in PRESETS:
            raise UsageError("unknown model preset %r" % self.preset)
        return ssl.SslConfig(ts_mode=self.ts_mode, schedule=self.schedule,
                             iterations=self.iterations, pseudo_label_form=self.pseudo_label_form,
                             batch_mix=tuple(self.batch_mix), epochs=self.epochs,
                             batch_size=self.batch_size, lr=self.lr, pitch_shift=self.pitch_shift,
                             warm_start=self.warm_start, labeled_passes=self.labeled_passes,
                             seed=self.seeds[0] if seed is None else seed,
                             model=PRESETS[self.preset]())


def _parse_value(kind, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if kind == "ints":
            return [int(v) for v in raw.replace(",", " ").split()]
        if kind == "mix":
            a, b = raw.split(":")
            return (float(a), float(b))
        return kind(raw)
    except ValueError:
        raise UsageError("%s: cannot parse %r" % (where, raw)) from None


def read_config(path) -> RunConfig:
    """Parse a sectioned ``key = value`` file; unknown sections or keys are errors.

    Relative paths are resolved against the config file's directory.
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError("cannot read config %s: %s" % (path, exc)) from None
    cfg = RunConfig()
    base = os.path.dirname(os.path.abspath(path))
    names = {("corpus", "root"): "corpus", ("run", "output"): "output"}
    for section in parser.sections():
        if section not in CONFIG_KEYS:
            raise UsageError("%s: unknown section [%s]" % (path, section))
        for key, raw in parser.items(section):
            if key not in CONFIG_KEYS[section]:
                raise UsageError("%s: unknown key %r in [%s]" % (path, key, section))
            value = _parse_value(CONFIG_KEYS[section][key], raw, "%s [%s] %s" % (path, section, key))
            attr = names.get((section, key), key)
            if attr in ("corpus", "output"):
                value = os.path.normpath(os.path.join(base, value))
            setattr(cfg, attr, value)
    return cfg


def build_run_config(args) -> RunConfig:
    cfg = read_config(args.config) if getattr(args, "config", None) else RunConfig()
    for attr in ("corpus", "preset", "epochs", "ts_mode", "schedule", "iterations",
                 "pseudo_label_form", "output"):
        v = getattr(args, attr, None)
        if v is not None:
            setattr(cfg, attr, v)
    if getattr(args, "seeds", None):
        cfg.seeds = [int(s) for s in args.seeds.split(",")]
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    if cfg.corpus is not None:
        cfg.corpus = os.path.abspath(cfg.corpus)
    if cfg.output is not None:
        cfg.output = os.path.abspath(cfg.output)
    if cfg.threads < 1:
        raise UsageError("--threads must be >= 1")
    try:
        cfg.ssl_config()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


# ---------------------------------------------------------------------------
# atomic outputs

@contextlib.contextmanager
def atomic_dir(path):
    """Yield a temp directory that replaces ``path`` on success."""
    path = os.path.abspath(path)
    parent = os.path.dirname(path)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".partial-", dir=parent)
    try:
        yield tmp
        if os.path.isdir(path):
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


@contextlib.contextmanager
def atomic_file(path):
    path = os.path.abspath(path)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".partial-", dir=os.path.dirname(path))
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _require_corpus(cfg: RunConfig):
    if not cfg.corpus:
        raise UsageError("a corpus is required (--corpus or [corpus] root)")
    if not os.path.exists(os.path.join(cfg.corpus, "manifest.jsonl")):
        raise DataError("no corpus manifest under %s" % cfg.corpus)


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    counts = dict(labeled=args.labeled, unlabeled=args.unlabeled, test=args.test,
                  instrumental=args.instrumental)
    bad = [k for k, v in counts.items() if v < 0]
    if bad:
        raise UsageError("counts must be >= 0: %s" % ", ".join(bad))
    if args.labeled == 0:
        log.warning("--labeled 0: the corpus has no labeled train/val tracks")
    out = os.path.abspath(args.out)
    if os.path.exists(out) and os.listdir(out):
        raise DataError("%s exists and is not empty" % out)
    try:
        entries = synth.build_corpus(out, args.labeled, args.unlabeled, args.test,
                                     args.instrumental, args.seed, threads=args.threads)
    except PermissionError as exc:
        raise DataError(str(exc)) from None
    seconds = 0.0
    for e in entries:
        seconds += audio.load_wav(os.path.join(out, e.audio_path)).duration
    by = {}
    for e in entries:
        key = "%s/%s" % (e.split, "labeled" if e.label_path else e.kind)
        by[key] = by.get(key, 0) + 1
    print("wrote %d tracks (%.1f s of audio) to %s" % (len(entries), seconds, out))
    for k in sorted(by):
        print("  %-20s %d" % (k, by[k]))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_run_config(args)
    _require_corpus(cfg)
    splits = ssl.corpus_splits(cfg.corpus, cfg.threads)
    if not splits["train"]:
        raise DataError("corpus has no labeled training tracks")
    tc = cfg.ssl_config().train_config()
    res = ssl.train_teacher(splits["train"], splits["val"], tc, cfg.threads)
    with atomic_file(args.out) as tmp:
        model.save_checkpoint(tmp, res.params)
    report = {"best_epoch": res.best_epoch, "history": res.history}
    if splits["test"]:
        report["test"] = ssl.evaluate_tracks(res.params, splits["test"], cfg.threads).corpus.rounded()
        print("test OA %.4f" % report["test"]["oa"])
    with atomic_file(args.out + ".json") as tmp, open(tmp, "w") as fh:
        json.dump(report, fh, indent=2)
    print("checkpoint written to %s" % os.path.abspath(args.out))
    return EXIT_OK


def _pool_from_selection(tracks, path):
    kept = set()
    with open(path) as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                if row["selected"]:
                    kept.add(row["id"])
    return [t for t in tracks if t.track_id in kept]


def cmd_ssl_train(args) -> int:
    cfg = build_run_config(args)
    _require_corpus(cfg)
    if not cfg.output:
        raise UsageError("an output directory is required (--out or [run] output)")
    splits = ssl.corpus_splits(cfg.corpus, cfg.threads)
    pool = splits["unlabeled"]
    if args.selection:
        pool = _pool_from_selection(pool, args.selection)
    if not pool:
        raise DataError("the unlabeled pool is empty")
    scfg = cfg.ssl_config()
    teacher = model.load_checkpoint(args.teacher) if args.teacher else None
    with atomic_dir(cfg.output) as tmp:
        final, results = ssl.self_train(splits["train"], splits["val"], pool, scfg,
                                        splits["test"] or None, cfg.threads, teacher=teacher,
                                        out_dir=tmp)
        model.save_checkpoint(os.path.join(tmp, "final.ckpt"), final)
        summary = {"config": experiments.config_hash("ssl", scfg, [t.track_id for t in pool]),
                   "iterations": [{"iteration": r.iteration,
                                   "report": r.report.corpus.rounded() if r.report else None}
                                  for r in results]}
        with open(os.path.join(tmp, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    for r in results:
        if r.report:
            print("iteration %d OA %.4f" % (r.iteration, r.report.corpus.oa))
    return EXIT_OK


def cmd_select(args) -> int:
    if not 0.0 <= args.threshold <= 1.0:
        raise UsageError("--threshold must lie in [0, 1]")
    root = os.path.abspath(args.corpus)
    if not os.path.exists(os.path.join(root, "manifest.jsonl")):
        raise DataError("no corpus manifest under %s" % root)
    entries = [e for e in synth.read_manifest(root) if e.label_path is None]
    if args.detector == "model":
        if not args.checkpoint:
            raise UsageError("--detector model needs --checkpoint")
        det = selection.VoicingDetector("model", model.load_checkpoint(args.checkpoint))
    else:
        det = selection.VoicingDetector("heuristic")
    tracks = ssl.load_tracks(root, entries, threads=args.threads)
    clips = [audio.AudioClip(t.samples, audio.SAMPLE_RATE) for t in tracks]
    kept, rows = selection.select(entries, clips, det, args.threshold)
    with atomic_file(args.out) as tmp:
        selection.write_selection(tmp, rows)
    print("selected %d of %d unlabeled tracks (threshold %.3f, %s detector)"
          % (len(kept), len(entries), args.threshold, det.kind))
    return EXIT_OK


def cmd_augment_preview(args) -> int:
    clip = audio.to_mono_8k(audio.load_wav(args.input))
    chain = augment.raa_sample(args.seed)
    out = augment.apply_chain(clip, chain)
    with atomic_file(args.out) as tmp:
        audio.write_wav(tmp, out)
    with atomic_file(args.out + ".chain.txt") as tmp, open(tmp, "w") as fh:
        fh.write(chain.describe())
    print(chain.describe(), end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    params = model.load_checkpoint(args.checkpoint)
    clip = audio.load_wav(args.input)
    f0 = model.predict_contour(params, clip)
    with atomic_file(args.out) as tmp:
        pitch.write_f0(tmp, f0)
    print("wrote %d frames to %s" % (len(f0), args.out))
    return EXIT_OK


def _eval_pairs(ref, est, manifest=None):
    if os.path.isdir(ref) != os.path.isdir(est):
        raise UsageError("--ref and --est must both be files or both be directories")
    if not os.path.isdir(ref):
        return [os.path.splitext(os.path.basename(ref))[0]], [(pitch.read_f0(ref), pitch.read_f0(est))]
    if manifest:
        with open(manifest) as fh:
            ids = [json.loads(l)["track_id"] for l in fh if l.strip()]
        ids = [i for i in ids if os.path.exists(os.path.join(ref, i + ".f0"))]
    else:
        ids = sorted(os.path.splitext(f)[0] for f in os.listdir(ref) if f.endswith(".f0"))
    pairs = []
    for i in ids:
        e = os.path.join(est, i + ".f0")
        if not os.path.exists(e):
            raise DataError("missing estimate %s" % e)
        pairs.append((pitch.read_f0(os.path.join(ref, i + ".f0")), pitch.read_f0(e)))
    if not pairs:
        raise DataError("no reference f0 files found")
    return ids, pairs


def cmd_eval(args) -> int:
    ids, pairs = _eval_pairs(args.ref, args.est, args.manifest)
    report = metrics.evaluate_corpus([metrics.align(r, e) for r, e in pairs],
                                     args.tolerance, ids=ids)
    text = report.to_json()
    if args.out:
        with atomic_file(args.out) as tmp, open(tmp, "w") as fh:
            fh.write(text + "\n")
    c = report.corpus
    print("OA %.6f  RPA %.6f  VR %.6f  VFA %.6f  (%d frames)" % (c.oa, c.rpa, c.vr, c.vfa, c.total))
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = build_run_config(args)
    _require_corpus(cfg)
    if not cfg.output:
        raise UsageError("an output directory is required (--out or [run] output)")
    if args.id not in experiments.EXPERIMENTS:
        raise UsageError("unknown experiment %r" % args.id)
    ws = experiments.Workspace.from_corpus(cfg.corpus, cfg.ssl_config(), cfg.threads)
    if not ws.splits["test"]:
        raise DataError("the corpus has no test tracks")
    result = experiments.run_experiment(args.id, ws, cfg.seeds)
    with atomic_dir(cfg.output) as tmp:
        with open(os.path.join(tmp, "result.json"), "w") as fh:
            fh.write(result.to_json() + "\n")
        with open(os.path.join(tmp, "table.txt"), "w") as fh:
            fh.write(result.table() + "\n")
    print(result.table())
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _common_run(p, corpus=True):
    p.add_argument("--config", help="sectioned key = value run configuration")
    if corpus:
        p.add_argument("--corpus", help="corpus root written by 'synth'")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--threads", type=int, default=None, help="worker cap; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="melodyssl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--labeled", type=int, default=40)
    p.add_argument("--unlabeled", type=int, default=200)
    p.add_argument("--test", type=int, default=30)
    p.add_argument("--instrumental", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a supervised teacher")
    _common_run(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ssl-train", help="teacher-student self-training")
    _common_run(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", dest="ts_mode", choices=[m.value for m in ssl.TsMode])
    p.add_argument("--schedule", choices=[s.value for s in ssl.TrainSchedule])
    p.add_argument("--iterations", type=int)
    p.add_argument("--pseudo-labels", dest="pseudo_label_form", choices=["soft", "hard"])
    p.add_argument("--teacher", help="start from this teacher checkpoint")
    p.add_argument("--selection", help="selection.jsonl restricting the unlabeled pool")
    p.add_argument("--out", dest="output")
    p.set_defaults(func=cmd_ssl_train)

    p = sub.add_parser("select", help="vocal-ratio selection of the unlabeled pool")
    p.add_argument("--corpus", required=True)
    p.add_argument("--detector", choices=["heuristic", "model"], default="heuristic")
    p.add_argument("--checkpoint")
    p.add_argument("--threshold", type=float, default=selection.DEFAULT_THRESHOLD)
    p.add_argument("--out", required=True, help="selection.jsonl path")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("augment-preview", help="apply one random effect chain to a WAV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("predict", help="write an f0 file for a WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score estimated against reference f0")
    p.add_argument("--ref", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--manifest")
    p.add_argument("--tolerance", type=float, default=metrics.DEFAULT_TOLERANCE)
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run one of the experiments E1-E4")
    p.add_argument("--id", required=True, choices=list(experiments.EXPERIMENTS))
    _common_run(p)
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--out", dest="output")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_ARGS
    except ssl.NumericError as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, audio.AudioError, model.CheckpointError, model.ShapeError, OSError,
            ValueError, KeyError, json.JSONDecodeError) as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
