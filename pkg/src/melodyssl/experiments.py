"""Desk-scale experiment playbook.

E1  supervised teacher vs the three teacher-student objectives
E2  joint training vs pre-train then fine-tune vs pre-train only
E3  unlabeled pool size (25/50/100 %) with and without vocal selection
E4  number of self-training iterations (1..4)

A :class:`Workspace` owns the loaded corpus and caches the expensive pieces
(labeled spectrograms, one teacher per seed, finished self-training runs),
so conditions that share work only pay for it once. Every condition lists a
hash of everything that determines its numbers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import metrics, model, selection, ssl
from .seeding import rng_for

log = logging.getLogger(__name__)

EXPERIMENTS = ("E1", "E2", "E3", "E4")
POOL_FRACTIONS = (0.25, 0.5, 1.0)
MAX_ITERATIONS = 4


def config_hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(o):
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    if hasattr(o, "value"):
        return o.value
    raise TypeError(type(o))


def manifest_digest(root) -> str:
    with open(os.path.join(os.fspath(root), "manifest.jsonl"), "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


@dataclass
class RunRecord:
    """Per-iteration test scores of one self-training run (weights kept, pseudo labels dropped)."""
    reports: list
    students: list
    histories: list


class Workspace:
    def __init__(self, splits, base: ssl.SslConfig, threads: int = 1, corpus_id: str = ""):
        self.splits = splits
        self.base = base
        self.threads = threads
        self.corpus_id = corpus_id
        self._labeled = None
        self._teachers = {}
        self._runs = {}

    @classmethod
    def from_corpus(cls, root, base: ssl.SslConfig, threads: int = 1):
        return cls(ssl.corpus_splits(root, threads), base, threads, manifest_digest(root))

    @property
    def labeled(self) -> ssl.LabeledSet:
        if self._labeled is None:
            shifts = ssl.SHIFTS if self.base.pitch_shift else ()
            self._labeled = ssl.labeled_set(self.splits["train"], shifts, self.threads)
        return self._labeled

    def teacher_key(self, seed):
        return config_hash("teacher", self.corpus_id, replace(self.base, seed=seed).train_config())

    def teacher(self, seed: int) -> model.ModelParams:
        key = self.teacher_key(seed)
        if key not in self._teachers:
            cfg = replace(self.base, seed=seed).train_config()
            res = ssl.train_teacher(self.splits["train"], self.splits["val"], cfg, self.threads,
                                    self.labeled)
            self._teachers[key] = res.params
        return self._teachers[key]

    def test_report(self, params) -> metrics.EvalReport:
        return ssl.evaluate_tracks(params, self.splits["test"], self.threads)

    def pool(self, kinds=("vocal", "instrumental")):
        return [t for t in self.splits["unlabeled"] if t.kind in kinds]

    def run(self, cfg: ssl.SslConfig, pool) -> RunRecord:
        """Self-train (cached); a longer run extends a cached shorter one."""
        pool = list(pool)
        ids = [t.track_id for t in pool]
        base_key = config_hash("ssl", self.corpus_id, replace(cfg, iterations=1), ids)
        rec = self._runs.get(base_key)
        done = len(rec.reports) if rec else 0
        if done < cfg.iterations:
            teacher = rec.students[-1] if rec else self.teacher(cfg.seed)
            _, results = ssl.self_train(self.splits["train"], self.splits["val"], pool, cfg,
                                        self.splits["test"], self.threads, teacher=teacher,
                                        labeled=self.labeled, start_iteration=done + 1)
            if rec is None:
                rec = RunRecord([], [], [])
            for r in results:
                rec.reports.append(r.report)
                rec.students.append(r.student)
                rec.histories.append(r.history)
            self._runs[base_key] = rec
        return RunRecord(rec.reports[:cfg.iterations], rec.students[:cfg.iterations],
                         rec.histories[:cfg.iterations])

    def select_pool(self, seed: int, pool, threshold=selection.DEFAULT_THRESHOLD):
        """Vocal selection with the seed's teacher as voicing detector."""
        det = selection.VoicingDetector("model", self.teacher(seed))
        ratios = ssl.pmap(lambda t: selection.vocal_ratio(None, det, spec=t.spec), pool,
                          self.threads)
        kept, rows = selection.select_by_ratio([t.track_id for t in pool], ratios, threshold,
                                               "model")
        kept = set(kept)
        return [t for t in pool if t.track_id in kept], rows


@dataclass
class Condition:
    name: str
    config_hash: str
    seeds: list
    per_seed: list           # one metrics dict per seed
    extra: dict = field(default_factory=dict)

    @property
    def mean_oa(self) -> float:
        return float(np.mean([m["oa"] for m in self.per_seed]))

    def to_dict(self):
        return {"name": self.name, "config_hash": self.config_hash, "seeds": self.seeds,
                "per_seed": self.per_seed, "mean_oa": round(self.mean_oa, 6), **self.extra}


@dataclass
class ExperimentResult:
    experiment: str
    conditions: list
    seeds: list
    wall_clock: float = 0.0

    def condition(self, name) -> Condition:
        return next(c for c in self.conditions if c.name == name)

    def table(self) -> str:
        lines = ["%s  (seeds %s)" % (self.experiment, ",".join(map(str, self.seeds))),
                 "%-34s %8s   %s" % ("condition", "mean OA", "per-seed OA")]
        for c in self.conditions:
            lines.append("%-34s %8.4f   %s" % (c.name, c.mean_oa,
                                               " ".join("%.4f" % m["oa"] for m in c.per_seed)))
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({"experiment": self.experiment, "seeds": self.seeds,
                           "wall_clock_seconds": round(self.wall_clock, 3),
                           "conditions": [c.to_dict() for c in self.conditions]}, indent=2)


def _scores(report: metrics.EvalReport) -> dict:
    return report.corpus.rounded()


def _supervised(ws: Workspace, seeds) -> Condition:
    per = [_scores(ws.test_report(ws.teacher(s))) for s in seeds]
    return Condition("supervised", config_hash("supervised", [ws.teacher_key(s) for s in seeds]),
                     list(seeds), per)


def _ssl_condition(ws: Workspace, name, seeds, pool, iteration=None, **overrides) -> Condition:
    per, hashes = [], []
    for s in seeds:
        cfg = replace(ws.base, seed=s, **overrides)
        rec = ws.run(cfg, pool)
        idx = (iteration or cfg.iterations) - 1
        per.append(_scores(rec.reports[idx]))
        hashes.append(config_hash("ssl", ws.corpus_id, cfg, [t.track_id for t in pool]))
    return Condition(name, config_hash(hashes), list(seeds), per)


def run_e1(ws: Workspace, seeds) -> ExperimentResult:
    pool = ws.pool()
    conds = [_supervised(ws, seeds)]
    for mode in ssl.TsMode:
        conds.append(_ssl_condition(ws, mode.value, seeds, pool, ts_mode=mode,
                                    schedule=ssl.TrainSchedule.JOINT, iterations=1))
    return ExperimentResult("E1", conds, list(seeds))


def run_e2(ws: Workspace, seeds) -> ExperimentResult:
    pool = ws.pool()
    conds = [_ssl_condition(ws, sched.value, seeds, pool, ts_mode=ssl.TsMode.NOISY_STUDENT,
                            schedule=sched, iterations=1)
             for sched in ssl.TrainSchedule]
    return ExperimentResult("E2", conds, list(seeds))


def subsample(pool, fraction: float, seed: int):
    """Deterministic subset of the pool (same order of preference for every size)."""
    order = rng_for(seed, "pool-subset").permutation(len(pool))
    n = max(1, int(round(fraction * len(pool))))
    keep = set(order[:n].tolist())
    return [t for i, t in enumerate(pool) if i in keep]


def run_e3(ws: Workspace, seeds) -> ExperimentResult:
    full = ws.pool()
    conds = []
    for frac in POOL_FRACTIONS:
        for selected in (False, True):
            per, hashes, sizes = [], [], []
            for s in seeds:
                pool = subsample(full, frac, s)
                if selected:
                    pool, _ = ws.select_pool(s, pool)
                cfg = replace(ws.base, seed=s, ts_mode=ssl.TsMode.NOISY_STUDENT,
                              schedule=ssl.TrainSchedule.JOINT, iterations=1)
                per.append(_scores(ws.run(cfg, pool).reports[0]))
                hashes.append(config_hash("ssl", ws.corpus_id, cfg, [t.track_id for t in pool]))
                sizes.append(len(pool))
            name = "pool %d%% %s" % (round(frac * 100), "selected" if selected else "unselected")
            conds.append(Condition(name, config_hash(hashes), list(seeds), per,
                                   {"pool_sizes": sizes}))
    return ExperimentResult("E3", conds, list(seeds))


def run_e4(ws: Workspace, seeds, max_iterations: int = MAX_ITERATIONS) -> ExperimentResult:
    pool = ws.pool()
    conds = [_supervised(ws, seeds)]
    conds[0].name = "k=0 (teacher)"
    for k in range(1, max_iterations + 1):
        conds.append(_ssl_condition(ws, "k=%d" % k, seeds, pool, ts_mode=ssl.TsMode.NOISY_STUDENT,
                                    schedule=ssl.TrainSchedule.JOINT, iterations=k))
    return ExperimentResult("E4", conds, list(seeds))


RUNNERS = {"E1": run_e1, "E2": run_e2, "E3": run_e3, "E4": run_e4}


def run_experiment(exp_id: str, ws: Workspace, seeds) -> ExperimentResult:
    if exp_id not in RUNNERS:
        raise ValueError("unknown experiment %r (expected one of %s)" % (exp_id, ", ".join(EXPERIMENTS)))
    t0 = time.time()
    res = RUNNERS[exp_id](ws, list(seeds))
    res.wall_clock = time.time() - t0
    return res
