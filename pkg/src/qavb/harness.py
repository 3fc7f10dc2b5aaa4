"""Batch runner: many seeded trials per schedule, JSONL records, summaries.

Output directory layout (all files are rewritten on every run)::

    config.json     resolved experiment configuration
    data.csv        the dataset actually used (plus data.truth.json if generated)
    trials.jsonl    one TrialResult per line, ordered by schedule then seed
    summary.csv     one row per schedule label
    scatter.dat     "label n_clusters elbo frequency" rows for gnuplot
"""

from __future__ import annotations

import csv
import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import anneal, datagen, gmm

log = logging.getLogger(__name__)

WORKERS_ENV = "QAVB_WORKERS"
DEFAULT_EPSILON = 1e-4
ELBO_ROUND = 6


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSpec:
    """A labelled schedule; labels keep two runs of one algorithm apart."""

    label: str
    schedule: anneal.ScheduleConfig


@dataclass
class ExperimentConfig:
    data_path: str | None = None
    gen: datagen.GenSpec | None = None
    k: int = 15
    alpha0: float = 0.001
    gamma0: float = 0.001
    nu0: float | None = None
    nu0_literal: bool = False
    runs: list = field(default_factory=list)
    trials: int = 50
    base_seed: int = 0
    out_dir: str = "runs/default"
    cluster_threshold: float = 1.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.data_path is None and self.gen is None:
            self.gen = datagen.GenSpec()
        if self.data_path is not None and not Path(self.data_path).exists():
            raise ConfigError(f"dataset not found: {self.data_path}")
        if not self.runs:
            self.runs = [RunSpec(a, anneal.ScheduleConfig.preset(a)) for a in anneal.ALGORITHMS]
        labels = [r.label for r in self.runs]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate run labels: {labels}")

    def prior(self, d: int) -> gmm.GmmPrior:
        if self.nu0 is not None:
            nu0 = self.nu0
        else:
            nu0 = 1.0 if self.nu0_literal else float(d)
        return gmm.GmmPrior(k=self.k, d=d, alpha0=self.alpha0, gamma0=self.gamma0, nu0=nu0)

    def load_data(self) -> tuple[gmm.Dataset, datagen.GroundTruth | None]:
        if self.data_path is not None:
            return gmm.load_csv(self.data_path), None
        return datagen.generate(self.gen)

    def to_dict(self) -> dict:
        return {
            "data_path": self.data_path,
            "gen": asdict(self.gen) if self.gen else None,
            "k": self.k,
            "alpha0": self.alpha0,
            "gamma0": self.gamma0,
            "nu0": self.nu0,
            "nu0_literal": self.nu0_literal,
            "runs": [{"label": r.label, **asdict(r.schedule)} for r in self.runs],
            "trials": self.trials,
            "base_seed": self.base_seed,
            "out_dir": self.out_dir,
            "cluster_threshold": self.cluster_threshold,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        gen = raw.pop("gen", None)
        runs = raw.pop("runs", None)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        sched_keys = {f.name for f in fields(anneal.ScheduleConfig)}
        parsed = []
        for item in runs or []:
            item = dict(item)
            label = item.pop("label", item.get("algorithm", "qavb"))
            bad = set(item) - sched_keys
            if bad:
                raise ConfigError(f"unknown schedule keys: {sorted(bad)}")
            algo = item.pop("algorithm", "qavb")
            parsed.append(RunSpec(label, anneal.ScheduleConfig.preset(algo, **item)))
        return cls(
            gen=datagen.GenSpec(**gen) if gen is not None else None,
            runs=parsed,
            **raw,
        )


def load_config(path) -> ExperimentConfig:
    """Read a TOML or JSON experiment file (by extension)."""
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        raw = tomllib.loads(text.decode())
    else:
        raw = json.loads(text)
    if raw.get("data_path"):
        p = Path(raw["data_path"])
        if not p.is_absolute():
            raw["data_path"] = str(path.parent / p)
    return ExperimentConfig.from_dict(raw)


@dataclass
class AlgorithmSummary:
    label: str
    n_trials: int
    n_failed: int
    best_elbo: float | None
    success_ratio: float
    # (n_clusters, elbo rounded to 1e-6) -> count
    histogram: dict

    def to_dict(self) -> dict:
        d = asdict(self)
        d["histogram"] = [
            {"n_clusters": k, "elbo": e, "count": c} for (k, e), c in sorted(self.histogram.items())
        ]
        return d


@dataclass
class Summary:
    algorithms: dict
    epsilon: float

    def __getitem__(self, label) -> AlgorithmSummary:
        return self.algorithms[label]


class SummaryFold:
    """Order-independent accumulator behind :func:`summarize`."""

    def __init__(self):
        self._outcomes: dict[str, Counter] = {}
        self._failed: Counter = Counter()

    def add(self, record: dict) -> "SummaryFold":
        label = record.get("label", record["algorithm"])
        bucket = self._outcomes.setdefault(label, Counter())
        if record.get("error") is not None or record.get("final_elbo") is None:
            self._failed[label] += 1
        else:
            bucket[(int(record["n_clusters"]), float(record["final_elbo"]))] += 1
        return self

    def result(self, epsilon: float = DEFAULT_EPSILON) -> Summary:
        if not self._outcomes:
            raise ValueError("no trial records to summarize")
        out = {}
        for label in sorted(self._outcomes):
            bucket = self._outcomes[label]
            n_ok = sum(bucket.values())
            total = n_ok + self._failed[label]
            best = max((e for _, e in bucket), default=None)
            hits = sum(c for (_, e), c in bucket.items() if abs(e - best) <= epsilon) if n_ok else 0
            hist = Counter()
            for (k, e), c in bucket.items():
                hist[(k, round(e, ELBO_ROUND))] += c
            out[label] = AlgorithmSummary(
                label=label,
                n_trials=total,
                n_failed=self._failed[label],
                best_elbo=best,
                success_ratio=hits / total,
                histogram=dict(hist),
            )
        return Summary(out, epsilon)


def summarize(records, epsilon: float = DEFAULT_EPSILON) -> Summary:
    fold = SummaryFold()
    for rec in records:
        fold.add(rec)
    return fold.result(epsilon)


def _trial_job(args):
    label, prior, data, sched, seed, threshold = args
    try:
        res = anneal.run_trial(prior, data, sched, seed, cluster_threshold=threshold)
        rec = res.to_dict()
    except (ArithmeticError, ValueError, FloatingPointError) as exc:
        rec = {
            "seed": seed,
            "algorithm": sched.algorithm,
            "final_elbo": None,
            "n_clusters": None,
            "error": f"{type(exc).__name__}: {exc}",
        }
    return {"label": label, **rec}


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc


def iter_trials(cfg: ExperimentConfig, data: gmm.Dataset, workers: int | None = None):
    """Yield trial records in (run, seed) order regardless of worker count."""
    prior = cfg.prior(data.d)
    jobs = [
        (run.label, prior, data, run.schedule, cfg.base_seed + i, cfg.cluster_threshold)
        for run in cfg.runs
        for i in range(cfg.trials)
    ]
    workers = worker_count() if workers is None else workers
    if workers == 1:
        for job in jobs:
            yield _trial_job(job)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order
        yield from pool.map(_trial_job, jobs)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_summary(summary: Summary, out_dir: Path) -> None:
    with (out_dir / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "n_trials", "n_failed", "best_elbo", "success_ratio", "epsilon"])
        for label, s in summary.algorithms.items():
            writer.writerow(
                [label, s.n_trials, s.n_failed, repr(s.best_elbo), repr(s.success_ratio), repr(summary.epsilon)]
            )
    with (out_dir / "scatter.dat").open("w") as fh:
        fh.write("# label n_clusters elbo frequency\n")
        for label, s in summary.algorithms.items():
            for (k, e), c in sorted(s.histogram.items()):
                fh.write(f"{label} {k} {e!r} {c}\n")


def run_experiments(cfg: ExperimentConfig, workers: int | None = None) -> Summary:
    out_dir = Path(cfg.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    data, truth = cfg.load_data()
    _write_json(out_dir / "config.json", cfg.to_dict())
    gmm.save_csv(data, out_dir / "data.csv")
    if truth is not None:
        _write_json(out_dir / "data.truth.json", {"spec": asdict(cfg.gen), **truth.to_dict()})

    fold = SummaryFold()
    with (out_dir / "trials.jsonl").open("w") as fh:
        for rec in iter_trials(cfg, data, workers):
            if rec.get("error"):
                log.warning("trial %s/%s failed: %s", rec["label"], rec["seed"], rec["error"])
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fold.add(rec)
    summary = fold.result(cfg.epsilon)
    write_summary(summary, out_dir)
    return summary


def read_records(path):
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def bench_e_step(sizes=(1_000, 10_000, 100_000), k: int = 15, repeats: int = 3, seed: int = 0,
                 beta: float = 2.0, s: float = 0.5) -> dict:
    """Best-of-``repeats`` wall time of one quantum E-step per dataset size."""
    import time

    import numpy as np

    state = anneal.AnnealState(0, beta, s)
    hqu = anneal.hopping_matrix(k)
    times = {}
    for n in sizes:
        data, _ = datagen.generate(datagen.GenSpec(k_gen=10, n=int(n), seed=seed))
        prior = gmm.GmmPrior.standard(k, data.d)
        r = anneal.initial_responsibilities(data.n, k, seed)
        post = gmm.m_step(prior, data, r, 1.0)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            anneal.e_step(post, data, state, hqu)
            best = min(best, time.perf_counter() - t0)
        times[int(n)] = best
    return times
