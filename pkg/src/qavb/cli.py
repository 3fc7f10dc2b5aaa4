"""Command line entry point: ``qavb {gen,run,verify,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import anneal, datagen, harness, oracle


def _gen(args) -> int:
    spec = datagen.GenSpec(
        k_gen=args.k_gen,
        n=args.n,
        d=args.d,
        seed=args.seed,
        mean_box=args.mean_box,
        cov_scale=args.cov_scale,
        weight_mode=args.weights,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    datagen.write(spec, out)
    print(f"wrote {out} and {out.with_suffix('.truth.json')}")
    return 0


def _schedule_overrides(args) -> dict:
    pairs = {
        "beta0": args.beta0,
        "s0": args.s0,
        "tau_qa1": args.tau1,
        "tau_qa2": args.tau2,
        "tau_sa": args.tau_sa,
        "max_iters": args.max_iters,
    }
    return {k: v for k, v in pairs.items() if v is not None}


def build_config(args) -> harness.ExperimentConfig:
    """Config file first, then any flag given on the command line wins."""
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    over = _schedule_overrides(args)
    if args.algo:
        runs = [harness.RunSpec(a, anneal.ScheduleConfig.preset(a, **over)) for a in args.algo]
    else:
        runs = [harness.RunSpec(r.label, replace(r.schedule, **over)) for r in cfg.runs]
    changes = {"runs": runs}
    for attr, val in (
        ("k", args.k),
        ("trials", args.trials),
        ("base_seed", args.seed),
        ("data_path", args.data),
        ("out_dir", args.out),
        ("cluster_threshold", args.threshold),
        ("epsilon", args.epsilon),
    ):
        if val is not None:
            changes[attr] = val
    if args.nu0_literal:
        changes["nu0_literal"] = True
    merged = {**cfg.__dict__, **changes}
    return harness.ExperimentConfig(**merged)


def _run(args) -> int:
    cfg = build_config(args)
    summary = harness.run_experiments(cfg)
    print(f"{'label':<10} {'trials':>6} {'failed':>6} {'best_elbo':>16} {'success':>8}")
    for label, s in summary.algorithms.items():
        best = "nan" if s.best_elbo is None else f"{s.best_elbo:.6f}"
        print(f"{label:<10} {s.n_trials:>6} {s.n_failed:>6} {best:>16} {s.success_ratio:>8.3f}")
    print(f"results in {cfg.out_dir}")
    return 0


def _verify(args) -> int:
    reports = oracle.run_suite(args.seed)
    payload = [r.to_dict() for r in reports]
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0 if all(r.passed for r in reports) else 1


def _bench(args) -> int:
    times = harness.bench_e_step(args.sizes, k=args.k, repeats=args.repeats)
    prev = None
    for n, t in times.items():
        ratio = "" if prev is None else f"  x{t / prev:.2f} vs previous"
        print(f"N={n:>8d}  {t * 1e3:10.2f} ms{ratio}")
        prev = t
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qavb", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a synthetic mixture dataset")
    g.add_argument("--k-gen", type=int, default=10)
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mean-box", type=float, default=10.0)
    g.add_argument("--cov-scale", type=float, default=1.0)
    g.add_argument("--weights", choices=("uniform", "dirichlet"), default="uniform")
    g.add_argument("--out", default="data.csv")
    g.set_defaults(func=_gen)

    r = sub.add_parser("run", help="run trials and summarize")
    r.add_argument("--config", help="TOML or JSON experiment file")
    r.add_argument("--algo", action="append", choices=anneal.ALGORITHMS,
                   help="repeatable; default: every schedule in the config (qavb, savb, vb)")
    r.add_argument("--k", type=int)
    r.add_argument("--beta0", type=float)
    r.add_argument("--s0", type=float)
    r.add_argument("--tau1", type=int)
    r.add_argument("--tau2", type=int)
    r.add_argument("--tau-sa", type=int)
    r.add_argument("--max-iters", type=int)
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int, help="base seed; trial i uses seed + i")
    r.add_argument("--data", help="CSV dataset (default: generated)")
    r.add_argument("--out", help="output directory")
    r.add_argument("--threshold", type=float, help="cluster-count threshold in points")
    r.add_argument("--epsilon", type=float, help="success tolerance in ELBO units")
    r.add_argument("--nu0-literal", action="store_true", help="use nu0 = 1 instead of nu0 = D")
    r.set_defaults(func=_run)

    v = sub.add_parser("verify", help="run the oracle cross-checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=_verify)

    b = sub.add_parser("bench", help="time the E-step against N")
    b.add_argument("--sizes", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    b.add_argument("--k", type=int, default=15)
    b.add_argument("--repeats", type=int, default=3)
    b.set_defaults(func=_bench)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (harness.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
