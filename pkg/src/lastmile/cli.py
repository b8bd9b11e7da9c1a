"""Command-line front end: instance generation, training, evaluation, sweeps,
and the perfect-information bound."""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import (
    POLICY_NAMES,
    BenchmarkConfig,
    SweepConfig,
    records_to_csv,
    run_benchmark,
    sweep,
)
from .choice import ChoiceParams, REGIMES
from .env import CAPTURE_HOURS, sample_arrivals
from .instance import generate_instance, load_instance, save_instance
from .policies import perfect_information_cached, perfect_information_solve
from .ppo import PpoConfig, train


def _add_geometry(p: argparse.ArgumentParser):
    p.add_argument("--L", type=float, default=4.0, help="region radius (km)")
    p.add_argument("--num-pickups", type=int, default=15, help="|M|, pickup point count")


def _add_regime(p: argparse.ArgumentParser):
    p.add_argument("--regime", choices=sorted(REGIMES), default="base",
                   help="acceptance-utility calibration")


def _instance_from_args(args):
    if getattr(args, "instance", None):
        return load_instance(args.instance)
    return generate_instance(args.L, args.num_pickups, args.instance_seed)


def cmd_generate_instances(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        inst = generate_instance(args.L, args.num_pickups, args.seed + i)
        path = save_instance(inst, out / ("instance_%03d.json" % i))
        print(path)
    return 0


def cmd_train(args) -> int:
    inst = _instance_from_args(args)
    params = ChoiceParams.for_regime(args.regime)
    cfg = PpoConfig(
        n_total=args.steps,
        learning_rate=args.learning_rate,
        entropy_coeff=args.entropy_coeff,
        eval_every_updates=args.eval_every,
        seed=args.seed,
    )
    result = train(
        inst, params, cfg,
        arch=args.arch,
        log_path=args.log,
        checkpoint_path=args.out,
        progress=None if args.quiet else lambda rec: print(json.dumps(rec, sort_keys=True)),
    )
    if result.aborted:
        print("training aborted: %s" % result.abort_reason, file=sys.stderr)
        return 1
    print("checkpoint written to %s after %d steps" % (result.checkpoint_path, result.steps_done))
    return 0


def _bench_kwargs(args) -> dict:
    return dict(
        L=args.L,
        regime=args.regime,
        policies=tuple(args.policy) if args.policy else
        ("home", "nearest", "dynamic", "random", "unrestricted"),
        n_geo_instances=args.instances,
        n_sequences=args.sequences,
        n_choice_sims=args.choice_sims,
        seed=args.seed,
        checkpoint=args.checkpoint,
        pi_cache_dir=args.pi_cache_dir,
    )


def cmd_evaluate(args) -> int:
    cfg = BenchmarkConfig(num_pickups=args.num_pickups, **_bench_kwargs(args))
    text = records_to_csv(run_benchmark(cfg))
    if args.out:
        Path(args.out).write_text(text)
        print(args.out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = SweepConfig(num_pickups_grid=tuple(args.num_pickups), **_bench_kwargs(args))
    csv_path, manifest_path, _ = sweep(cfg, args.out_dir)
    print(csv_path)
    print(manifest_path)
    return 0


def cmd_perfect_info(args) -> int:
    inst = _instance_from_args(args)
    params = ChoiceParams.for_regime(args.regime)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 211]))
    arrivals = sample_arrivals(inst, rng, T=CAPTURE_HOURS)
    orders = [a.location for a in arrivals]
    kwargs = dict(enum_limit=args.enum_limit, restarts=args.restarts, seed=args.seed)
    if args.cache_dir:
        res = perfect_information_cached(inst, params, orders, args.cache_dir, **kwargs)
    else:
        res = perfect_information_solve(inst, params, orders, **kwargs)
    print(json.dumps(
        {
            "num_orders": len(orders),
            "assignment": list(res.assignment),
            "objective_g": res.objective_g,
            "exact": res.exact,
        },
        sort_keys=True,
    ))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lastmile",
        description="Pickup-point offering: simulation, training, and benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-instances", help="write service-region instance files")
    _add_geometry(g)
    g.add_argument("--count", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(fn=cmd_generate_instances)

    t = sub.add_parser("train", help="train the offering policy on one instance")
    _add_geometry(t)
    _add_regime(t)
    t.add_argument("--instance", help="instance file; omitted = generate from geometry")
    t.add_argument("--instance-seed", type=int, default=0)
    t.add_argument("--arch", choices=("gat", "flat"), default="gat")
    t.add_argument("--steps", type=int, default=PpoConfig.n_total)
    t.add_argument("--learning-rate", type=float, default=PpoConfig.learning_rate)
    t.add_argument("--entropy-coeff", type=float, default=PpoConfig.entropy_coeff)
    t.add_argument("--eval-every", type=int, default=0,
                   help="greedy evaluation period in updates (0 = off)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log", help="JSONL progress log path")
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(fn=cmd_train)

    def add_bench_flags(p):
        _add_regime(p)
        p.add_argument("--policy", action="append", choices=POLICY_NAMES,
                       help="repeatable; default: the five comparison policies")
        p.add_argument("--instances", type=int, default=5, help="geographic instances")
        p.add_argument("--sequences", type=int, default=20, help="arrival sequences each")
        p.add_argument("--choice-sims", type=int, default=20,
                       help="choice replays per sequence")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--checkpoint", help="checkpoint for the learned policy")
        p.add_argument("--pi-cache-dir", help="cache directory for perfect-info solves")

    e = sub.add_parser("evaluate", help="benchmark policies on one |M| cell")
    e.add_argument("--L", type=float, default=4.0, help="region radius (km)")
    e.add_argument("--num-pickups", type=int, default=15)
    add_bench_flags(e)
    e.add_argument("--out", help="CSV path; omitted = stdout")
    e.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("sweep", help="benchmark a grid of |M| cells into a directory")
    s.add_argument("--L", type=float, default=4.0, help="region radius (km)")
    s.add_argument("--num-pickups", type=int, nargs="+", default=[4, 15, 30])
    add_bench_flags(s)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("perfect-info", help="full-information assignment bound")
    _add_geometry(p)
    _add_regime(p)
    p.add_argument("--instance", help="instance file; omitted = generate from geometry")
    p.add_argument("--instance-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0,
                   help="seeds both the arrival sequence and the solver restarts")
    p.add_argument("--enum-limit", type=int, default=1_000_000)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--cache-dir")
    p.set_defaults(fn=cmd_perfect_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
