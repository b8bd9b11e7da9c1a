"""Benchmark harness: shared-sequence replay protocol and result files.

Protocol per (instance, policy) cell: arrival sequences are pre-sampled once
and shared across all policies (audited by hash), each sequence is replayed
n_choice_sims times with fresh choice randomness, and the perfect-information
benchmark gets exactly one deterministic solve per sequence. All randomness
derives from the config seed, so re-running a sweep with the same config
reproduces every output byte.
"""

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .choice import HOME_ONLY, ChoiceParams, Offer
from .env import (
    ARRIVAL_PERIOD_HOURS,
    ARRIVAL_RATE_PER_PERIOD,
    CAPTURE_HOURS,
    Arrival,
    EpisodeTrace,
    RngBundle,
    run_episode,
    sample_arrivals,
)
from .instance import Instance, generate_instance
from .policies import (
    DynamicNearestPolicy,
    RandomOfferPolicy,
    home_policy,
    nearest_policy,
    perfect_information_cached,
    perfect_information_solve,
    unrestricted_choice,
)
from .routing import COMPILED

POLICY_NAMES = ("home", "nearest", "dynamic", "random", "unrestricted",
                "perfect_info", "learned")

WORKERS_ENV = "LASTMILE_WORKERS"


@dataclass(frozen=True)
class BenchmarkConfig:
    L: float = 4.0
    num_pickups: int = 15
    regime: str = "base"
    policies: Tuple[str, ...] = ("home", "nearest", "dynamic", "random", "unrestricted")
    n_geo_instances: int = 5
    n_sequences: int = 20
    n_choice_sims: int = 20
    seed: int = 0
    T: float = CAPTURE_HOURS
    rate: float = ARRIVAL_RATE_PER_PERIOD
    period: float = ARRIVAL_PERIOD_HOURS
    tsp_threshold: int = 16
    dynamic_threshold: float = 0.3
    checkpoint: Optional[str] = None  # required by the learned policy
    pi_restarts: int = 20
    pi_enum_limit: int = 1_000_000
    pi_cache_dir: Optional[str] = None

    def __post_init__(self):
        unknown = [p for p in self.policies if p not in POLICY_NAMES]
        if unknown:
            raise ValueError("unknown policies %r (have %r)" % (unknown, POLICY_NAMES))


@dataclass(frozen=True)
class MetricsRecord:
    policy: str
    num_pickups: int
    L: float
    regime: str
    total_mean_g: float
    total_std_geo_g: float
    total_std_sim_g: float
    truck_mean_g: float
    truck_std_geo_g: float
    truck_std_sim_g: float
    customer_mean_g: float
    customer_std_geo_g: float
    customer_std_sim_g: float
    avg_visited_pickups: float
    pct_orders_at_pickup: float
    avg_offer_distance_m: Optional[float]
    emission_reduction_pct: float
    n_instances: int
    n_sequences: int
    n_choice_sims: int


CSV_COLUMNS = tuple(f.name for f in dataclasses.fields(MetricsRecord))


def emission_reduction(policy_total: float, home_total: float) -> float:
    """Percent emission saved relative to the all-home reference."""
    if not home_total > 0:
        raise ValueError("home reference total must be positive")
    return (home_total - policy_total) / home_total * 100.0


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _arrivals_hash(arrivals: Sequence[Arrival]) -> str:
    txt = ";".join(
        "%.17g,%.17g,%.17g" % (a.time, a.location.x, a.location.y) for a in arrivals
    )
    return hashlib.sha256(txt.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# per-replay bookkeeping


@dataclass(frozen=True)
class _SimStats:
    total: float
    truck: float
    customer: float
    visited: int
    orders: int
    pickup_orders: int
    offer_dist_km: float
    offer_count: int


def _trace_stats(trace: EpisodeTrace) -> _SimStats:
    offered = [r.offer_distance_km for r in trace.records
               if r.offer is not None and not r.offer.is_home_only]
    return _SimStats(
        total=trace.total_emission_g,
        truck=trace.truck_emission_g,
        customer=trace.customer_emission_g,
        visited=trace.visited_pickups,
        orders=trace.num_orders,
        pickup_orders=sum(1 for r in trace.records if r.outcome.chose_pickup),
        offer_dist_km=float(sum(offered)),
        offer_count=len(offered),
    )


class _AssignmentPolicy:
    """Replays a precomputed per-order assignment (perfect information)."""

    def __init__(self, assignment: Sequence[Optional[int]]):
        self.assignment = list(assignment)
        self.k = 0

    def reset(self):
        self.k = 0

    def __call__(self, state) -> Offer:
        a = self.assignment[self.k]
        self.k += 1
        return HOME_ONLY if a is None else Offer(a)


def _simulate_policy(
    name: str,
    cfg: BenchmarkConfig,
    params: ChoiceParams,
    instances: Sequence[Instance],
    sequences,
    seq_hashes,
    model,
) -> List[List[_SimStats]]:
    """Replay every (instance, sequence, sim) cell for one policy."""
    pol = POLICY_NAMES.index(name)
    per_instance: List[List[_SimStats]] = []
    for i, inst in enumerate(instances):
        sims: List[_SimStats] = []
        for s, arrivals in enumerate(sequences[i]):
            if _arrivals_hash(arrivals) != seq_hashes[i][s]:
                raise RuntimeError("shared arrival sequence mutated between policies")
            if name == "perfect_info":
                orders = [a.location for a in arrivals]
                kwargs = dict(
                    enum_limit=cfg.pi_enum_limit,
                    restarts=cfg.pi_restarts,
                    seed=_derive_seed(cfg.seed, 41, i, s),
                    tsp_threshold=cfg.tsp_threshold,
                )
                if cfg.pi_cache_dir:
                    res = perfect_information_cached(
                        inst, params, orders, cfg.pi_cache_dir, **kwargs
                    )
                else:
                    res = perfect_information_solve(inst, params, orders, **kwargs)
                rngs = RngBundle.from_seed(cfg.seed, 43, i, s)
                trace = run_episode(
                    inst, params, _AssignmentPolicy(res.assignment), rngs,
                    T=cfg.T, rate=cfg.rate, period=cfg.period, arrivals=arrivals,
                    forced_accept=True, tsp_threshold=cfg.tsp_threshold,
                )
                sims.append(_trace_stats(trace))
                continue
            for sim in range(cfg.n_choice_sims):
                kids = np.random.SeedSequence([cfg.seed, 53, pol, i, s, sim]).spawn(2)
                rngs = RngBundle(
                    arrivals=np.random.default_rng(0),  # unused: sequence is fixed
                    choices=np.random.default_rng(kids[0]),
                )
                hook = None
                if name == "home":
                    policy = home_policy
                elif name == "nearest":
                    policy = nearest_policy
                elif name == "dynamic":
                    policy = DynamicNearestPolicy(cfg.dynamic_threshold, cfg.T)
                elif name == "random":
                    policy = RandomOfferPolicy(np.random.default_rng(kids[1]))
                elif name == "unrestricted":
                    policy = home_policy  # placeholder; the hook decides
                    hook = unrestricted_choice
                elif name == "learned":
                    from .ppo import LearnedPolicy

                    policy = LearnedPolicy(model, cfg.L, cfg.T)
                else:  # pragma: no cover - guarded by BenchmarkConfig
                    raise ValueError(name)
                trace = run_episode(
                    inst, params, policy, rngs,
                    T=cfg.T, rate=cfg.rate, period=cfg.period, arrivals=arrivals,
                    choice_hook=hook, tsp_threshold=cfg.tsp_threshold,
                )
                sims.append(_trace_stats(trace))
        per_instance.append(sims)
    return per_instance


def _std(values, ddof: int = 1) -> float:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return 0.0
    return float(arr.std(ddof=ddof))


def _aggregate(
    name: str, cfg: BenchmarkConfig, per_instance: List[List[_SimStats]],
    home_total_mean: float,
) -> MetricsRecord:
    def sim_values(fn):
        return [np.array([fn(st) for st in sims]) for sims in per_instance]

    def mean_and_stds(fn):
        per_inst = sim_values(fn)
        inst_means = [v.mean() for v in per_inst]
        pooled = np.concatenate(per_inst)
        return float(np.mean(inst_means)), _std(inst_means), _std(pooled)

    total_mean, total_geo, total_sim = mean_and_stds(lambda st: st.total)
    truck_mean, truck_geo, truck_sim = mean_and_stds(lambda st: st.truck)
    cust_mean, cust_geo, cust_sim = mean_and_stds(lambda st: st.customer)
    visited_mean, _, _ = mean_and_stds(lambda st: float(st.visited))
    pct_mean, _, _ = mean_and_stds(
        lambda st: 100.0 * st.pickup_orders / st.orders if st.orders else 0.0
    )
    # distance over offers only; an instance without any pickup offer is skipped
    inst_dists = []
    for sims in per_instance:
        dist = sum(st.offer_dist_km for st in sims)
        count = sum(st.offer_count for st in sims)
        if count:
            inst_dists.append(dist / count)
    avg_dist_m = float(np.mean(inst_dists)) * 1000.0 if inst_dists else None
    return MetricsRecord(
        policy=name,
        num_pickups=cfg.num_pickups,
        L=cfg.L,
        regime=cfg.regime,
        total_mean_g=total_mean,
        total_std_geo_g=total_geo,
        total_std_sim_g=total_sim,
        truck_mean_g=truck_mean,
        truck_std_geo_g=truck_geo,
        truck_std_sim_g=truck_sim,
        customer_mean_g=cust_mean,
        customer_std_geo_g=cust_geo,
        customer_std_sim_g=cust_sim,
        avg_visited_pickups=visited_mean,
        pct_orders_at_pickup=pct_mean,
        avg_offer_distance_m=avg_dist_m,
        emission_reduction_pct=emission_reduction(total_mean, home_total_mean),
        n_instances=cfg.n_geo_instances,
        n_sequences=cfg.n_sequences,
        n_choice_sims=1 if name == "perfect_info" else cfg.n_choice_sims,
    )


def benchmark_instances(cfg: BenchmarkConfig) -> List[Instance]:
    return [
        generate_instance(cfg.L, cfg.num_pickups, _derive_seed(cfg.seed, 101, i))
        for i in range(cfg.n_geo_instances)
    ]


def benchmark_sequences(cfg: BenchmarkConfig, instances: Sequence[Instance]):
    sequences, hashes = [], []
    for i, inst in enumerate(instances):
        rows, row_hashes = [], []
        for s in range(cfg.n_sequences):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 211, i, s]))
            arr = sample_arrivals(inst, rng, T=cfg.T, rate=cfg.rate, period=cfg.period)
            rows.append(arr)
            row_hashes.append(_arrivals_hash(arr))
        sequences.append(rows)
        hashes.append(row_hashes)
    return sequences, hashes


def run_benchmark(cfg: BenchmarkConfig) -> List[MetricsRecord]:
    """All requested policies on one (L, |M|, regime) cell.

    The all-home reference is always simulated (it prices the
    emission_reduction column) even when not requested.
    """
    params = ChoiceParams.for_regime(cfg.regime)
    instances = benchmark_instances(cfg)
    sequences, seq_hashes = benchmark_sequences(cfg, instances)
    model = None
    if "learned" in cfg.policies:
        if not cfg.checkpoint:
            raise ValueError("learned policy needs a checkpoint path")
        from .nets import model_from_checkpoint

        model, _ = model_from_checkpoint(cfg.checkpoint)
        if model.num_pickups != cfg.num_pickups:
            raise ValueError(
                "checkpoint was trained for |M|=%d, cell has |M|=%d"
                % (model.num_pickups, cfg.num_pickups)
            )
    home_stats = _simulate_policy("home", cfg, params, instances, sequences,
                                  seq_hashes, model)
    home_total = _aggregate("home", cfg, home_stats, 1.0).total_mean_g
    records = []
    for name in cfg.policies:
        stats = home_stats if name == "home" else _simulate_policy(
            name, cfg, params, instances, sequences, seq_hashes, model
        )
        records.append(_aggregate(name, cfg, stats, home_total))
    return records


# ---------------------------------------------------------------------------
# sweep: cells over |M|, one CSV plus a manifest


@dataclass(frozen=True)
class SweepConfig:
    L: float = 4.0
    num_pickups_grid: Tuple[int, ...] = (4, 15, 30)
    regime: str = "base"
    policies: Tuple[str, ...] = ("home", "nearest", "dynamic", "random", "unrestricted")
    n_geo_instances: int = 5
    n_sequences: int = 20
    n_choice_sims: int = 20
    seed: int = 0
    T: float = CAPTURE_HOURS
    rate: float = ARRIVAL_RATE_PER_PERIOD
    period: float = ARRIVAL_PERIOD_HOURS
    tsp_threshold: int = 16
    dynamic_threshold: float = 0.3
    checkpoint: Optional[str] = None
    pi_restarts: int = 20
    pi_enum_limit: int = 1_000_000
    pi_cache_dir: Optional[str] = None


def cell_configs(cfg: SweepConfig) -> List[BenchmarkConfig]:
    drop = ("num_pickups_grid",)
    base = {k: v for k, v in dataclasses.asdict(cfg).items() if k not in drop}
    base["policies"] = tuple(base["policies"])
    return [BenchmarkConfig(num_pickups=m, **base) for m in cfg.num_pickups_grid]


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records: Sequence[MetricsRecord]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        lines.append(",".join(_csv_value(getattr(r, c)) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def sweep(cfg: SweepConfig, out_dir) -> Tuple[Path, Path, List[MetricsRecord]]:
    """Run every cell, then write results.csv and manifest.json.

    Cells are independent; with LASTMILE_WORKERS > 1 they run in a process
    pool. Results are written in cell order either way, so the output bytes
    do not depend on the worker count.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = cell_configs(cfg)
    workers = _worker_count()
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_cell = list(pool.map(run_benchmark, cells))
    else:
        per_cell = [run_benchmark(c) for c in cells]
    records = [r for cell in per_cell for r in cell]
    csv_text = records_to_csv(records)
    csv_path = out_dir / "results.csv"
    csv_path.write_text(csv_text)

    config_doc = dataclasses.asdict(cfg)
    seq_hashes = {}
    inst_seeds = {}
    for cell in cells:
        instances = benchmark_instances(cell)
        _, hashes = benchmark_sequences(cell, instances)
        seq_hashes[str(cell.num_pickups)] = hashes
        inst_seeds[str(cell.num_pickups)] = [inst.seed for inst in instances]
    manifest = {
        "schema_version": 1,
        "config": config_doc,
        "config_hash": hashlib.sha256(
            json.dumps(config_doc, sort_keys=True).encode()
        ).hexdigest()[:16],
        "build": {"package": "lastmile", "compiled_tsp": COMPILED},
        "instance_seeds": inst_seeds,
        "sequence_hashes": seq_hashes,
        "results_sha256": hashlib.sha256(csv_text.encode()).hexdigest(),
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return csv_path, manifest_path, records
