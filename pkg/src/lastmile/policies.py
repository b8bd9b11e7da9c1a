"""Offer policies: home-only, nearest, dynamic nearest, unrestricted choice,
and the perfect-information assignment bound.

A policy is any callable mapping GraphState -> Offer; stateful policies may
expose reset(), which run_episode calls at episode start.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .choice import ChoiceOutcome, ChoiceParams, HOME_CHOICE, HOME_ONLY, Offer, expected_car_emission
from .env import CAPTURE_HOURS, GraphState
from .instance import Instance, Location, distance, instance_to_text
from .routing import solve_tsp

log = logging.getLogger(__name__)


def _order_location(state: GraphState) -> Location:
    if state.new_order_node is None or state.new_order_resolved:
        raise ValueError("state has no undecided order")
    return state.features[state.new_order_node].location


def _nearest(state: GraphState, candidates) -> Optional[int]:
    """Pickup node id with minimal distance to the order; ties -> lowest id."""
    loc = _order_location(state)
    best, best_d = None, math.inf
    for node in candidates:
        d = distance(loc, state.features[node].location)
        if d < best_d:
            best, best_d = node, d
    return best


def home_policy(state: GraphState) -> Offer:
    return HOME_ONLY


def nearest_policy(state: GraphState) -> Offer:
    node = _nearest(state, state.pickup_nodes())
    if node is None:
        return HOME_ONLY
    return Offer(node - 1)


class DynamicNearestPolicy:
    """Nearest pickup early on; later only pickups already in the route.

    Before threshold*T the offer is the plain nearest pickup. From then on the
    candidate set shrinks to pickups customers already selected (must-visit),
    which is what holds route fragmentation down; when none exist the offer is
    home-only. restrict_to="offered" switches the late-phase set to pickups
    offered so far instead.
    """

    def __init__(self, threshold: float = 0.3, T: float = CAPTURE_HOURS,
                 restrict_to: str = "must_visit"):
        if not 0.0 < threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")
        if restrict_to not in ("must_visit", "offered"):
            raise ValueError("restrict_to must be 'must_visit' or 'offered'")
        self.threshold = threshold
        self.T = T
        self.restrict_to = restrict_to
        self._offered: set = set()

    def reset(self):
        self._offered.clear()

    def __call__(self, state: GraphState) -> Offer:
        t = state.features[state.new_order_node].arrival_time
        if t < self.threshold * self.T:
            node = _nearest(state, state.pickup_nodes())
        else:
            if self.restrict_to == "offered":
                pool = sorted(self._offered)
            else:
                pool = [p for p in state.pickup_nodes() if state.features[p].must_visit]
            node = _nearest(state, pool)
        if node is None:
            return HOME_ONLY
        self._offered.add(node)
        return Offer(node - 1)


def dynamic_nearest_policy(state: GraphState, threshold: float = 0.3,
                           T: float = CAPTURE_HOURS) -> Offer:
    """One-shot form of DynamicNearestPolicy (must-visit reading)."""
    return DynamicNearestPolicy(threshold, T)(state)


class RandomOfferPolicy:
    """Uniform over the |M|+1 actions (every pickup plus home-only)."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def __call__(self, state: GraphState) -> Offer:
        a = int(self.rng.integers(0, state.num_pickups + 1))
        return HOME_ONLY if a == state.num_pickups else Offer(a)


def unrestricted_choice(
    instance: Instance, params: ChoiceParams, order_loc: Location, rng: np.random.Generator
) -> ChoiceOutcome:
    """Customer picks freely among all pickup points and home (logit over |M|+1).

    Plugs into run_episode's choice_hook; it cannot be an Offer-emitting policy
    because it sidesteps the single-offer decision space.
    """
    dists = [distance(order_loc, p) for p in instance.pickup_points]
    utils = [params.u0_pup - params.beta_pup * d for d in dists]
    utils.append(params.u0_home)
    top = max(utils)
    exps = np.exp(np.array(utils) - top)
    probs = exps / exps.sum()
    pick = int(rng.choice(len(probs), p=probs))
    if pick == len(dists):
        return HOME_CHOICE
    return ChoiceOutcome(True, pick, dists[pick])


# ---------------------------------------------------------------------------
# perfect information


@dataclass(frozen=True)
class PerfectInfoResult:
    assignment: Tuple[Optional[int], ...]  # per order: pickup index or None (home)
    objective_g: float
    exact: bool


def evaluate_assignment(
    instance: Instance,
    params: ChoiceParams,
    orders: Sequence[Location],
    assignment: Sequence[Optional[int]],
    tsp_cache: Optional[dict] = None,
    *,
    tsp_threshold: int = 16,
) -> float:
    """Total emission (g) of a full-information assignment with certain acceptance.

    Truck part: TSP over depot + homes of home-assigned orders + the distinct
    assigned pickups. Customer part keeps the expected-car-emission accounting
    so the bound stays comparable to policy totals.
    """
    homes = tuple(i for i, a in enumerate(assignment) if a is None)
    pickups = tuple(sorted({a for a in assignment if a is not None}))
    key = (homes, pickups)
    length = None if tsp_cache is None else tsp_cache.get(key)
    if length is None:
        points = [instance.depot]
        points += [orders[i] for i in homes]
        points += [instance.pickup_points[m] for m in pickups]
        length = solve_tsp(points, threshold=tsp_threshold).length_km
        if tsp_cache is not None:
            tsp_cache[key] = length
    total = params.e_truck_g_per_km * length
    for i, a in enumerate(assignment):
        if a is not None:
            total += expected_car_emission(params, distance(orders[i], instance.pickup_points[a]))
    return total


def _nearest_assignment(instance: Instance, orders) -> List[Optional[int]]:
    out: List[Optional[int]] = []
    for loc in orders:
        if instance.num_pickups == 0:
            out.append(None)
            continue
        dists = [distance(loc, p) for p in instance.pickup_points]
        out.append(int(np.argmin(dists)))
    return out


PAIR_MOVE_LIMIT = 250_000  # (|M|+1)^2 * n^2 cap for the pair-move phase


def perfect_information_solve(
    instance: Instance,
    params: ChoiceParams,
    orders: Sequence[Location],
    *,
    enum_limit: int = 1_000_000,
    restarts: int = 20,
    seed: int = 0,
    force_local_search: bool = False,
    tsp_threshold: int = 16,
) -> PerfectInfoResult:
    """Deterministic assignment bound with known locations and certain acceptance.

    Exhaustive over the (|M|+1)^n assignment space when that fits in
    enum_limit; otherwise local search from 20 starts (all-home, all-nearest,
    seeded random), first-improvement single-order reassignment sweeps plus,
    on small problems, pair reassignment passes. Pairs matter: dropping a
    pickup that serves two customers never looks good one move at a time.
    """
    n = len(orders)
    M = instance.num_pickups
    if n == 0:
        return PerfectInfoResult((), 0.0, True)
    cache: dict = {}

    def cost(a) -> float:
        return evaluate_assignment(instance, params, orders, a, cache, tsp_threshold=tsp_threshold)

    if not force_local_search and (M + 1) ** n <= enum_limit:
        best, best_obj = None, math.inf
        # value M encodes home delivery
        for combo in itertools.product(range(M + 1), repeat=n):
            a = tuple(None if v == M else v for v in combo)
            obj = cost(a)
            if obj < best_obj:
                best, best_obj = a, obj
        return PerfectInfoResult(best, best_obj, True)

    choices: List[Optional[int]] = [None] + list(range(M))
    do_pairs = (M + 1) ** 2 * n * n <= PAIR_MOVE_LIMIT
    # pure-strategy starts first: all-home sits in a wide basin of its own
    # (consolidating orders onto one pickup never pays one order at a time),
    # so each all-one-pickup start seeds the consolidated basins directly
    starts: List[List[Optional[int]]] = [[None] * n, _nearest_assignment(instance, orders)]
    starts += [[m] * n for m in range(M)]
    rng = np.random.default_rng([seed, n, M])
    while len(starts) < restarts:
        starts.append([None if v == M else int(v) for v in rng.integers(0, M + 1, size=n)])

    def first_improving_pair(a, obj):
        for i in range(n):
            for j in range(i + 1, n):
                for alt_i in choices:
                    for alt_j in choices:
                        if alt_i == a[i] and alt_j == a[j]:
                            continue
                        trial = list(a)
                        trial[i] = alt_i
                        trial[j] = alt_j
                        t_obj = cost(trial)
                        if t_obj < obj:
                            return trial, t_obj
        return None, obj

    best, best_obj = None, math.inf
    for start in starts:
        a = list(start)
        obj = cost(a)
        while True:
            improved = False
            for i in range(n):
                for alt in choices:
                    if alt == a[i]:
                        continue
                    trial = list(a)
                    trial[i] = alt
                    t_obj = cost(trial)
                    if t_obj < obj:
                        a, obj = trial, t_obj
                        improved = True
            if improved:
                continue
            if not do_pairs:
                break
            a2, obj = first_improving_pair(a, obj)
            if a2 is None:
                break
            a = a2
        if obj < best_obj:
            best, best_obj = tuple(a), obj
    return PerfectInfoResult(best, best_obj, False)


def _sequence_hash(orders: Sequence[Location]) -> str:
    txt = ";".join("%.17g,%.17g" % (o.x, o.y) for o in orders)
    return hashlib.sha256(txt.encode()).hexdigest()[:16]


def instance_hash(instance: Instance) -> str:
    return hashlib.sha256(instance_to_text(instance).encode()).hexdigest()[:16]


def perfect_information_cached(
    instance: Instance,
    params: ChoiceParams,
    orders: Sequence[Location],
    cache_dir,
    **kwargs,
) -> PerfectInfoResult:
    """File-cached solve keyed by (instance hash, order-sequence hash, regime)."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = "%s_%s_%s.json" % (instance_hash(instance), _sequence_hash(orders), params.regime)
    f = cache_dir / key
    if f.exists():
        doc = json.loads(f.read_text())
        return PerfectInfoResult(
            tuple(doc["assignment"]), float(doc["objective_g"]), bool(doc["exact"])
        )
    res = perfect_information_solve(instance, params, orders, **kwargs)
    f.write_text(
        json.dumps(
            {
                "assignment": list(res.assignment),
                "objective_g": res.objective_g,
                "exact": res.exact,
            }
        )
    )
    return res
