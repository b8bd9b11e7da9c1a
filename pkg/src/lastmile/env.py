"""Order-capture MDP: graph state, Poisson arrivals, two-step transitions, episodes.

Node ids are stable integers: 0 = depot, 1..|M| = pickup points, then customers
in arrival order. An episode walks the arrival sequence, makes one offer per
order, resolves the customer's choice, and finally prices the truck route over
the must-visit set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .choice import ChoiceOutcome, ChoiceParams, HOME_CHOICE, Offer, customer_emission, sample_choice
from .instance import Instance, Location, distance, sample_customer_location
from .routing import Tour, plan_route

# capture-phase defaults: 8 h window, one expected order per 15 min
CAPTURE_HOURS = 8.0
ARRIVAL_PERIOD_HOURS = 0.25
ARRIVAL_RATE_PER_PERIOD = 1.0

DEPOT = 0


@dataclass
class NodeFeature:
    location: Location
    arrival_time: float  # nonzero only while the node is the undecided new order
    is_pickup: bool
    must_visit: bool


@dataclass
class GraphState:
    num_pickups: int
    features: List[NodeFeature]  # index == node id
    arcs: Set[Tuple[int, int]]
    epoch_index: int
    clock: float
    new_order_node: Optional[int]  # latest order node; keeps the slot once resolved
    new_order_resolved: bool
    pickup_choice: Dict[int, int] = field(default_factory=dict)  # customer -> pickup node

    @property
    def num_nodes(self) -> int:
        return len(self.features)

    def pickup_nodes(self) -> range:
        return range(1, self.num_pickups + 1)

    def must_visit_nodes(self) -> Tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.features) if f.must_visit)

    def copy(self) -> "GraphState":
        return GraphState(
            num_pickups=self.num_pickups,
            features=[replace(f) for f in self.features],
            arcs=set(self.arcs),
            epoch_index=self.epoch_index,
            clock=self.clock,
            new_order_node=self.new_order_node,
            new_order_resolved=self.new_order_resolved,
            pickup_choice=dict(self.pickup_choice),
        )


def initial_state(instance: Instance) -> GraphState:
    """Depot plus pickup points; no customers yet."""
    feats = [NodeFeature(instance.depot, 0.0, False, True)]
    arcs: Set[Tuple[int, int]] = set()
    for i, loc in enumerate(instance.pickup_points, start=1):
        feats.append(NodeFeature(loc, 0.0, True, False))
        arcs.add((i, i))
        arcs.add((DEPOT, i))
    return GraphState(
        num_pickups=instance.num_pickups,
        features=feats,
        arcs=arcs,
        epoch_index=0,
        clock=0.0,
        new_order_node=None,
        new_order_resolved=True,
    )


def insert_order(state: GraphState, arrival_time: float, loc: Location) -> GraphState:
    """Append an order node: self-loop plus arcs from every must-visit node.

    The previous order (if any) loses its incoming arcs and its time feature;
    its own must-visit status / designated-pickup arc were settled by
    apply_decision already.
    """
    s = state.copy()
    old = s.new_order_node
    node = s.num_nodes
    s.features.append(NodeFeature(loc, arrival_time, False, False))
    if old is not None:
        s.arcs = {(i, j) for (i, j) in s.arcs if j != old}
        s.features[old].arrival_time = 0.0
    s.arcs.add((node, node))
    for i, f in enumerate(s.features):
        if f.must_visit and i != node:
            s.arcs.add((i, node))
    s.new_order_node = node
    s.new_order_resolved = False
    s.clock = arrival_time
    return s


def _offer_targets(state: GraphState) -> List[int]:
    targets = list(state.pickup_nodes())
    if state.new_order_node is not None:
        targets.append(state.new_order_node)
    return targets


def apply_decision(
    state: GraphState,
    offer: Optional[Offer],
    outcome: ChoiceOutcome,
    next_order: Optional[Tuple[float, Location]] = None,
) -> GraphState:
    """Two-step transition: insert the next order, then resolve this one's choice.

    Step 1 (only when next_order is given) appends the next order node with its
    self-loop and arcs from every must-visit node, and strips the arcs into the
    order being served. Step 2 marks the chosen pickup (or the customer's home)
    as must-visit and adds its arcs toward the pickup points and the new order.
    Without a next order only step 2 runs and the state is terminal-ready.
    """
    if state.new_order_node is None or state.new_order_resolved:
        raise ValueError("state has no undecided order")
    served = state.new_order_node
    if next_order is not None:
        s = insert_order(state, next_order[0], next_order[1])
    else:
        s = state.copy()
        s.new_order_resolved = True
    targets = _offer_targets(s)

    if outcome.chose_pickup:
        chosen = 1 + outcome.pickup_index
        if not 1 <= chosen <= s.num_pickups:
            raise ValueError("chosen pickup %r out of range" % outcome.pickup_index)
        s.features[chosen].must_visit = True
        for j in targets:
            if j != chosen:
                s.arcs.add((chosen, j))
        s.arcs.add((served, chosen))
        s.pickup_choice[served] = chosen
    else:
        f = s.features[served]
        f.must_visit = True
        s.arcs.add((served, served))
        for j in targets:
            if j != served:
                s.arcs.add((served, j))
    s.epoch_index = state.epoch_index + 1
    return s


def rebuild_arcs(state: GraphState) -> Set[Tuple[int, int]]:
    """Arc set reconstructed from scratch (oracle for the incremental updates).

    Rules: self-loops on pickup points and the latest order; arcs from every
    must-visit node to each pickup point and the latest order; one arc from
    each pickup-choosing customer to its designated pickup point.
    """
    arcs: Set[Tuple[int, int]] = set()
    targets = _offer_targets(state)
    for p in state.pickup_nodes():
        arcs.add((p, p))
    new = state.new_order_node
    if new is not None:
        arcs.add((new, new))
    for i, f in enumerate(state.features):
        if f.must_visit:
            if not f.is_pickup and i != DEPOT:
                arcs.add((i, i))
            for j in targets:
                if j != i:
                    arcs.add((i, j))
    for cust, pup in state.pickup_choice.items():
        arcs.add((cust, pup))
    return arcs


@dataclass(frozen=True)
class Arrival:
    time: float
    location: Location


def sample_arrivals(
    instance: Instance,
    rng: np.random.Generator,
    *,
    T: float = CAPTURE_HOURS,
    rate: float = ARRIVAL_RATE_PER_PERIOD,
    period: float = ARRIVAL_PERIOD_HOURS,
) -> List[Arrival]:
    """Homogeneous Poisson arrivals over [0, T): sorted times plus locations."""
    if T < 0:
        raise ValueError("T must be >= 0")
    if T == 0:
        return []
    count = int(rng.poisson(rate * T / period))
    times = np.sort(rng.uniform(0.0, T, size=count))
    return [Arrival(float(t), sample_customer_location(instance, rng)) for t in times]


@dataclass
class RngBundle:
    """Separate streams so arrival sequences can be shared across policies
    while choice randomness stays fresh per replay."""

    arrivals: np.random.Generator
    choices: np.random.Generator

    @classmethod
    def from_seed(cls, *seed_parts: int) -> "RngBundle":
        root = np.random.SeedSequence(list(seed_parts))
        kids = root.spawn(2)
        return cls(np.random.default_rng(kids[0]), np.random.default_rng(kids[1]))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    order_node: int
    arrival_time: float
    order_location: Location
    offer: Optional[Offer]  # None when an environment-level choice hook ran
    offer_distance_km: Optional[float]
    outcome: ChoiceOutcome
    customer_emission_g: float


@dataclass(frozen=True)
class EpisodeTrace:
    num_pickups: int
    records: Tuple[EpochRecord, ...]
    must_visit_nodes: Tuple[int, ...]
    tour: Optional[Tour]
    truck_emission_g: float
    customer_emission_g: float
    total_emission_g: float

    @property
    def num_orders(self) -> int:
        return len(self.records)

    @property
    def visited_pickups(self) -> int:
        # pickups carry ids 1..|M|; the depot is 0 and customers follow
        return sum(1 for i in self.must_visit_nodes if 1 <= i <= self.num_pickups)


ChoiceHook = Callable[[Instance, ChoiceParams, Location, np.random.Generator], ChoiceOutcome]


def run_episode(
    instance: Instance,
    params: ChoiceParams,
    policy: Callable[[GraphState], Offer],
    rngs: RngBundle,
    *,
    T: float = CAPTURE_HOURS,
    rate: float = ARRIVAL_RATE_PER_PERIOD,
    period: float = ARRIVAL_PERIOD_HOURS,
    arrivals: Optional[Sequence[Arrival]] = None,
    forced_accept: bool = False,
    choice_hook: Optional[ChoiceHook] = None,
    tsp_threshold: int = 16,
) -> EpisodeTrace:
    """One capture-phase day plus the priced fulfillment route.

    forced_accept makes every pickup offer stick (test hook / certain-acceptance
    benchmarks). choice_hook replaces the offer-and-accept step entirely with a
    direct choice over all pickup points (the unrestricted benchmark).
    """
    if arrivals is None:
        arrivals = sample_arrivals(instance, rngs.arrivals, T=T, rate=rate, period=period)
    if hasattr(policy, "reset"):
        policy.reset()
    state = initial_state(instance)
    records: List[EpochRecord] = []
    if arrivals:
        state = insert_order(state, arrivals[0].time, arrivals[0].location)
    for k, arr in enumerate(arrivals):
        order_node = state.new_order_node
        if choice_hook is not None:
            offer = None
            offer_dist = None
            outcome = choice_hook(instance, params, arr.location, rngs.choices)
        else:
            offer = policy(state)
            if offer.is_home_only:
                offer_dist = None
                outcome = HOME_CHOICE
            else:
                pickup_loc = instance.pickup_points[offer.pickup_index]
                offer_dist = distance(arr.location, pickup_loc)
                if forced_accept:
                    outcome = ChoiceOutcome(True, offer.pickup_index, offer_dist)
                else:
                    outcome = sample_choice(params, offer, offer_dist, rngs.choices)
        emission = customer_emission(params, outcome)
        records.append(
            EpochRecord(
                epoch=k,
                order_node=order_node,
                arrival_time=arr.time,
                order_location=arr.location,
                offer=offer,
                offer_distance_km=offer_dist,
                outcome=outcome,
                customer_emission_g=emission,
            )
        )
        nxt = arrivals[k + 1] if k + 1 < len(arrivals) else None
        state = apply_decision(
            state, offer, outcome, (nxt.time, nxt.location) if nxt else None
        )
    tour = plan_route(state, params, threshold=tsp_threshold)
    truck_g = tour.emission_g
    cust_g = sum(r.customer_emission_g for r in records)
    return EpisodeTrace(
        num_pickups=instance.num_pickups,
        records=tuple(records),
        must_visit_nodes=state.must_visit_nodes(),
        tour=tour,
        truck_emission_g=truck_g,
        customer_emission_g=cust_g,
        total_emission_g=cust_g + truck_g,
    )


# ---------------------------------------------------------------------------
# trace export (line-delimited, fixed field order, diff-friendly)


def trace_to_lines(trace: EpisodeTrace) -> List[str]:
    lines = []
    for r in trace.records:
        lines.append(
            json.dumps(
                {
                    "epoch": r.epoch,
                    "order_node": r.order_node,
                    "arrival_time": r.arrival_time,
                    "order_x": r.order_location.x,
                    "order_y": r.order_location.y,
                    "offer": "none"
                    if r.offer is None
                    else ("home" if r.offer.is_home_only else r.offer.pickup_index),
                    "offer_distance_km": r.offer_distance_km,
                    "chose_pickup": r.outcome.chose_pickup,
                    "pickup_index": r.outcome.pickup_index,
                    "distance_km": r.outcome.distance_km,
                    "customer_emission_g": r.customer_emission_g,
                }
            )
        )
    lines.append(
        json.dumps(
            {
                "summary": True,
                "must_visit": list(trace.must_visit_nodes),
                "tour": list(trace.tour.visit_order) if trace.tour else None,
                "tour_exact": trace.tour.exact if trace.tour else None,
                "truck_emission_g": trace.truck_emission_g,
                "customer_emission_g": trace.customer_emission_g,
                "total_emission_g": trace.total_emission_g,
            }
        )
    )
    return lines


def export_trace(trace: EpisodeTrace, path) -> Path:
    path = Path(path)
    path.write_text("\n".join(trace_to_lines(trace)) + "\n")
    return path
