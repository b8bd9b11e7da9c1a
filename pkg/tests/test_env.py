"""Graph-state transitions, arc bookkeeping vs a from-scratch oracle, arrivals,
and whole-episode accounting."""

import json

import numpy as np
import pytest

from lastmile.choice import (
    ChoiceOutcome,
    ChoiceParams,
    HOME_CHOICE,
    HOME_ONLY,
    Offer,
    customer_emission,
    expected_car_emission,
)
from lastmile.env import (
    Arrival,
    RngBundle,
    apply_decision,
    initial_state,
    insert_order,
    rebuild_arcs,
    run_episode,
    sample_arrivals,
    trace_to_lines,
    export_trace,
)
from lastmile.instance import Location, distance, generate_instance

PARAMS = ChoiceParams.for_regime("base")


def make_instance(num_pups=2, L=2.0, seed=7):
    return generate_instance(L, num_pups, seed)


# ---------------------------------------------------------------------------
# state construction


def test_initial_state_no_pickups():
    inst = make_instance(num_pups=0)
    s = initial_state(inst)
    assert s.num_nodes == 1
    assert s.arcs == set()
    assert s.must_visit_nodes() == (0,)
    assert s.new_order_node is None and s.new_order_resolved


def test_initial_state_two_pickups():
    inst = make_instance(num_pups=2)
    s = initial_state(inst)
    assert s.num_nodes == 3
    assert s.arcs == {(1, 1), (2, 2), (0, 1), (0, 2)}
    assert [f.is_pickup for f in s.features] == [False, True, True]
    assert s.must_visit_nodes() == (0,)
    assert s.arcs == rebuild_arcs(s)


def test_insert_order_adds_node_and_arcs():
    inst = make_instance(num_pups=2)
    s = insert_order(initial_state(inst), 0.5, Location(0.1, 0.2))
    assert s.num_nodes == 4
    assert s.new_order_node == 3 and not s.new_order_resolved
    assert s.clock == 0.5
    assert s.features[3].arrival_time == 0.5
    # self-loop plus an arc from the only must-visit node (the depot)
    assert s.arcs == {(1, 1), (2, 2), (0, 1), (0, 2), (3, 3), (0, 3)}
    assert s.arcs == rebuild_arcs(s)


def test_accept_path_marks_pickup_must_visit():
    inst = make_instance(num_pups=2)
    s = insert_order(initial_state(inst), 0.5, Location(0.1, 0.2))
    out = ChoiceOutcome(True, 0, 0.3)
    s2 = apply_decision(s, Offer(0), out, next_order=(0.9, Location(-0.3, 0.4)))
    assert s2.new_order_node == 4 and not s2.new_order_resolved
    assert s2.must_visit_nodes() == (0, 1)
    assert s2.pickup_choice == {3: 1}
    # the served order's time feature is cleared once the next one arrives
    assert s2.features[3].arrival_time == 0.0
    assert s2.features[4].arrival_time == 0.9
    assert s2.epoch_index == s.epoch_index + 1
    assert s2.arcs == rebuild_arcs(s2)
    # customer 3 keeps exactly one outgoing arc: to its designated pickup
    assert {(i, j) for (i, j) in s2.arcs if i == 3} == {(3, 1)}


def test_decline_path_marks_customer_must_visit():
    inst = make_instance(num_pups=2)
    s = insert_order(initial_state(inst), 0.5, Location(0.1, 0.2))
    s2 = apply_decision(s, Offer(1), HOME_CHOICE, next_order=None)
    assert s2.new_order_resolved
    assert s2.must_visit_nodes() == (0, 3)
    assert s2.pickup_choice == {}
    # home-choosers keep a self-loop and reach the pickups and the order slot
    assert {(i, j) for (i, j) in s2.arcs if i == 3} == {(3, 3), (3, 1), (3, 2)}
    assert s2.arcs == rebuild_arcs(s2)


def test_apply_decision_guards():
    inst = make_instance(num_pups=2)
    s0 = initial_state(inst)
    with pytest.raises(ValueError):
        apply_decision(s0, HOME_ONLY, HOME_CHOICE)
    s1 = insert_order(s0, 0.5, Location(0.1, 0.2))
    s2 = apply_decision(s1, Offer(0), HOME_CHOICE)
    with pytest.raises(ValueError):
        apply_decision(s2, Offer(0), HOME_CHOICE)
    with pytest.raises(ValueError):
        apply_decision(s1, Offer(0), ChoiceOutcome(True, 5, 0.3))


def test_arc_oracle_over_random_walks():
    # every incremental update must match the from-scratch reconstruction,
    # and the must-visit set must only ever grow
    rng = np.random.default_rng(123)
    for rep in range(30):
        inst = make_instance(num_pups=int(rng.integers(1, 5)), seed=rep)
        state = initial_state(inst)
        musts = set(state.must_visit_nodes())
        n_orders = int(rng.integers(1, 9))
        t = 0.0
        for k in range(n_orders):
            t += float(rng.uniform(0.05, 0.4))
            loc = Location(float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2)))
            if state.new_order_node is None or state.new_order_resolved:
                state = insert_order(state, t, loc)
                nxt = None
            else:
                nxt = (t, loc)
            if nxt is not None or k == n_orders - 1:
                u = rng.uniform()
                if u < 0.4:
                    out = HOME_CHOICE
                else:
                    p = int(rng.integers(0, inst.num_pickups))
                    out = ChoiceOutcome(True, p, float(rng.uniform(0.1, 2.0)))
                state = apply_decision(state, Offer(0), out, nxt)
            assert state.arcs == rebuild_arcs(state)
            now = set(state.must_visit_nodes())
            assert musts <= now
            musts = now


# ---------------------------------------------------------------------------
# arrivals


def test_sample_arrivals_mean_count():
    inst = make_instance()
    rng = np.random.default_rng(99)
    counts = [len(sample_arrivals(inst, rng)) for _ in range(10_000)]
    assert abs(np.mean(counts) - 32.0) < 1.0  # rate * T / period = 32


def test_sample_arrivals_sorted_in_window():
    inst = make_instance()
    rng = np.random.default_rng(5)
    arr = sample_arrivals(inst, rng)
    times = [a.time for a in arr]
    assert times == sorted(times)
    assert all(0.0 <= t < 8.0 for t in times)


def test_sample_arrivals_empty_window():
    inst = make_instance()
    rng = np.random.default_rng(5)
    assert sample_arrivals(inst, rng, T=0.0) == []
    with pytest.raises(ValueError):
        sample_arrivals(inst, rng, T=-1.0)


def test_sample_arrivals_deterministic():
    inst = make_instance()
    a = sample_arrivals(inst, np.random.default_rng(42))
    b = sample_arrivals(inst, np.random.default_rng(42))
    assert a == b


def test_rng_bundle_streams_independent():
    r1 = RngBundle.from_seed(0, 1)
    r2 = RngBundle.from_seed(0, 1)
    assert r1.arrivals.uniform() == r2.arrivals.uniform()
    assert r1.choices.uniform() == r2.choices.uniform()
    # distinct streams from the same seed should not coincide
    r3 = RngBundle.from_seed(0, 1)
    assert r3.arrivals.uniform() != r3.choices.uniform()


# ---------------------------------------------------------------------------
# whole episodes


def always_offer_first(state):
    return Offer(0)


def test_forced_accept_routes_single_pickup():
    inst = make_instance(num_pups=3, seed=11)
    rngs = RngBundle.from_seed(11, 0)
    trace = run_episode(inst, PARAMS, always_offer_first, rngs, forced_accept=True)
    assert trace.num_orders > 0
    assert trace.must_visit_nodes == (0, 1)
    assert trace.visited_pickups == 1
    assert set(trace.tour.visit_order) == {0, 1}
    # every record prices the expected customer trip to that pickup
    for r in trace.records:
        assert r.outcome.chose_pickup and r.outcome.pickup_index == 0
        d = distance(r.order_location, inst.pickup_points[0])
        assert r.customer_emission_g == expected_car_emission(PARAMS, d)


def test_zero_arrivals_zero_emissions():
    inst = make_instance(num_pups=2)
    rngs = RngBundle.from_seed(3)
    trace = run_episode(inst, PARAMS, always_offer_first, rngs, arrivals=[])
    assert trace.num_orders == 0
    assert trace.tour.visit_order == (0,)
    assert trace.total_emission_g == 0.0


def test_emission_accounting_is_exact():
    inst = make_instance(num_pups=4, seed=2)
    rngs = RngBundle.from_seed(2, 5)
    trace = run_episode(inst, PARAMS, always_offer_first, rngs)
    assert trace.customer_emission_g == sum(r.customer_emission_g for r in trace.records)
    assert trace.total_emission_g == trace.customer_emission_g + trace.truck_emission_g
    assert trace.truck_emission_g == trace.tour.emission_g
    for r in trace.records:
        assert r.customer_emission_g == customer_emission(PARAMS, r.outcome)


def test_home_only_policy_never_offers():
    inst = make_instance(num_pups=2, seed=4)
    rngs = RngBundle.from_seed(4, 1)
    trace = run_episode(inst, PARAMS, lambda s: HOME_ONLY, rngs)
    assert trace.visited_pickups == 0
    assert trace.customer_emission_g == 0.0
    for r in trace.records:
        assert r.offer.is_home_only and not r.outcome.chose_pickup
        assert r.offer_distance_km is None
    # truck serves every customer: depot + one node per order
    assert len(trace.must_visit_nodes) == 1 + trace.num_orders


def test_episode_deterministic_given_seed():
    inst = make_instance(num_pups=3, seed=9)
    t1 = run_episode(inst, PARAMS, always_offer_first, RngBundle.from_seed(9, 9))
    t2 = run_episode(inst, PARAMS, always_offer_first, RngBundle.from_seed(9, 9))
    assert trace_to_lines(t1) == trace_to_lines(t2)


def test_run_episode_calls_policy_reset():
    class Spy:
        def __init__(self):
            self.resets = 0

        def reset(self):
            self.resets += 1

        def __call__(self, state):
            return HOME_ONLY

    inst = make_instance(num_pups=1)
    spy = Spy()
    run_episode(inst, PARAMS, spy, RngBundle.from_seed(1))
    assert spy.resets == 1


def test_shared_arrivals_decouple_choice_stream():
    # passing a pre-sampled sequence must leave the arrival stream untouched
    inst = make_instance(num_pups=2, seed=6)
    arr = sample_arrivals(inst, np.random.default_rng(77))
    rngs = RngBundle.from_seed(6, 2)
    before = rngs.arrivals.bit_generator.state["state"]["state"]
    trace = run_episode(inst, PARAMS, always_offer_first, rngs, arrivals=arr)
    after = rngs.arrivals.bit_generator.state["state"]["state"]
    assert before == after
    assert trace.num_orders == len(arr)
    assert [r.arrival_time for r in trace.records] == [a.time for a in arr]


def test_trace_lines_schema(tmp_path):
    inst = make_instance(num_pups=2, seed=8)
    trace = run_episode(inst, PARAMS, always_offer_first, RngBundle.from_seed(8))
    path = export_trace(trace, tmp_path / "trace.jsonl")
    lines = path.read_text().strip().split("\n")
    assert len(lines) == trace.num_orders + 1
    first = json.loads(lines[0])
    assert list(first) == [
        "epoch",
        "order_node",
        "arrival_time",
        "order_x",
        "order_y",
        "offer",
        "offer_distance_km",
        "chose_pickup",
        "pickup_index",
        "distance_km",
        "customer_emission_g",
    ]
    summary = json.loads(lines[-1])
    assert summary["summary"] is True
    assert summary["total_emission_g"] == trace.total_emission_g


def test_customer_order_nodes_follow_pickups():
    inst = make_instance(num_pups=3, seed=13)
    rngs = RngBundle.from_seed(13)
    trace = run_episode(inst, PARAMS, always_offer_first, rngs)
    assert [r.order_node for r in trace.records] == [
        4 + k for k in range(trace.num_orders)
    ]
