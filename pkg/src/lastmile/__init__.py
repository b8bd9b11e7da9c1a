"""Differentiated pickup-point offering for last-mile delivery: simulation
environment, comparison policies, a small graph-attention policy trained with
clipped-surrogate policy optimization, and a reproducible benchmark harness."""

__version__ = "0.1.0"

from .bench import BenchmarkConfig, MetricsRecord, SweepConfig, emission_reduction, run_benchmark, sweep
from .choice import (
    ChoiceOutcome,
    ChoiceParams,
    HOME_CHOICE,
    HOME_ONLY,
    Offer,
    car_probability,
    customer_emission,
    expected_car_emission,
    mode_probabilities,
    pickup_probability,
    sample_choice,
)
from .env import (
    Arrival,
    EpisodeTrace,
    GraphState,
    RngBundle,
    apply_decision,
    initial_state,
    insert_order,
    rebuild_arcs,
    run_episode,
    sample_arrivals,
)
from .instance import Instance, Location, distance, generate_instance, load_instance, save_instance
from .nets import (
    FlatActorCritic,
    FlatConfig,
    GatConfig,
    GraphActorCritic,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from .policies import (
    DynamicNearestPolicy,
    PerfectInfoResult,
    RandomOfferPolicy,
    home_policy,
    nearest_policy,
    perfect_information_solve,
    unrestricted_choice,
)
from .ppo import LearnedPolicy, PpoConfig, act_greedy, compute_gae, train
from .routing import COMPILED, Tour, plan_route, solve_tsp, solve_tsp_exact, truck_emission

__all__ = [
    "__version__",
    "Arrival",
    "BenchmarkConfig",
    "ChoiceOutcome",
    "ChoiceParams",
    "COMPILED",
    "DynamicNearestPolicy",
    "EpisodeTrace",
    "FlatActorCritic",
    "FlatConfig",
    "GatConfig",
    "GraphActorCritic",
    "GraphState",
    "HOME_CHOICE",
    "HOME_ONLY",
    "Instance",
    "LearnedPolicy",
    "Location",
    "MetricsRecord",
    "Offer",
    "PerfectInfoResult",
    "PpoConfig",
    "RandomOfferPolicy",
    "RngBundle",
    "SweepConfig",
    "Tour",
    "act_greedy",
    "apply_decision",
    "car_probability",
    "compute_gae",
    "customer_emission",
    "distance",
    "emission_reduction",
    "expected_car_emission",
    "generate_instance",
    "home_policy",
    "initial_state",
    "insert_order",
    "load_checkpoint",
    "load_instance",
    "mode_probabilities",
    "model_from_checkpoint",
    "nearest_policy",
    "perfect_information_solve",
    "pickup_probability",
    "plan_route",
    "rebuild_arcs",
    "run_benchmark",
    "run_episode",
    "sample_arrivals",
    "sample_choice",
    "save_checkpoint",
    "save_instance",
    "solve_tsp",
    "solve_tsp_exact",
    "sweep",
    "train",
    "truck_emission",
]
