"""Clipped-surrogate policy optimization for the offering policy.

Rollouts are collected in whole capture days so every trajectory in the
buffer ends on a terminal decision and the bootstrap value there is exactly
zero. Rewards are negated emissions in kilograms: each decision is charged
its customer's expected collection emission, and the final decision of the
day additionally absorbs the truck route emission.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, gather_rows, minimum
from .choice import HOME_CHOICE, HOME_ONLY, ChoiceParams, Offer, customer_emission, sample_choice
from .env import (
    ARRIVAL_PERIOD_HOURS,
    ARRIVAL_RATE_PER_PERIOD,
    CAPTURE_HOURS,
    RngBundle,
    apply_decision,
    initial_state,
    insert_order,
    run_episode,
    sample_arrivals,
)
from .instance import Instance, distance
from .nets import (
    FlatActorCritic,
    FlatConfig,
    GatConfig,
    GraphActorCritic,
    evaluate_state,
    model_from_checkpoint,
    save_checkpoint,
)
from .routing import plan_route

log = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    n_total: int = 300_000        # environment steps (offer decisions) overall
    n_steps: int = 1024           # rollout target per update; rounded up to whole days
    n_batch: int = 128
    epochs_per_update: int = 4
    gamma: float = 0.999
    gae_lambda: float = 0.96
    clip_eps: float = 0.2
    c1: float = 1.0
    entropy_coeff: float = 0.01
    # 0.05 also trains fine on the small instances; kept here so sweeps can
    # flip between the two without touching call sites.
    entropy_coeff_alternative: float = 0.05
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    reward_scale: float = 1000.0  # grams -> kilograms
    normalize_advantages: bool = True
    # divergence guard: abort when mean policy entropy drops below this many
    # nats within the first tenth of the step budget
    entropy_floor_nats: float = 1e-3
    eval_every_updates: int = 0   # 0 disables periodic greedy evaluation
    eval_episodes: int = 20
    checkpoint_every_updates: int = 0  # 0 = final checkpoint only
    tsp_threshold: int = 16
    seed: int = 0


def make_model(arch: str, num_pickups: int, net_config=None, seed: int = 0):
    if arch == "gat":
        return GraphActorCritic(num_pickups, net_config or GatConfig(), seed=seed)
    if arch == "flat":
        return FlatActorCritic(num_pickups, net_config or FlatConfig(), seed=seed)
    raise ValueError("unknown architecture %r" % arch)


# ---------------------------------------------------------------------------
# advantage estimation


def compute_gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Generalized advantage estimates and returns over a (possibly
    multi-episode) buffer. dones[t] marks t as the last decision of its day;
    the value after it is not bootstrapped. last_value covers a buffer cut
    mid-episode, which the trainer never produces (it is 0.0 there).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = rewards.shape[0]
    adv = np.zeros(n)
    gae = 0.0
    next_value = float(last_value)
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        gae = delta + gamma * lam * live * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


# ---------------------------------------------------------------------------
# optimizer (flat parameter vector)


class AdamOptimizer:
    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, values: np.ndarray, grads: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# rollout storage


@dataclass
class RolloutBuffer:
    encs: list = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    log_probs: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    dones: List[bool] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.actions)

    def add(self, enc, action: int, log_prob: float, value: float, reward: float,
            done: bool) -> None:
        self.encs.append(enc)
        self.actions.append(action)
        self.log_probs.append(log_prob)
        self.values.append(value)
        self.rewards.append(reward)
        self.dones.append(done)

    def episode_returns(self) -> List[float]:
        out, acc = [], 0.0
        for r, d in zip(self.rewards, self.dones):
            acc += r
            if d:
                out.append(acc)
                acc = 0.0
        return out


def _policy_forward(model, state, L: float, T: float) -> Tuple[np.ndarray, float]:
    logp, value = evaluate_state(model, state, L, T)
    return logp, value


def collect_episode(
    model,
    instance: Instance,
    params: ChoiceParams,
    buf: RolloutBuffer,
    rngs: RngBundle,
    action_rng: np.random.Generator,
    *,
    L: float,
    T: float,
    rate: float,
    period: float,
    reward_scale: float,
    tsp_threshold: int,
) -> int:
    """Roll one capture day with the sampling policy and append its decisions.

    Returns the number of decisions appended (0 for a day without arrivals).
    """
    arrivals = sample_arrivals(instance, rngs.arrivals, T=T, rate=rate, period=period)
    if not arrivals:
        return 0
    M = instance.num_pickups
    state = initial_state(instance)
    state = insert_order(state, arrivals[0].time, arrivals[0].location)
    for k, arr in enumerate(arrivals):
        enc = model.encode(state, L, T)
        logp, value = _policy_forward(model, state, L, T)
        probs = np.exp(logp)
        probs /= probs.sum()
        a = int(action_rng.choice(M + 1, p=probs))
        offer = HOME_ONLY if a == M else Offer(a)
        if offer.is_home_only:
            outcome = HOME_CHOICE
        else:
            dist = distance(arr.location, instance.pickup_points[a])
            outcome = sample_choice(params, offer, dist, rngs.choices)
        reward = -customer_emission(params, outcome) / reward_scale
        nxt = arrivals[k + 1] if k + 1 < len(arrivals) else None
        state = apply_decision(state, offer, outcome, (nxt.time, nxt.location) if nxt else None)
        if nxt is None:
            tour = plan_route(state, params, threshold=tsp_threshold)
            reward -= tour.emission_g / reward_scale
        buf.add(enc, a, float(logp[a]), value, reward, done=nxt is None)
    return len(arrivals)


# ---------------------------------------------------------------------------
# loss


def ppo_loss(
    new_log_probs: Tensor,
    new_values: Tensor,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    *,
    clip_eps: float = 0.2,
    c1: float = 1.0,
    entropy_coeff: float = 0.01,
) -> Tuple[Tensor, dict]:
    """Combined minimization target: clipped policy surrogate, value MSE
    weighted by c1, entropy bonus weighted by entropy_coeff. Advantages come
    in as given; any normalization happens upstream, once per update.
    """
    n, A = new_log_probs.shape
    actions = np.asarray(actions, dtype=np.int64)
    flat = new_log_probs.reshape(n * A, 1)
    logp_taken = gather_rows(flat, np.arange(n) * A + actions).reshape(n)
    ratio = (logp_taken - old_log_probs).exp()
    surrogate = minimum(ratio * advantages, ratio.clip(1.0 - clip_eps, 1.0 + clip_eps) * advantages)
    policy_objective = surrogate.mean()
    value_loss = (new_values - returns).square().mean()
    entropy = -(new_log_probs.exp() * new_log_probs).sum(axis=1).mean()
    loss = -(policy_objective - c1 * value_loss + entropy_coeff * entropy)
    clip_frac = float(np.mean(np.abs(ratio.data - 1.0) > clip_eps))
    approx_kl = float(np.mean(old_log_probs - logp_taken.data))
    stats = {
        "policy_objective": float(policy_objective.data),
        "value_loss": float(value_loss.data),
        "entropy": float(entropy.data),
        "clip_fraction": clip_frac,
        "approx_kl": approx_kl,
    }
    return loss, stats


# ---------------------------------------------------------------------------
# greedy control


def act_greedy(model, state, L: float, T: float = CAPTURE_HOURS) -> Offer:
    """Argmax action; ties resolve to the lowest slot. Slot |M| is home-only."""
    logp, _ = evaluate_state(model, state, L, T)
    a = int(np.argmax(logp))
    return HOME_ONLY if a == len(logp) - 1 else Offer(a)


class LearnedPolicy:
    """Policy-interface wrapper around a trained model (greedy by default)."""

    def __init__(self, model, L: float, T: float = CAPTURE_HOURS, *,
                 sample: bool = False, rng: Optional[np.random.Generator] = None):
        self.model = model
        self.L = L
        self.T = T
        self.sample = sample
        self.rng = rng
        if sample and rng is None:
            raise ValueError("sampling policy needs an rng")

    def __call__(self, state) -> Offer:
        if not self.sample:
            return act_greedy(self.model, state, self.L, self.T)
        logp, _ = evaluate_state(self.model, state, self.L, self.T)
        probs = np.exp(logp)
        probs /= probs.sum()
        a = int(self.rng.choice(len(probs), p=probs))
        return HOME_ONLY if a == len(probs) - 1 else Offer(a)

    @classmethod
    def from_checkpoint(cls, path, *, sample: bool = False,
                        rng: Optional[np.random.Generator] = None) -> "LearnedPolicy":
        model, header = model_from_checkpoint(path)
        cfg = header["config"]
        return cls(model, cfg["L"], cfg.get("T", CAPTURE_HOURS), sample=sample, rng=rng)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: object
    steps_done: int
    updates_done: int
    history: List[dict]
    aborted: bool = False
    abort_reason: Optional[str] = None
    checkpoint_path: Optional[Path] = None


def _greedy_eval(model, instance, params, *, L, T, rate, period, episodes, seed,
                 tsp_threshold) -> float:
    policy = LearnedPolicy(model, L, T)
    total = 0.0
    for e in range(episodes):
        rngs = RngBundle.from_seed(seed, 9000 + e)
        trace = run_episode(instance, params, policy, rngs, T=T, rate=rate,
                            period=period, tsp_threshold=tsp_threshold)
        total += trace.total_emission_g
    return total / episodes


def train(
    instance: Instance,
    params: ChoiceParams,
    cfg: Optional[PpoConfig] = None,
    *,
    model=None,
    arch: str = "gat",
    net_config=None,
    T: float = CAPTURE_HOURS,
    rate: float = ARRIVAL_RATE_PER_PERIOD,
    period: float = ARRIVAL_PERIOD_HOURS,
    log_path=None,
    checkpoint_path=None,
    progress: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    cfg = cfg or PpoConfig()
    L = instance.region_radius_L
    if model is None:
        model = make_model(arch, instance.num_pickups, net_config, seed=cfg.seed)
    opt = AdamOptimizer(model.store.size, cfg.learning_rate, cfg.adam_beta1,
                        cfg.adam_beta2, cfg.adam_eps)
    rngs = RngBundle.from_seed(cfg.seed, 11)
    ss = np.random.SeedSequence([cfg.seed, 13]).spawn(2)
    action_rng = np.random.default_rng(ss[0])
    shuffle_rng = np.random.default_rng(ss[1])

    extra = {
        "L": L,
        "T": T,
        "rate": rate,
        "period": period,
        "regime": params.regime,
        "instance_seed": instance.seed,
        "ppo": asdict(cfg),
    }
    log_file = open(log_path, "a") if log_path else None
    guard_horizon = max(1, int(0.1 * cfg.n_total))
    history: List[dict] = []
    steps_done = 0
    updates_done = 0
    aborted = False
    abort_reason = None
    try:
        while steps_done < cfg.n_total:
            buf = RolloutBuffer()
            while buf.size < min(cfg.n_steps, cfg.n_total - steps_done):
                collect_episode(
                    model, instance, params, buf, rngs, action_rng,
                    L=L, T=T, rate=rate, period=period,
                    reward_scale=cfg.reward_scale, tsp_threshold=cfg.tsp_threshold,
                )
            adv, ret = compute_gae(buf.rewards, buf.values, buf.dones,
                                   cfg.gamma, cfg.gae_lambda)
            if cfg.normalize_advantages:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            actions = np.asarray(buf.actions, dtype=np.int64)
            old_logp = np.asarray(buf.log_probs)
            n = buf.size
            agg = {"policy_objective": 0.0, "value_loss": 0.0, "entropy": 0.0,
                   "clip_fraction": 0.0, "approx_kl": 0.0}
            batches = 0
            for _ in range(cfg.epochs_per_update):
                perm = shuffle_rng.permutation(n)
                for start in range(0, n, cfg.n_batch):
                    idx = perm[start : start + cfg.n_batch]
                    enc = model.batch([buf.encs[i] for i in idx])
                    model.zero_grad()
                    new_logp, new_val = model.forward(enc)
                    loss, stats = ppo_loss(
                        new_logp, new_val, actions[idx], old_logp[idx],
                        adv[idx], ret[idx],
                        clip_eps=cfg.clip_eps, c1=cfg.c1,
                        entropy_coeff=cfg.entropy_coeff,
                    )
                    loss.backward()
                    opt.step(model.store.values, model.collect_grads())
                    for k in agg:
                        agg[k] += stats[k]
                    batches += 1
            steps_done += n
            updates_done += 1
            ep_returns = buf.episode_returns()
            record = {
                "update": updates_done,
                "steps": steps_done,
                "episodes": len(ep_returns),
                "mean_episode_emission_g": float(-np.mean(ep_returns) * cfg.reward_scale),
            }
            record.update({k: v / batches for k, v in agg.items()})
            if cfg.eval_every_updates and updates_done % cfg.eval_every_updates == 0:
                record["greedy_eval_emission_g"] = _greedy_eval(
                    model, instance, params, L=L, T=T, rate=rate, period=period,
                    episodes=cfg.eval_episodes, seed=cfg.seed,
                    tsp_threshold=cfg.tsp_threshold,
                )
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
            if progress:
                progress(record)
            # the first update is always inside the guard window, even when
            # 10% of the budget is less than one rollout
            in_guard = updates_done == 1 or steps_done <= guard_horizon
            if in_guard and record["entropy"] < cfg.entropy_floor_nats:
                aborted = True
                abort_reason = (
                    "policy entropy %.2e nats below floor %.2e within the first "
                    "10%% of training" % (record["entropy"], cfg.entropy_floor_nats)
                )
                log.error("aborting: %s", abort_reason)
                break
            if (checkpoint_path and cfg.checkpoint_every_updates
                    and updates_done % cfg.checkpoint_every_updates == 0):
                save_checkpoint(checkpoint_path, model,
                                dict(extra, steps_done=steps_done), step=steps_done)
    finally:
        if log_file:
            log_file.close()
    out_path = None
    if checkpoint_path and not aborted:
        out_path = save_checkpoint(checkpoint_path, model,
                                   dict(extra, steps_done=steps_done), step=steps_done)
    return TrainResult(
        model=model,
        steps_done=steps_done,
        updates_done=updates_done,
        history=history,
        aborted=aborted,
        abort_reason=abort_reason,
        checkpoint_path=out_path,
    )
