"""Synchronous federated learning loop.

Agent selection, local training, update collection, aggregation, and early
stopping. Aggregation rules are pluggable; the harness supplies a monitor
callback that turns each round's raw context into a metrics record.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn, robust
from .errors import InputError, TrainingError
from .seeding import derive_rng


@dataclass(frozen=True)
class TrainingPlan:
    """Local optimization settings for one agent."""

    epochs: int = 1
    batch_size: int = 10
    optimizer: str = "sgd"
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")


@dataclass
class ServerState:
    """Round counter, current global weights, history, per-agent weights."""

    round: int
    global_params: np.ndarray
    alphas: np.ndarray
    history: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        if abs(self.alphas.sum() - 1.0) > 1e-12:
            raise InputError(f"agent weights sum to {self.alphas.sum()}, expected 1")


@dataclass
class RoundContext:
    """Raw facts of one completed round, handed to the metrics monitor."""

    round_index: int  # 1-based
    previous_params: np.ndarray
    new_params: np.ndarray
    selected: list[int]
    deltas: dict[int, np.ndarray]
    selected_alphas: np.ndarray  # renormalized, aligned with `selected`
    chosen_agent: int | None  # set by selection rules such as krum


def select_agents(num_agents: int, per_round: int, round_index: int,
                  seed: int) -> list[int]:
    """Uniform sample without replacement, deterministic in (seed, round)."""
    if per_round < 1:
        raise InputError("per_round must be >= 1")
    if per_round > num_agents:
        raise InputError(f"cannot select {per_round} of {num_agents} agents")
    if per_round == num_agents:
        return list(range(num_agents))
    rng = derive_rng(seed, "select", round_index=round_index)
    return sorted(int(i) for i in rng.choice(num_agents, per_round, replace=False))


def minibatch_epochs(n: int, plan: TrainingPlan, epoch_rng: Callable[[int], np.random.Generator]):
    """Yield (epoch, batch index array) with a seeded shuffle per epoch."""
    batch = min(plan.batch_size, n)
    for epoch in range(plan.epochs):
        order = epoch_rng(epoch).permutation(n)
        for start in range(0, n, batch):
            yield epoch, order[start:start + batch]


def local_train(spec: nn.ModelSpec, start_params: np.ndarray, x: np.ndarray,
                y: np.ndarray, plan: TrainingPlan,
                epoch_rng: Callable[[int], np.random.Generator]) -> np.ndarray:
    """Mini-batch optimization from start_params; returns the final weights."""
    params = start_params
    state = nn.make_optimizer(plan.optimizer, plan.learning_rate, spec.param_count)
    for _, batch in minibatch_epochs(len(y), plan, epoch_rng):
        grad = nn.gradient(spec, params, x[batch], y[batch])
        params, state = nn.optimizer_step(state, params, grad)
    if not np.all(np.isfinite(params)):
        raise TrainingError("local training diverged to non-finite weights")
    return params


class BenignAgent:
    """Honest participant: trains on its shard and reports the weight delta."""

    def __init__(self, agent_id: int, spec: nn.ModelSpec, features: np.ndarray,
                 labels: np.ndarray, plan: TrainingPlan, master_seed: int):
        self.agent_id = agent_id
        self.spec = spec
        self.features = features
        self.labels = labels
        self.plan = plan
        self.master_seed = master_seed

    def compute_update(self, global_params: np.ndarray, round_index: int) -> np.ndarray:
        def epoch_rng(epoch):
            return derive_rng(self.master_seed, "batch", agent=self.agent_id,
                              round_index=round_index, extra=epoch)

        final = local_train(self.spec, global_params, self.features, self.labels,
                            self.plan, epoch_rng)
        return final - global_params


def benign_local_update(spec: nn.ModelSpec, global_params: np.ndarray,
                        features: np.ndarray, labels: np.ndarray, plan: TrainingPlan,
                        epoch_rng: Callable[[int], np.random.Generator]) -> np.ndarray:
    """Delta produced by honest local training from the current global weights."""
    if len(labels) == 0:
        raise InputError("shard is empty")
    return local_train(spec, global_params, features, labels, plan, epoch_rng) - global_params


def weighted_average(updates: Sequence[np.ndarray], alphas: Sequence[float]) -> np.ndarray:
    """Sum of alpha_i * delta_i over the given updates."""
    if len(updates) != len(alphas):
        raise InputError("one weight per update required")
    mat = np.asarray(updates, dtype=float)
    if mat.ndim != 2:
        raise InputError("updates must share one common length")
    return np.asarray(alphas, dtype=float) @ mat


class WeightedAverageRule:
    """Plain federated averaging over the selected agents."""

    name = "avg"

    def __call__(self, deltas, alphas):
        return weighted_average(deltas, alphas), None


class KrumRule:
    """Krum selection; the aggregate is the single chosen update."""

    name = "krum"

    def __init__(self, assumed_byzantine: int = 1, squared: bool = False):
        self.assumed_byzantine = assumed_byzantine
        self.squared = squared

    def __call__(self, deltas, alphas):
        chosen, delta = robust.krum_select(deltas, self.assumed_byzantine, self.squared)
        return delta, chosen


class CoomedRule:
    """Coordinate-wise median of the selected updates."""

    name = "coomed"

    def __call__(self, deltas, alphas):
        return robust.coomed(deltas), None


def run_round(state: ServerState, selected: Sequence[int], behaviors: dict,
              rule, monitor: Callable[[RoundContext], object] | None = None,
              parallel: bool = False):
    """Collect updates from the selected agents, aggregate, advance the state.

    Returns (new ServerState, monitor output). Aggregation order is fixed by
    agent index regardless of execution order, so parallel and sequential
    collection are bit-identical.
    """
    selected = sorted(int(i) for i in selected)
    missing = [i for i in selected if i not in behaviors]
    if missing:
        raise InputError(f"no behavior assigned to selected agents {missing}")
    w_prev = state.global_params
    round_index = state.round + 1

    def work(i):
        try:
            delta = behaviors[i].compute_update(w_prev, round_index)
        except Exception as exc:
            raise TrainingError(f"agent {i} failed in round {round_index}: {exc}") from exc
        if delta.shape != w_prev.shape or not np.all(np.isfinite(delta)):
            raise TrainingError(f"agent {i} returned an invalid update in round {round_index}")
        return delta

    if parallel:
        with ThreadPoolExecutor(max_workers=len(selected)) as pool:
            results = list(pool.map(work, selected))
        deltas = dict(zip(selected, results))
    else:
        deltas = {i: work(i) for i in selected}

    alphas_sel = state.alphas[selected]
    alphas_sel = alphas_sel / alphas_sel.sum()
    agg_delta, chosen_pos = rule([deltas[i] for i in selected], alphas_sel)
    chosen_agent = selected[chosen_pos] if chosen_pos is not None else None
    new_params = w_prev + agg_delta

    new_state = ServerState(round=round_index, global_params=new_params,
                            alphas=state.alphas, history=state.history + [new_params])
    ctx = RoundContext(round_index, w_prev, new_params, selected, deltas,
                       alphas_sel, chosen_agent)
    record = monitor(ctx) if monitor is not None else None
    return new_state, record


def early_stop(latest_accuracy: float | None, round_index: int,
               target_accuracy: float | None, max_rounds: int) -> bool:
    """Stop once validation accuracy reaches the target or rounds run out."""
    if round_index >= max_rounds:
        return True
    if target_accuracy is not None and latest_accuracy is not None:
        return latest_accuracy >= target_accuracy
    return False
