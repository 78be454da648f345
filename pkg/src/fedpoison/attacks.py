"""Adversarial agent behaviors.

Strategies: explicitly boosted targeted poisoning, implicit boosting through
the aggregation scaling, stealth-constrained poisoning, alternating
minimization of the targeted and stealth objectives, estimation-corrected
variants, and a dirty-label data-poisoning baseline. All of them consume
and produce flat weight vectors compatible with the protocol layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import AuxSet
from .errors import InputError, TrainingError
from .protocol import TrainingPlan, local_train, minibatch_epochs
from .seeding import derive_rng

STRATEGIES = ("targeted_explicit", "targeted_implicit", "stealthy",
              "alternating_min", "data_poison")


@dataclass(frozen=True)
class AttackConfig:
    """Hyperparameters shared by all attack strategies.

    boost_factor multiplies the targeted component of the update;
    distance_weight scales the penalty on drifting away from the previous
    round's benign mean update. malicious_epochs counts optimizer passes on
    the targeted objective (for alternating minimization: outer epochs, each
    one targeted step followed by stealth_steps stealth steps).
    """

    strategy: str = "targeted_explicit"
    boost_factor: float = 10.0
    distance_weight: float = 0.0
    malicious_epochs: int = 5
    stealth_steps: int = 10
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    stealth_learning_rate: float | None = None
    batch_size: int = 10
    estimation: str = "none"  # "none" | "previous_step"
    correction: str = "pre"  # "pre" | "post"
    literal_history_delta: bool = False  # skip the aggregation-scale factor in estimation
    copies: int = 0
    noise_amplitude: float = 0.05

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InputError(f"unknown strategy {self.strategy!r}")
        if self.boost_factor <= 0:
            raise InputError("boost_factor must be > 0")
        if self.distance_weight < 0 or self.malicious_epochs < 0 or self.stealth_steps < 0:
            raise InputError("attack step counts and weights must be >= 0")
        if self.estimation not in ("none", "previous_step"):
            raise InputError(f"unknown estimation mode {self.estimation!r}")
        if self.correction not in ("pre", "post"):
            raise InputError(f"unknown correction mode {self.correction!r}")
        if self.copies < 0 or self.noise_amplitude < 0:
            raise InputError("copies and noise_amplitude must be >= 0")


@dataclass
class MaliciousState:
    """What the adversary is allowed to remember between selections.

    Only quantities observable by the malicious agent itself: global weights
    at rounds where it was selected, its own sent updates, and its
    aggregation weight.
    """

    alpha: float
    last_round: int | None = None
    last_global: np.ndarray | None = None
    last_sent: np.ndarray | None = None
    history: list[int] = field(default_factory=list)

    def record_selection(self, round_index: int, global_params: np.ndarray,
                         sent: np.ndarray):
        self.last_round = round_index
        self.last_global = global_params.copy()
        self.last_sent = sent.copy()
        self.history.append(round_index)


def boost(delta: np.ndarray, factor: float) -> np.ndarray:
    """Scale an update elementwise to survive aggregation averaging."""
    if factor <= 0:
        raise InputError("boost factor must be > 0")
    return factor * np.asarray(delta, dtype=float)


def targeted_update(spec: nn.ModelSpec, start_params: np.ndarray, aux: AuxSet,
                    steps: int, optimizer: str = "adam",
                    learning_rate: float = 1e-3) -> np.ndarray:
    """Unboosted delta after `steps` full-batch steps on the target-label loss."""
    if len(aux) == 0:
        raise InputError("aux set is empty")
    params = start_params
    state = nn.make_optimizer(optimizer, learning_rate, spec.param_count)
    for _ in range(steps):
        grad = nn.gradient(spec, params, aux.features, aux.target_labels)
        params, state = nn.optimizer_step(state, params, grad)
    if not np.all(np.isfinite(params)):
        raise TrainingError("targeted optimization diverged")
    return params - start_params


def targeted_explicit_update(spec: nn.ModelSpec, start_params: np.ndarray,
                             aux: AuxSet, steps: int, boost_factor: float,
                             optimizer: str = "adam",
                             learning_rate: float = 1e-3) -> np.ndarray:
    """Targeted delta boosted to negate the aggregation scaling."""
    return boost(targeted_update(spec, start_params, aux, steps, optimizer,
                                 learning_rate), boost_factor)


def targeted_implicit_update(spec: nn.ModelSpec, global_params: np.ndarray,
                             aux: AuxSet, alpha: float, steps: int,
                             optimizer: str = "adam",
                             learning_rate: float = 1e-3) -> np.ndarray:
    """Optimize the update directly through the aggregation scaling.

    The loss is evaluated at global_params + alpha * delta; the chain rule
    gives d(loss)/d(delta) = alpha * d(loss)/d(weights), so no explicit
    boost is applied to the result.
    """
    if not 0 < alpha <= 1:
        raise InputError("alpha must lie in (0, 1]")
    if len(aux) == 0:
        raise InputError("aux set is empty")
    delta = np.zeros(spec.param_count)
    state = nn.make_optimizer(optimizer, learning_rate, spec.param_count)
    for _ in range(steps):
        grad_w = nn.gradient(spec, global_params + alpha * delta,
                             aux.features, aux.target_labels)
        delta, state = nn.optimizer_step(state, delta, alpha * grad_w)
    if not np.all(np.isfinite(delta)):
        raise TrainingError("implicit targeted optimization diverged")
    return delta


def _distance_penalty_gradient(delta: np.ndarray, anchor: np.ndarray,
                               weight: float) -> np.ndarray:
    """Gradient of weight * ||delta - anchor||_2; zero at the anchor itself."""
    gap = delta - anchor
    norm = np.linalg.norm(gap)
    if weight == 0.0 or norm == 0.0:
        return np.zeros_like(delta)
    return weight * gap / norm


def stealthy_update(spec: nn.ModelSpec, global_params: np.ndarray,
                    shard_x: np.ndarray, shard_y: np.ndarray, aux: AuxSet | None,
                    boost_factor: float, distance_weight: float,
                    prev_benign_mean: np.ndarray, epochs: int,
                    plan: TrainingPlan, epoch_rng) -> np.ndarray:
    """Joint objective: boosted target loss + shard training loss + distance penalty.

    Only the targeted term carries the boost factor. With an empty aux set
    and zero distance weight this is exactly honest local training under the
    same optimizer and batch order.
    """
    params = global_params
    state = nn.make_optimizer(plan.optimizer, plan.learning_rate, spec.param_count)
    use_aux = aux is not None and len(aux) > 0
    for _, batch in minibatch_epochs(len(shard_y), _with_epochs(plan, epochs), epoch_rng):
        grad = nn.gradient(spec, params, shard_x[batch], shard_y[batch])
        if use_aux:
            grad = grad + boost_factor * nn.gradient(spec, params, aux.features,
                                                     aux.target_labels)
        grad = grad + _distance_penalty_gradient(params - global_params,
                                                 prev_benign_mean, distance_weight)
        params, state = nn.optimizer_step(state, params, grad)
    if not np.all(np.isfinite(params)):
        raise TrainingError("stealthy optimization diverged")
    return params - global_params


def _with_epochs(plan: TrainingPlan, epochs: int) -> TrainingPlan:
    return TrainingPlan(epochs=epochs, batch_size=plan.batch_size,
                        optimizer=plan.optimizer, learning_rate=plan.learning_rate)


class _BatchCycler:
    """Endless stream of minibatch index arrays with seeded reshuffles."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch = min(batch_size, n)
        self.rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def __next__(self) -> np.ndarray:
        if self._pos >= self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        out = self._order[self._pos:self._pos + self.batch]
        self._pos += self.batch
        return out


def alternating_min_update(spec: nn.ModelSpec, global_params: np.ndarray,
                           shard_x: np.ndarray, shard_y: np.ndarray, aux: AuxSet,
                           boost_factor: float, distance_weight: float,
                           prev_benign_mean: np.ndarray, epochs: int,
                           stealth_steps: int, optimizer: str,
                           learning_rate: float, stealth_learning_rate: float,
                           batch_size: int, batch_rng: np.random.Generator) -> np.ndarray:
    """Decoupled optimization: per epoch, one boosted targeted step, then
    `stealth_steps` steps of the stealth objective (training loss plus the
    distance penalty)."""
    if len(aux) == 0:
        raise InputError("aux set is empty")
    params = global_params
    target_state = nn.make_optimizer(optimizer, learning_rate, spec.param_count)
    stealth_state = nn.make_optimizer(optimizer, stealth_learning_rate, spec.param_count)
    batches = _BatchCycler(len(shard_y), batch_size, batch_rng)
    for _ in range(epochs):
        before = params
        grad = nn.gradient(spec, params, aux.features, aux.target_labels)
        stepped, target_state = nn.optimizer_step(target_state, params, grad)
        params = before + boost_factor * (stepped - before)
        for _ in range(stealth_steps):
            batch = next(batches)
            grad = nn.gradient(spec, params, shard_x[batch], shard_y[batch])
            grad = grad + _distance_penalty_gradient(params - global_params,
                                                     prev_benign_mean, distance_weight)
            params, stealth_state = nn.optimizer_step(stealth_state, params, grad)
    if not np.all(np.isfinite(params)):
        raise TrainingError("alternating minimization diverged")
    return params - global_params


def estimate_previous_step(state: MaliciousState, current_global: np.ndarray,
                           round_index: int, literal: bool = False) -> np.ndarray:
    """Estimate of the other agents' per-round aggregate update.

    Uses the drift of the global model since the adversary's last selection,
    net of its own (aggregation-scaled) contribution, averaged over the gap.
    Before any selection there is no information and the estimate is zero.
    The `literal` flag skips the alpha scaling of the own-update term.
    """
    if state.last_round is None:
        return np.zeros_like(current_global)
    if round_index == state.last_round:
        raise InputError("estimation needs at least one round since the last selection")
    own = state.last_sent if literal else state.alpha * state.last_sent
    gap = round_index - state.last_round
    return (current_global - state.last_global - own) / gap


def apply_post_correction(sent: np.ndarray, benign_estimate: np.ndarray,
                          boost_factor: float) -> np.ndarray:
    """Subtract the boosted benign estimate from an already-computed update."""
    return sent - boost_factor * benign_estimate


def dirty_label_augment(shard_x: np.ndarray, shard_y: np.ndarray,
                        sample: np.ndarray, target: int, copies: int,
                        noise_amplitude: float,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Append mislabeled copies of one sample, with optional uniform noise.

    Noise is drawn per feature in [0, noise_amplitude] and the result is
    clipped to [0, 1], matching pixel-style features.
    """
    if copies < 0:
        raise InputError("copies must be >= 0")
    if copies == 0:
        return shard_x, shard_y
    tiled = np.tile(sample, (copies, 1))
    if noise_amplitude > 0:
        tiled = np.clip(tiled + rng.uniform(0.0, noise_amplitude, tiled.shape), 0.0, 1.0)
    aug_x = np.concatenate([shard_x, tiled])
    aug_y = np.concatenate([shard_y, np.full(copies, target, dtype=int)])
    return aug_x, aug_y


class MaliciousAgent:
    """Single non-colluding adversary driving one of the attack strategies."""

    def __init__(self, agent_id: int, spec: nn.ModelSpec, features: np.ndarray,
                 labels: np.ndarray, aux: AuxSet, config: AttackConfig,
                 alpha: float, master_seed: int, benign_plan: TrainingPlan):
        self.agent_id = agent_id
        self.spec = spec
        self.features = features
        self.labels = labels
        self.aux = aux
        self.config = config
        self.master_seed = master_seed
        self.benign_plan = benign_plan
        self.state = MaliciousState(alpha=alpha)
        self.last_benign_estimate = None
        if config.strategy == "data_poison":
            rng = derive_rng(master_seed, "poison", agent=agent_id)
            self.features, self.labels = dirty_label_augment(
                features, labels, aux.features[0], int(aux.target_labels[0]),
                config.copies, config.noise_amplitude, rng)

    def _epoch_rng(self, round_index):
        def epoch_rng(epoch):
            return derive_rng(self.master_seed, "batch", agent=self.agent_id,
                              round_index=round_index, extra=epoch)
        return epoch_rng

    def compute_update(self, global_params: np.ndarray, round_index: int) -> np.ndarray:
        cfg = self.config
        benign_estimate = np.zeros_like(global_params)
        if self.state.last_round is not None:
            benign_estimate = estimate_previous_step(
                self.state, global_params, round_index, cfg.literal_history_delta)
        self.last_benign_estimate = benign_estimate

        start = global_params
        if cfg.estimation == "previous_step" and cfg.correction == "pre":
            start = global_params + benign_estimate

        if cfg.strategy == "targeted_explicit":
            sent = targeted_explicit_update(self.spec, start, self.aux,
                                            cfg.malicious_epochs, cfg.boost_factor,
                                            cfg.optimizer, cfg.learning_rate)
        elif cfg.strategy == "targeted_implicit":
            sent = targeted_implicit_update(self.spec, start, self.aux,
                                            self.state.alpha, cfg.malicious_epochs,
                                            cfg.optimizer, cfg.learning_rate)
        elif cfg.strategy == "stealthy":
            plan = TrainingPlan(epochs=cfg.malicious_epochs, batch_size=cfg.batch_size,
                                optimizer=cfg.optimizer, learning_rate=cfg.learning_rate)
            sent = stealthy_update(self.spec, start, self.features, self.labels,
                                   self.aux, cfg.boost_factor, cfg.distance_weight,
                                   benign_estimate, cfg.malicious_epochs, plan,
                                   self._epoch_rng(round_index))
        elif cfg.strategy == "alternating_min":
            stealth_lr = cfg.stealth_learning_rate
            if stealth_lr is None:
                stealth_lr = cfg.learning_rate
            batch_rng = derive_rng(self.master_seed, "batch", agent=self.agent_id,
                                   round_index=round_index)
            sent = alternating_min_update(self.spec, start, self.features, self.labels,
                                          self.aux, cfg.boost_factor,
                                          cfg.distance_weight, benign_estimate,
                                          cfg.malicious_epochs, cfg.stealth_steps,
                                          cfg.optimizer, cfg.learning_rate,
                                          stealth_lr, cfg.batch_size, batch_rng)
        elif cfg.strategy == "data_poison":
            final = local_train(self.spec, global_params, self.features, self.labels,
                                self.benign_plan, self._epoch_rng(round_index))
            sent = final - global_params
        else:  # pragma: no cover - guarded by AttackConfig validation
            raise InputError(f"unknown strategy {cfg.strategy!r}")

        if cfg.estimation == "previous_step" and cfg.correction == "post":
            sent = apply_post_correction(sent, benign_estimate, cfg.boost_factor)

        self.state.record_selection(round_index, global_params, sent)
        return sent
