"""Experiment orchestration: build, run, measure, persist.

One call to run_experiment executes a full federated run described by an
ExperimentConfig, deterministically in its master seed, and returns every
per-round record plus side channels used by tests (ground-truth benign
aggregates, the adversary's estimates) that are never exposed to agents.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import nn, stealth
from .attacks import AttackConfig, MaliciousAgent
from .config import DetectionConfig, ExperimentConfig, resolved_range_threshold
from .data import Dataset, load_idx, load_tabular, make_synthetic, pick_aux, \
    shard_iid, split_train_val
from .errors import ConfigError, InputError
from .protocol import BenignAgent, CoomedRule, KrumRule, ServerState, TrainingPlan, \
    WeightedAverageRule, early_stop, run_round, select_agents
from .records import RoundRecord, write_metrics
from .seeding import derive_rng

HISTOGRAM_COLUMNS = ["t", "agent", "bin", "lower", "upper", "count"]


def derive_submaster(master: int, purpose: str) -> int:
    """63-bit sub-seed for a named purpose, stable across platforms."""
    digest = hashlib.sha256(f"{master}|{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & (2 ** 63 - 1)


@dataclass
class Prepared:
    """Materialized ingredients of one run."""

    spec: nn.ModelSpec
    train: Dataset
    val: Dataset
    shards: list
    aux: object | None
    behaviors: dict
    malicious: int | None
    alphas: np.ndarray
    initial_params: np.ndarray
    rule: object


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    final_params: np.ndarray
    initial_params: np.ndarray
    range_threshold: float
    benign_aggregates: dict[int, np.ndarray] = field(default_factory=dict)
    benign_estimates: dict[int, np.ndarray] = field(default_factory=dict)
    histograms: list[tuple[int, int, np.ndarray]] = field(default_factory=list)
    histogram_edges: np.ndarray | None = None


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    ds = cfg.dataset
    if ds.source == "synthetic":
        return make_synthetic(ds.classes, ds.dim, ds.per_class, ds.spread,
                              derive_submaster(cfg.seed, "data"))
    if ds.source == "idx":
        return load_idx(ds.images, ds.labels)
    return load_tabular(ds.path, ds.label_column, ds.categorical_columns,
                        ds.numeric_columns, ds.label_values, ds.delimiter)


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Load data, split, shard, pick aux samples, and build all agents."""
    full = build_dataset(cfg)
    spec = nn.ModelSpec(cfg.model_layer_sizes)
    if spec.input_dim != full.feature_dim:
        raise ConfigError(f"model input dim {spec.input_dim} != feature dim "
                          f"{full.feature_dim}")
    if spec.class_count != full.class_count:
        raise ConfigError(f"model class count {spec.class_count} != dataset "
                          f"classes {full.class_count}")

    train_idx, val_idx = split_train_val(full, cfg.dataset.train_size,
                                         cfg.dataset.val_size,
                                         derive_submaster(cfg.seed, "split"),
                                         cfg.dataset.stratified)
    train, val = full.subset(train_idx), full.subset(val_idx)
    shards = shard_iid(train, cfg.federation.num_agents,
                       derive_submaster(cfg.seed, "shard"))
    sizes = np.array([s.size for s in shards], dtype=float)
    alphas = sizes / sizes.sum()

    plan = TrainingPlan(epochs=cfg.training.epochs, batch_size=cfg.training.batch_size,
                        optimizer=cfg.training.optimizer,
                        learning_rate=cfg.training.learning_rate)

    aux = None
    malicious = None
    if cfg.attack is not None:
        malicious = cfg.attack.malicious_agent
        a = cfg.attack.aux
        aux = pick_aux(val, a.count,
                       None if a.mixed else a.source_class,
                       None if a.mixed else a.target_class,
                       derive_submaster(cfg.seed, "aux"))

    behaviors = {}
    for shard in shards:
        x = train.features[shard.indices]
        y = train.labels[shard.indices]
        if malicious is not None and shard.owner == malicious:
            k = cfg.federation.per_round
            alpha_m = (alphas[malicious] if k == cfg.federation.num_agents
                       else 1.0 / k)
            attack_cfg = AttackConfig(
                strategy=cfg.attack.strategy,
                boost_factor=cfg.attack.boost_factor,
                distance_weight=cfg.attack.distance_weight,
                malicious_epochs=cfg.attack.malicious_epochs,
                stealth_steps=cfg.attack.stealth_steps,
                optimizer=cfg.attack.optimizer,
                learning_rate=cfg.attack.learning_rate,
                stealth_learning_rate=cfg.attack.stealth_learning_rate,
                batch_size=cfg.attack.batch_size or cfg.training.batch_size,
                estimation=cfg.attack.estimation,
                correction=cfg.attack.correction,
                literal_history_delta=cfg.attack.literal_history_delta,
                copies=cfg.attack.copies,
                noise_amplitude=cfg.attack.noise_amplitude)
            behaviors[shard.owner] = MaliciousAgent(
                shard.owner, spec, x, y, aux, attack_cfg, float(alpha_m),
                cfg.seed, plan)
        else:
            behaviors[shard.owner] = BenignAgent(shard.owner, spec, x, y, plan,
                                                 cfg.seed)

    if cfg.aggregation == "krum":
        rule = KrumRule(cfg.krum_assumed_byzantine, cfg.krum_squared_distances)
    elif cfg.aggregation == "coomed":
        rule = CoomedRule()
    else:
        rule = WeightedAverageRule()

    initial = nn.init_params(spec, derive_rng(cfg.seed, "init"))
    return Prepared(spec, train, val, shards, aux, behaviors, malicious,
                    alphas, initial, rule)


def calibrate_range_threshold(cfg: ExperimentConfig, prepared: Prepared) -> float:
    """Twice the largest any-agent range deviation over a benign warmup run."""
    sub = derive_submaster(cfg.seed, "calibration")
    plan = TrainingPlan(epochs=cfg.training.epochs, batch_size=cfg.training.batch_size,
                        optimizer=cfg.training.optimizer,
                        learning_rate=cfg.training.learning_rate)
    behaviors = {}
    for shard in prepared.shards:
        behaviors[shard.owner] = BenignAgent(
            shard.owner, prepared.spec,
            prepared.train.features[shard.indices],
            prepared.train.labels[shard.indices], plan, sub)
    state = ServerState(0, prepared.initial_params, prepared.alphas,
                        history=[prepared.initial_params])
    rule = WeightedAverageRule()
    worst = 0.0
    for _ in range(cfg.detection.calibration_rounds):
        selected = select_agents(cfg.federation.num_agents,
                                 cfg.federation.per_round, state.round + 1, sub)
        state, ctx = run_round(state, selected, behaviors, rule,
                               monitor=lambda c: c)
        if len(selected) < 3:
            continue
        for suspect in selected:
            ranges, _, _ = stealth.round_distance_summary(ctx.deltas, suspect)
            deviation, _ = stealth.range_check(ranges, suspect, math.inf)
            worst = max(worst, deviation)
    return 2.0 * worst


def run_experiment(cfg: ExperimentConfig, persist: bool | None = None) -> RunResult:
    """Execute a config end to end; write artifacts when an output dir is set."""
    prepared = prepare(cfg)
    kappa = resolved_range_threshold(cfg.detection)
    if kappa is None:
        kappa = calibrate_range_threshold(cfg, prepared)

    spec = prepared.spec
    val_x, val_y = prepared.val.features, prepared.val.labels
    gamma = cfg.detection.accuracy_gap_threshold
    bins = cfg.detection.histogram_bins
    hist_range = cfg.detection.histogram_range
    malicious = prepared.malicious
    aux = prepared.aux
    is_krum = isinstance(prepared.rule, KrumRule)

    result = RunResult(cfg, [], prepared.initial_params, prepared.initial_params,
                       kappa)
    result.histogram_edges = np.linspace(hist_range[0], hist_range[1], bins + 1)

    def monitor(ctx) -> RoundRecord:
        rec = RoundRecord(t=ctx.round_index,
                          val_acc_global=nn.accuracy(spec, ctx.new_params, val_x, val_y))
        if aux is not None:
            conf = nn.confidences(spec, ctx.new_params, aux.features,
                                  aux.target_labels)
            preds = nn.forward(spec, ctx.new_params, aux.features).argmax(axis=1)
            rec.mal_conf_mean = float(conf.mean())
            rec.mal_targets_hit_frac = float((preds == aux.target_labels).mean())

        mal_selected = malicious is not None and malicious in ctx.deltas
        if mal_selected:
            pos = ctx.selected.index(malicious)
            others = [i for i in ctx.selected if i != malicious]
            other_alphas = np.delete(ctx.selected_alphas, pos)
            gap, flagged = stealth.accuracy_gap_check(
                spec, ctx.previous_params, ctx.deltas[malicious],
                [ctx.deltas[i] for i in others], other_alphas, val_x, val_y, gamma)
            rec.acc_gap, rec.acc_flag = gap, flagged
            rec.val_acc_mal_local = nn.accuracy(
                spec, ctx.previous_params + ctx.deltas[malicious], val_x, val_y)
            if len(others) >= 2:
                ranges, ref_bounds, sus_bounds = stealth.round_distance_summary(
                    ctx.deltas, malicious)
                rec.l2_ben_min, rec.l2_ben_max = ref_bounds
                rec.l2_mal_min, rec.l2_mal_max = sus_bounds
                deviation, dist_flagged = stealth.range_check(ranges, malicious, kappa)
                rec.dist_deviation, rec.dist_flag = deviation, dist_flagged
        elif len(ctx.selected) >= 2:
            mat = np.asarray([ctx.deltas[i] for i in ctx.selected])
            diffs = mat[:, None, :] - mat[None, :, :]
            dist = np.sqrt((diffs ** 2).sum(axis=2))
            pairs = dist[np.triu_indices(len(mat), k=1)]
            rec.l2_ben_min, rec.l2_ben_max = float(pairs.min()), float(pairs.max())

        if is_krum:
            rec.krum_chosen_agent = ctx.chosen_agent
            if malicious is not None:
                rec.mal_chosen = ctx.chosen_agent == malicious

        benign_sum = np.zeros_like(ctx.new_params)
        for pos_i, i in enumerate(ctx.selected):
            if i != malicious:
                benign_sum += ctx.selected_alphas[pos_i] * ctx.deltas[i]
            counts, _ = stealth.update_histogram(ctx.deltas[i], bins, hist_range)
            result.histograms.append((ctx.round_index, i, counts))
        result.benign_aggregates[ctx.round_index] = benign_sum
        if mal_selected:
            agent = prepared.behaviors[malicious]
            if getattr(agent, "last_benign_estimate", None) is not None:
                result.benign_estimates[ctx.round_index] = agent.last_benign_estimate
        return rec

    state = ServerState(0, prepared.initial_params, prepared.alphas,
                        history=[prepared.initial_params])
    target = cfg.federation.early_stop_accuracy
    last_acc = None
    while not early_stop(last_acc, state.round, target, cfg.federation.max_rounds):
        selected = select_agents(cfg.federation.num_agents,
                                 cfg.federation.per_round, state.round + 1, cfg.seed)
        state, rec = run_round(state, selected, prepared.behaviors, prepared.rule,
                               monitor)
        result.records.append(rec)
        last_acc = rec.val_acc_global
    result.final_params = state.global_params

    if persist is None:
        persist = cfg.output_dir is not None
    if persist:
        if cfg.output_dir is None:
            raise InputError("persistence requested without an output_dir")
        emit_metrics(result, cfg.output_dir)
    return result


def emit_metrics(result: RunResult, out_dir) -> None:
    """Write metrics.csv, config.json, histograms.csv, final_params.npy."""
    os.makedirs(out_dir, exist_ok=True)
    write_metrics(result.records, os.path.join(out_dir, "metrics.csv"))

    config_path = os.path.join(out_dir, "config.json")
    tmp = config_path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(result.config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, config_path)

    hist_path = os.path.join(out_dir, "histograms.csv")
    tmp = hist_path + ".tmp"
    edges = result.histogram_edges
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(HISTOGRAM_COLUMNS) + "\n")
        for t, agent, counts in result.histograms:
            for b, count in enumerate(counts):
                lower = "-inf" if b == 0 else repr(float(edges[b - 1]))
                upper = "inf" if b == len(counts) - 1 else repr(float(edges[b]))
                f.write(f"{t},{agent},{b - 1},{lower},{upper},{int(count)}\n")
    os.replace(tmp, hist_path)

    np.save(os.path.join(out_dir, "final_params.npy"), result.final_params)
