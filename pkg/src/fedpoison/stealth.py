"""Server-side anomaly checks on collected updates.

Two detectors: a validation-accuracy gap between the model carrying one
agent's lone update and the model aggregating everyone else's, and a
pairwise-L2-distance range comparison between one agent and the field.
Histograms of update coordinates support qualitative inspection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InputError


@dataclass(frozen=True)
class DistanceRange:
    """Min and max L2 distance from one agent's update to a reference group."""

    agent: int
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper or self.lower < 0:
            raise InputError(f"invalid distance range [{self.lower}, {self.upper}]")


@dataclass(frozen=True)
class StealthVerdict:
    """Outcome of both checks for one agent in one round."""

    agent: int
    accuracy_gap: float | None
    accuracy_flagged: bool | None
    range_deviation: float | None
    distance_flagged: bool | None


def accuracy_gap_check(spec: nn.ModelSpec, previous_params: np.ndarray,
                       delta: np.ndarray, other_deltas, other_alphas,
                       val_x: np.ndarray, val_y: np.ndarray,
                       gap_threshold: float) -> tuple[float, bool]:
    """Accuracy of everyone-else's aggregate minus accuracy of the lone update.

    Both accuracies are percentages of the validation set; the gap is in
    percentage points and the update is flagged when gap >= threshold.
    """
    if len(val_y) == 0:
        raise InputError("validation set is empty")
    lone = previous_params + delta
    others = previous_params + np.asarray(other_alphas, dtype=float) @ np.asarray(other_deltas, dtype=float)
    gap = nn.accuracy(spec, others, val_x, val_y) - nn.accuracy(spec, lone, val_x, val_y)
    return gap, gap >= gap_threshold


def distance_ranges(updates) -> list[DistanceRange]:
    """Each agent's [min, max] L2 distance to every other update."""
    mat = np.asarray(updates, dtype=float)
    if mat.ndim != 2:
        raise InputError("updates must share one common length")
    if len(mat) < 3:
        raise InputError("distance ranges need at least 3 updates")
    diffs = mat[:, None, :] - mat[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=2))
    out = []
    for i in range(len(mat)):
        others = np.delete(dist[i], i)
        out.append(DistanceRange(i, float(others.min()), float(others.max())))
    return out


def range_check(ranges, suspect: int, range_threshold: float) -> tuple[float, bool]:
    """Deviation of the suspect's distance range from the reference ranges.

    `ranges[suspect]` must be the suspect's distances to the reference
    agents; the remaining entries must be the reference agents' distances
    among themselves. Deviation compares the suspect's upper bound to the
    smallest reference lower bound and its lower bound to the largest
    reference upper bound; the suspect is flagged at deviation >= threshold.
    """
    by_agent = {r.agent: r for r in ranges}
    if suspect not in by_agent:
        raise InputError(f"no range recorded for agent {suspect}")
    rest = [r for r in ranges if r.agent != suspect]
    if not rest:
        raise InputError("need at least one reference range")
    mine = by_agent[suspect]
    ref_lower = min(r.lower for r in rest)
    ref_upper = max(r.upper for r in rest)
    deviation = max(abs(mine.upper - ref_lower), abs(mine.lower - ref_upper))
    return deviation, deviation >= range_threshold


def round_distance_summary(deltas_by_agent: dict[int, np.ndarray],
                           suspect: int):
    """Build the suspect-vs-reference range list for one round's updates.

    Reference ranges are computed among the non-suspect agents only; the
    suspect's range is its distances to those agents. Returns
    (ranges, reference_bounds, suspect_bounds) where the bounds are
    (overall min pair distance, overall max pair distance).
    """
    others = sorted(i for i in deltas_by_agent if i != suspect)
    if len(others) < 2:
        raise InputError("need at least two non-suspect agents")
    mat = np.asarray([deltas_by_agent[i] for i in others], dtype=float)
    diffs = mat[:, None, :] - mat[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=2))
    ranges = []
    for k, agent in enumerate(others):
        rest = np.delete(dist[k], k)
        ranges.append(DistanceRange(agent, float(rest.min()), float(rest.max())))
    gaps = np.sqrt(((np.asarray(deltas_by_agent[suspect]) - mat) ** 2).sum(axis=1))
    ranges.append(DistanceRange(suspect, float(gaps.min()), float(gaps.max())))
    pair_dist = dist[np.triu_indices(len(others), k=1)]
    ref_bounds = (float(pair_dist.min()), float(pair_dist.max()))
    suspect_bounds = (float(gaps.min()), float(gaps.max()))
    return ranges, ref_bounds, suspect_bounds


def update_histogram(delta: np.ndarray, bin_count: int,
                     value_range: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    """Counts of update coordinates per bin, with overflow bins at both ends.

    Returns (counts, edges): counts has bin_count + 2 entries (below-range,
    in-range bins, above-range); edges are the bin_count + 1 inner edges.
    """
    if bin_count < 1:
        raise InputError("bin_count must be >= 1")
    lo, hi = value_range
    if not lo < hi:
        raise InputError(f"empty histogram range [{lo}, {hi}]")
    delta = np.asarray(delta, dtype=float)
    edges = np.linspace(lo, hi, bin_count + 1)
    inner, _ = np.histogram(delta, bins=edges)
    below = int((delta < lo).sum())
    above = int((delta > hi).sum())
    counts = np.concatenate(([below], inner, [above]))
    return counts, edges
