"""Byzantine-resilient aggregation rules: Krum and coordinate-wise median."""

from __future__ import annotations

import numpy as np

from .errors import InputError


def _as_update_matrix(updates) -> np.ndarray:
    mat = np.asarray(updates, dtype=float)
    if mat.ndim != 2:
        raise InputError("updates must share one common length")
    return mat


def krum_scores(updates, assumed_byzantine: int, squared: bool = False) -> np.ndarray:
    """Per-update score: summed distance to its n-f-2 nearest other updates.

    Distances are plain L2 by default; `squared` switches to squared L2.
    Requires n >= 2f + 3.
    """
    mat = _as_update_matrix(updates)
    n = len(mat)
    f = int(assumed_byzantine)
    if f < 0:
        raise InputError("assumed_byzantine must be >= 0")
    if n < 2 * f + 3:
        raise InputError(f"krum needs at least 2f+3 = {2 * f + 3} updates, got {n}")

    diffs = mat[:, None, :] - mat[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=2))
    if squared:
        dist = dist ** 2
    closest = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(dist[i], i)
        others.sort()
        scores[i] = others[:closest].sum()
    return scores


def krum_select(updates, assumed_byzantine: int,
                squared: bool = False) -> tuple[int, np.ndarray]:
    """Index and value of the lowest-score update; ties break to the lowest index."""
    mat = _as_update_matrix(updates)
    scores = krum_scores(mat, assumed_byzantine, squared)
    chosen = int(np.argmin(scores))  # argmin returns the first minimum
    return chosen, mat[chosen].copy()


def coomed(updates) -> np.ndarray:
    """Per-coordinate median; even counts take the midpoint of the middle pair."""
    mat = _as_update_matrix(updates)
    if len(mat) == 0:
        raise InputError("coomed needs at least one update")
    return np.median(mat, axis=0)
