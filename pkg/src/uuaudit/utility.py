"""Facility-location utility, its greedy gain, and the coverage baseline.

The facility-location utility of a query set Q with discovered
misclassifications S is

    W(Q) = sum_{q in S} r(c_q) - (1/n) * sum_x min_{q in S} d(x, q)

with reward r(c) = log(1 / (1 - c)). While S is empty the per-point nearest
distance is defined as ``d_cap`` (the test-set diameter), so W starts at
``-d_cap`` and the first discovery earns a full coverage reward.

The coverage baseline utility is

    U(Q) = sum_x c_x * max_{q in S} sim(x, q),      sim(x, q) = exp(-d(x, q))

with the empty max taken as 0.

Greedy selection maximizes the expected utility after one more query. For a
candidate with misclassification probability phi the expectation splits into
a with-discovery branch and a without branch; the without branch is constant
across candidates, so the argmax reduces to the nonnegative gain

    gain = phi * ( r(c_cand) + (1/n) * sum_x max(0, m_x - d(x, cand)) )

where m_x is the cached nearest-discovery distance. Both the full
expectation and the reduced gain are implemented; their equivalence is a
tested invariant rather than an assumption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import TestSet, distances_to, max_pairwise_distance, pairwise_distances
from .errors import ConsistencyError, ReuseError, ValidationError

# reward diverges at c=1; clamp keeps a single point from dominating the argmax
CONFIDENCE_CLAMP = 1e-6


def reward(c: float) -> float:
    """Discovery reward log(1/(1-c)), clamped so c=1 stays finite."""
    if not 0.0 <= c <= 1.0:
        raise ValidationError(f"confidence {c} outside [0, 1]")
    c = min(c, 1.0 - CONFIDENCE_CLAMP)
    return -math.log1p(-c)


def reward_vector(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if np.any(c < 0.0) or np.any(c > 1.0):
        raise ValidationError("confidence outside [0, 1]")
    return -np.log1p(-np.minimum(c, 1.0 - CONFIDENCE_CLAMP))


def similarity(x: np.ndarray, q: np.ndarray) -> float:
    """Distance-based similarity exp(-d(x, q)); 1 iff x == q."""
    from .dataset import euclidean_distance

    return math.exp(-euclidean_distance(x, q))


class SearchState:
    """Bookkeeping for one query run: Q, oracle labels, S, and the
    per-point nearest-discovery distance cache."""

    def __init__(self, ts: TestSet, d_cap: float | None = None):
        self.d_cap = float(max_pairwise_distance(ts.features) if d_cap is None else d_cap)
        if self.d_cap < 0:
            raise ValidationError("d_cap must be nonnegative")
        self.queried: list[str] = []
        self.labels: dict[str, str] = {}
        self.uus: list[str] = []  # discovery order; membership via uu_set
        self.uu_set: set[str] = set()
        self.nearest_uu_dist = np.full(ts.n, self.d_cap, dtype=float)

    def is_uu_outcome(self, ts: TestSet, point_id: str, label: str) -> bool:
        """Would this oracle answer put the point into S?"""
        pt = ts.point(point_id)
        if label == pt.predicted_class:
            return False
        if ts.critical_class is not None and pt.predicted_class != ts.critical_class:
            return False
        return True

    def record_answer(
        self,
        ts: TestSet,
        point_id: str,
        label: str,
        dist_row: np.ndarray | None = None,
    ) -> bool:
        """Apply one oracle answer; returns whether the point joined S.

        ``dist_row`` may supply the precomputed distances from every test
        point to this one; otherwise they are computed here.
        """
        if point_id not in ts:
            raise ConsistencyError(f"point {point_id!r} not in test set")
        if point_id in self.labels:
            raise ReuseError(f"point {point_id!r} already queried")
        self.queried.append(point_id)
        self.labels[point_id] = label
        is_uu = self.is_uu_outcome(ts, point_id, label)
        if is_uu:
            idx = ts.index_of(point_id)
            if dist_row is None:
                dist_row = distances_to(ts.features, ts.features[idx])
            if self.uus:
                np.minimum(self.nearest_uu_dist, dist_row, out=self.nearest_uu_dist)
            else:
                # first discovery: the cache switches from the d_cap
                # convention to true minimum distances
                self.nearest_uu_dist = dist_row.astype(float, copy=True)
            self.uus.append(point_id)
            self.uu_set.add(point_id)
        return is_uu

    def recompute_nearest(self, ts: TestSet) -> np.ndarray:
        """Full O(n * |S|) recomputation of the nearest-distance cache."""
        if not self.uus:
            return np.full(ts.n, self.d_cap, dtype=float)
        idx = [ts.index_of(q) for q in self.uus]
        D = pairwise_distances(ts.features, ts.features[idx])
        return D.min(axis=1)


def _check_state(ts: TestSet, state: SearchState) -> None:
    for pid in state.queried:
        if pid not in ts:
            raise ConsistencyError(f"state references unknown id {pid!r}")
    if state.nearest_uu_dist.shape[0] != ts.n:
        raise ConsistencyError(
            f"nearest-distance cache has length {state.nearest_uu_dist.shape[0]}, "
            f"test set has {ts.n} points"
        )


@dataclass(frozen=True)
class UtilityValue:
    """Facility-location utility split into its two terms."""

    total: float
    reward_term: float
    penalty_term: float

    @classmethod
    def of(cls, reward_term: float, penalty_term: float) -> "UtilityValue":
        return cls(reward_term - penalty_term, reward_term, penalty_term)


def facility_utility(ts: TestSet, state: SearchState) -> UtilityValue:
    """W(Q): summed discovery rewards minus mean nearest-discovery distance."""
    _check_state(ts, state)
    reward_term = float(
        sum(reward(ts.confidences[ts.index_of(q)]) for q in state.uus)
    )
    # empty-S convention held exactly: the mean of n copies of d_cap can
    # drift by an ulp, and W must sit at -d_cap until the first discovery
    if state.uus:
        penalty_term = float(np.mean(state.nearest_uu_dist))
    else:
        penalty_term = state.d_cap
    return UtilityValue.of(reward_term, penalty_term)


def _candidate_index(ts: TestSet, state: SearchState, candidate: str) -> int:
    idx = ts.index_of(candidate)
    if candidate in state.labels:
        raise ReuseError(f"candidate {candidate!r} already queried")
    return idx


def _check_phi(phi: float) -> float:
    if not 0.0 <= phi <= 1.0:
        raise ValidationError(f"phi {phi} outside [0, 1]")
    return float(phi)


def expected_fl_utility(
    ts: TestSet, state: SearchState, candidate: str, phi: float
) -> float:
    """Expected W after querying the candidate: the phi-weighted average of
    the discovered and not-discovered branches."""
    phi = _check_phi(phi)
    idx = _candidate_index(ts, state, candidate)
    base = facility_utility(ts, state)
    d_row = distances_to(ts.features, ts.features[idx])
    reward_with = base.reward_term + reward(ts.confidences[idx])
    penalty_with = float(np.mean(np.minimum(state.nearest_uu_dist, d_row)))
    w_with = reward_with - penalty_with
    return phi * w_with + (1.0 - phi) * base.total


def fl_gain(ts: TestSet, state: SearchState, candidate: str, phi: float) -> float:
    """Reduced greedy objective: phi * (reward + mean distance relief).

    Shares its argmax with :func:`expected_fl_utility` because the
    without-discovery branch is constant across candidates.
    """
    phi = _check_phi(phi)
    idx = _candidate_index(ts, state, candidate)
    _check_state(ts, state)
    d_row = distances_to(ts.features, ts.features[idx])
    relief = float(np.mean(np.maximum(0.0, state.nearest_uu_dist - d_row)))
    return phi * (reward(ts.confidences[idx]) + relief)


def fl_gain_batch(
    ts: TestSet,
    state: SearchState,
    candidate_indices: np.ndarray,
    phis: np.ndarray,
    chunk: int = 256,
) -> np.ndarray:
    """Vectorized fl_gain over candidate row indices (no reuse checks)."""
    X = ts.features
    nearest = state.nearest_uu_dist
    rewards = reward_vector(ts.confidences[candidate_indices])
    relief = np.empty(len(candidate_indices))
    for start in range(0, len(candidate_indices), chunk):
        idx = candidate_indices[start:start + chunk]
        D = pairwise_distances(X, X[idx])
        relief[start:start + chunk] = np.maximum(0.0, nearest[:, None] - D).mean(axis=0)
    return np.asarray(phis, dtype=float) * (rewards + relief)


def coverage_utility(ts: TestSet, state: SearchState) -> float:
    """U(Q): confidence-weighted similarity of each point to its nearest
    discovery; 0 while S is empty."""
    _check_state(ts, state)
    if not state.uus:
        return 0.0
    sims = np.exp(-state.nearest_uu_dist)
    return float(np.sum(ts.confidences * sims))


def expected_coverage_gain(
    ts: TestSet, state: SearchState, candidate: str, phi: float
) -> float:
    """Expected U after querying the candidate (discovered with probability
    phi, unchanged otherwise). Maximizing this equals maximizing the expected
    increase because the without branch is candidate-independent."""
    phi = _check_phi(phi)
    idx = _candidate_index(ts, state, candidate)
    u_without = coverage_utility(ts, state)
    d_row = distances_to(ts.features, ts.features[idx])
    sim_cur = np.exp(-state.nearest_uu_dist) if state.uus else np.zeros(ts.n)
    u_with = float(np.sum(ts.confidences * np.maximum(sim_cur, np.exp(-d_row))))
    return phi * u_with + (1.0 - phi) * u_without


def expected_coverage_batch(
    ts: TestSet,
    state: SearchState,
    candidate_indices: np.ndarray,
    phis: np.ndarray,
    chunk: int = 256,
) -> np.ndarray:
    """Vectorized expected_coverage_gain over candidate row indices."""
    X = ts.features
    conf = ts.confidences
    sim_cur = np.exp(-state.nearest_uu_dist) if state.uus else np.zeros(ts.n)
    u_without = float(np.sum(conf * sim_cur)) if state.uus else 0.0
    u_with = np.empty(len(candidate_indices))
    for start in range(0, len(candidate_indices), chunk):
        idx = candidate_indices[start:start + chunk]
        S = np.exp(-pairwise_distances(X, X[idx]))
        u_with[start:start + chunk] = (
            conf[:, None] * np.maximum(sim_cur[:, None], S)
        ).sum(axis=0)
    phis = np.asarray(phis, dtype=float)
    return phis * u_with + (1.0 - phis) * u_without
