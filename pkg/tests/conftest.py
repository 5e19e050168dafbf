"""Shared helpers: random instance builders used across the suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from uuaudit.dataset import TestPoint, TestSet
from uuaudit.utility import SearchState

CLASSES = ("a", "b")


def make_point(pid, features, confidence, predicted="a", true_label=None):
    return TestPoint(
        id=pid,
        features=np.asarray(features, dtype=float),
        confidence=confidence,
        predicted_class=predicted,
        true_label=true_label,
    )


def random_testset(
    rng: np.random.Generator,
    n: int | None = None,
    p: int | None = None,
    critical: str | None = None,
    duplicate_pairs: int = 0,
) -> TestSet:
    """Random labeled TestSet whose id order differs from row order, so
    lowest-id tie-breaking is actually exercised."""
    n = int(rng.integers(4, 16)) if n is None else n
    p = int(rng.integers(1, 4)) if p is None else p
    ids = [f"pt{i:04d}" for i in rng.permutation(n)]
    features = rng.standard_normal((n, p)) * 2.0
    conf = rng.uniform(0.05, 0.99, size=n)
    for _ in range(duplicate_pairs):
        i, j = rng.choice(n, size=2, replace=False)
        features[j] = features[i]
        conf[j] = conf[i]
    predicted = rng.integers(2, size=n)
    correct = rng.random(n) < 0.6
    points = []
    for i in range(n):
        pred = CLASSES[predicted[i]]
        true = pred if correct[i] else CLASSES[1 - predicted[i]]
        points.append(make_point(ids[i], features[i], float(conf[i]), pred, true))
    return TestSet(points, critical_class=critical)


def random_state(
    rng: np.random.Generator, ts: TestSet, max_queries: int | None = None
) -> SearchState:
    """State built by answering a random subset of points with random labels."""
    state = SearchState(ts)
    limit = ts.n - 1 if max_queries is None else min(max_queries, ts.n - 1)
    k = int(rng.integers(0, limit + 1))
    picks = rng.choice(ts.n, size=k, replace=False)
    for i in picks:
        pt = ts.points[i]
        label = pt.predicted_class if rng.random() < 0.5 else CLASSES[
            1 - CLASSES.index(pt.predicted_class)
        ]
        state.record_answer(ts, pt.id, label)
    return state


def brute_force_fl_expectation(ts, state, candidate_id, phi):
    """Two-branch expected facility utility recomputed with pure-python
    loops; shares no code with the production gain path."""
    X = ts.features
    n = ts.n

    def total_utility(uu_indices):
        rsum = 0.0
        for i in uu_indices:
            c = min(float(ts.confidences[i]), 1.0 - 1e-6)
            rsum += math.log(1.0 / (1.0 - c))
        if uu_indices:
            penalty = 0.0
            for x in range(n):
                penalty += min(
                    math.dist(X[x].tolist(), X[j].tolist()) for j in uu_indices
                )
            penalty /= n
        else:
            penalty = state.d_cap
        return rsum - penalty

    current = [ts.index_of(q) for q in state.uus]
    w_without = total_utility(current)
    w_with = total_utility(current + [ts.index_of(candidate_id)])
    return phi * w_with + (1.0 - phi) * w_without


def brute_force_argmax(ts, state, candidate_ids, phis):
    """Smallest-id argmax of the brute-force expectation."""
    best_value = -math.inf
    best_id = None
    for cand, phi in sorted(zip(candidate_ids, phis)):
        value = brute_force_fl_expectation(ts, state, cand, phi)
        if value > best_value:
            best_value, best_id = value, cand
    return best_id


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
