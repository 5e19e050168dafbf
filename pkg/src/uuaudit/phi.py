"""Estimators of phi(x): the probability a point is misclassified given the
labels gathered so far.

Three estimators are provided:

* prior: 1 - c, the complement of the classifier's own confidence. Used to
  initialize every search until both a misclassified and a correctly
  classified point have been observed.
* logistic: maximum-likelihood logistic regression on the queried points with
  design columns [confidence, feature_1..feature_p] and no separate intercept
  (the confidence column carries coefficient beta_0). Fitted by iteratively
  reweighted least squares with a small ridge term so early, often separable
  query sets stay finite.
* cluster_rates: k-means on [features, confidence], with per-cluster
  Laplace-smoothed discovery rates (uu + 1) / (queried + 2); clusters with no
  queries yet fall back to the prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import TestSet, TestPoint
from .errors import DimensionError, FitUnavailableError, ValidationError
from .utility import SearchState

RIDGE_LAMBDA = 1e-4
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
KMEANS_ITERS = 50
DEFAULT_CLUSTERS = 10


def prior_phi(c: float) -> float:
    """Initial misclassification probability 1 - c."""
    if not 0.0 <= c <= 1.0:
        raise ValidationError(f"confidence {c} outside [0, 1]")
    return 1.0 - c


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class PhiModel:
    """A fitted (or trivial) phi estimator.

    ``coefficients`` layout for the logistic kind is
    ``[beta_conf, beta_f0..beta_f{p-1}]``, or with ``has_intercept`` a leading
    free intercept term.
    """

    kind: str  # prior | logistic | cluster_rates
    coefficients: np.ndarray | None = None
    has_intercept: bool = False
    std_errors: np.ndarray | None = None
    centroids: np.ndarray | None = None
    cluster_assignments: dict[str, int] | None = None
    cluster_stats: list[tuple[int, int]] | None = None  # (queried, uu) per cluster
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out: dict = {"kind": self.kind, "has_intercept": self.has_intercept}
        if self.coefficients is not None:
            out["coefficients"] = self.coefficients.tolist()
        if self.std_errors is not None:
            out["std_errors"] = self.std_errors.tolist()
        if self.cluster_stats is not None:
            out["cluster_stats"] = [list(s) for s in self.cluster_stats]
        if self.metadata:
            out["metadata"] = dict(self.metadata)
        return out


def _design_row(point: TestPoint, has_intercept: bool) -> np.ndarray:
    row = np.concatenate(([point.confidence], point.features))
    if has_intercept:
        row = np.concatenate(([1.0], row))
    return row


def _design_matrix(ts: TestSet, ids: Sequence[str], has_intercept: bool) -> np.ndarray:
    idx = [ts.index_of(i) for i in ids]
    X = np.column_stack([ts.confidences[idx], ts.features[idx]])
    if has_intercept:
        X = np.column_stack([np.ones(len(idx)), X])
    return X


def _penalized_loglik(beta, X, y, lam):
    eta = X @ beta
    # log(1 + e^eta) computed stably
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return ll - 0.5 * lam * float(beta @ beta)


def fit_logistic(
    ts: TestSet,
    state: SearchState,
    ridge: float = RIDGE_LAMBDA,
    include_intercept: bool = False,
    max_iter: int = IRLS_MAX_ITER,
    tol: float = IRLS_TOL,
) -> PhiModel:
    """Fit the logistic phi model on the queried points.

    Requires the query set to contain at least one misclassified and one
    correctly classified point; otherwise raises FitUnavailableError and the
    caller is expected to fall back to the prior. IRLS steps are halved
    whenever a full Newton step would decrease the penalized log-likelihood,
    so the likelihood sequence is non-decreasing.
    """
    ids = state.queried
    y = np.array(
        [
            0.0 if state.labels[i] == ts.point(i).predicted_class else 1.0
            for i in ids
        ]
    )
    if len(ids) < 2 or y.min() == y.max():
        raise FitUnavailableError(
            "need at least one misclassified and one correctly classified point"
        )
    X = _design_matrix(ts, ids, include_intercept)
    m = X.shape[1]
    beta = np.zeros(m)
    ll = _penalized_loglik(beta, X, y, ridge)
    ll_path = [ll]
    converged = False
    for _ in range(max_iter):
        mu = _sigmoid(X @ beta)
        grad = X.T @ (y - mu) - ridge * beta
        w = mu * (1.0 - mu)
        H = X.T @ (w[:, None] * X) + ridge * np.eye(m)
        direction = np.linalg.solve(H, grad)
        step = 1.0
        for _ in range(40):
            candidate = beta + step * direction
            ll_new = _penalized_loglik(candidate, X, y, ridge)
            if ll_new >= ll:
                break
            step *= 0.5
        else:
            candidate, ll_new = beta, ll
        delta = np.max(np.abs(candidate - beta))
        beta, ll = candidate, ll_new
        ll_path.append(ll)
        if delta < tol:
            converged = True
            break
    mu = _sigmoid(X @ beta)
    w = mu * (1.0 - mu)
    H = X.T @ (w[:, None] * X) + ridge * np.eye(m)
    std_errors = np.sqrt(np.diag(np.linalg.inv(H)))
    eta = X @ beta
    separable = bool(np.all((eta > 0) == (y == 1.0)) and np.max(np.abs(eta)) > 8.0)
    return PhiModel(
        kind="logistic",
        coefficients=beta,
        has_intercept=include_intercept,
        std_errors=std_errors,
        metadata={
            "converged": converged,
            "separable": separable,
            "ridge": ridge,
            "ll_path": ll_path,
        },
    )


def predict_phi(model: PhiModel, point: TestPoint) -> float:
    """Estimated misclassification probability for one point, always in [0, 1]."""
    if model.kind == "prior":
        return prior_phi(point.confidence)
    if model.kind == "logistic":
        if model.coefficients is None:
            raise FitUnavailableError("logistic model has no coefficients")
        row = _design_row(point, model.has_intercept)
        if row.shape[0] != model.coefficients.shape[0]:
            raise DimensionError(
                f"point has {row.shape[0]} predictors, model expects "
                f"{model.coefficients.shape[0]}"
            )
        return float(_sigmoid(np.array([row @ model.coefficients]))[0])
    if model.kind == "cluster_rates":
        if model.centroids is None or model.cluster_stats is None:
            raise FitUnavailableError("cluster model is incomplete")
        assignments = model.cluster_assignments or {}
        if point.id in assignments:
            cluster = assignments[point.id]
        else:
            z = np.concatenate((point.features, [point.confidence]))
            if z.shape[0] != model.centroids.shape[1]:
                raise DimensionError(
                    f"point has {z.shape[0]} clustering coordinates, model "
                    f"expects {model.centroids.shape[1]}"
                )
            cluster = int(np.argmin(np.linalg.norm(model.centroids - z, axis=1)))
        queried, uu = model.cluster_stats[cluster]
        if queried == 0:
            return prior_phi(point.confidence)
        return (uu + 1.0) / (queried + 2.0)
    raise ValidationError(f"unknown phi model kind {model.kind!r}")


def lloyd_kmeans(
    Z: np.ndarray, k: int, seed: int, iters: int = KMEANS_ITERS
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded Lloyd's algorithm; returns (centroids, assignments).

    Initial centroids are k distinct rows chosen by the seeded generator.
    Empty clusters are reseeded to the point farthest from its centroid.
    """
    n = Z.shape[0]
    if not 1 <= k <= n:
        raise DimensionError(f"k={k} out of range [1, {n}]")
    rng = np.random.default_rng(seed)
    centroids = Z[rng.choice(n, size=k, replace=False)].astype(float)
    assign = np.zeros(n, dtype=int)
    for _ in range(iters):
        d2 = ((Z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        dist_own = d2[np.arange(n), new_assign]
        for c in range(k):
            mask = new_assign == c
            if mask.any():
                centroids[c] = Z[mask].mean(axis=0)
            else:
                far = int(np.argmax(dist_own))
                centroids[c] = Z[far]
                new_assign[far] = c
                dist_own[far] = 0.0
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    return centroids, assign


def cluster_rate(queried: int, uu: int) -> float:
    """Laplace-smoothed discovery rate (uu + 1) / (queried + 2)."""
    return (uu + 1.0) / (queried + 2.0)


def fit_cluster_rates(
    ts: TestSet, state: SearchState, k: int = DEFAULT_CLUSTERS, seed: int = 0
) -> PhiModel:
    """Cluster the test set on [features, confidence] and estimate per-cluster
    smoothed discovery rates from the queried points."""
    Z = np.column_stack([ts.features, ts.confidences])
    centroids, assign = lloyd_kmeans(Z, k, seed)
    stats = [[0, 0] for _ in range(k)]
    for pid in state.queried:
        c = int(assign[ts.index_of(pid)])
        stats[c][0] += 1
        if pid in state.uu_set:
            stats[c][1] += 1
    return PhiModel(
        kind="cluster_rates",
        centroids=centroids,
        cluster_assignments={pid: int(assign[i]) for i, pid in enumerate(ts.ids)},
        cluster_stats=[(q, u) for q, u in stats],
        metadata={"k": k, "seed": seed},
    )


class PhiEstimator:
    """Per-step phi supplier for the search loop. Subclasses keep whatever
    geometry they need fixed for the run and refresh evidence after every
    oracle answer."""

    def refresh(self, ts: TestSet, state: SearchState) -> None:
        pass

    def phis(self, ts: TestSet, state: SearchState, indices: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def snapshot(self) -> PhiModel:
        raise NotImplementedError


class PriorEstimator(PhiEstimator):
    def phis(self, ts, state, indices):
        return 1.0 - ts.confidences[indices]

    def snapshot(self) -> PhiModel:
        return PhiModel(kind="prior")


class LogisticEstimator(PhiEstimator):
    """Refit after every answer once both outcomes are present; prior before."""

    def __init__(self, include_intercept: bool = False, ridge: float = RIDGE_LAMBDA):
        self.include_intercept = include_intercept
        self.ridge = ridge
        self.model: PhiModel = PhiModel(kind="prior")

    def refresh(self, ts, state):
        try:
            self.model = fit_logistic(
                ts, state, ridge=self.ridge, include_intercept=self.include_intercept
            )
        except FitUnavailableError:
            self.model = PhiModel(kind="prior")

    def phis(self, ts, state, indices):
        if self.model.kind == "prior":
            return 1.0 - ts.confidences[indices]
        X = np.column_stack([ts.confidences[indices], ts.features[indices]])
        if self.model.has_intercept:
            X = np.column_stack([np.ones(len(indices)), X])
        return _sigmoid(X @ self.model.coefficients)

    def snapshot(self) -> PhiModel:
        return self.model


class ClusterRatesEstimator(PhiEstimator):
    """k-means geometry fixed once per run; rates recomputed from the state."""

    def __init__(self, k: int = DEFAULT_CLUSTERS, seed: int = 0):
        self.k = k
        self.seed = seed
        self._assign: np.ndarray | None = None
        self._centroids: np.ndarray | None = None
        self._stats: list[list[int]] = []

    def _ensure_clusters(self, ts: TestSet) -> None:
        if self._assign is None:
            Z = np.column_stack([ts.features, ts.confidences])
            self._centroids, self._assign = lloyd_kmeans(Z, self.k, self.seed)

    def assignments(self, ts: TestSet) -> np.ndarray:
        self._ensure_clusters(ts)
        return self._assign

    def refresh(self, ts, state):
        self._ensure_clusters(ts)
        stats = [[0, 0] for _ in range(self.k)]
        for pid in state.queried:
            c = int(self._assign[ts.index_of(pid)])
            stats[c][0] += 1
            if pid in state.uu_set:
                stats[c][1] += 1
        self._stats = stats

    def phis(self, ts, state, indices):
        self._ensure_clusters(ts)
        if not self._stats:
            self.refresh(ts, state)
        out = np.empty(len(indices))
        for j, i in enumerate(indices):
            queried, uu = self._stats[self._assign[i]]
            if queried == 0:
                out[j] = 1.0 - ts.confidences[i]
            else:
                out[j] = cluster_rate(queried, uu)
        return out

    def snapshot(self) -> PhiModel:
        return PhiModel(
            kind="cluster_rates",
            centroids=self._centroids,
            cluster_stats=[(q, u) for q, u in self._stats] if self._stats else None,
            metadata={"k": self.k, "seed": self.seed},
        )
