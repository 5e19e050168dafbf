"""Query strategies: sequential oracle-driven searches under a budget.

Four strategies are implemented behind one incremental engine so that batch
runs and interactive (human-labeled) sessions share every line of decision
logic:

* ``fl``: greedy facility-location search. At each step selects the
  unqueried point maximizing the expected utility gain
  ``phi * (reward + distance relief)``, with phi from the logistic estimator
  (prior 1 - c until both outcomes have been observed). Considers all
  unqueried points by default; no confidence threshold is required.
* ``mu``: most-uncertain baseline. Queries points with confidence >= tau in
  ascending confidence order.
* ``cov``: coverage-greedy baseline. Maximizes the expected coverage utility
  using cluster-rate phi estimates, candidates restricted to confidence >= tau.
* ``bandit``: UCB1 over k-means clusters, cluster reward = observed discovery
  rate, uniform within-cluster sampling among unqueried points with
  confidence >= tau.

Selection ties always break toward the lexicographically smallest point id,
so traces are bit-reproducible given identical inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .dataset import TestSet, distances_to
from .errors import ConfigError, OracleError, ValidationError
from .phi import (
    ClusterRatesEstimator,
    LogisticEstimator,
    PhiEstimator,
    PhiModel,
    PriorEstimator,
)
from .utility import (
    SearchState,
    expected_coverage_batch,
    facility_utility,
    fl_gain_batch,
)

STRATEGIES = ("fl", "mu", "cov", "bandit")


class Oracle:
    """Label source queried one point at a time; each id answered once."""

    kind = "abstract"

    def query(self, point_id: str) -> str:
        raise NotImplementedError


class SimulatedOracle(Oracle):
    """Answers from true labels snapshotted at construction time.

    The snapshot is the leakage boundary: search code never reads
    ``TestPoint.true_label`` directly, and mutating labels after the oracle
    exists cannot change its answers.
    """

    kind = "simulated"

    def __init__(self, answers: dict[str, str]):
        self._answers = dict(answers)
        self.answered: set[str] = set()

    def query(self, point_id: str) -> str:
        if point_id in self.answered:
            raise OracleError(f"point {point_id!r} was already answered")
        if point_id not in self._answers:
            raise OracleError(f"no label available for point {point_id!r}")
        self.answered.add(point_id)
        return self._answers[point_id]


def make_simulated_oracle(ts: TestSet) -> SimulatedOracle:
    """Oracle that answers each point's hidden true label."""
    missing = [pt.id for pt in ts.points if pt.true_label is None]
    if missing:
        shown = ", ".join(repr(i) for i in missing[:5])
        more = "" if len(missing) <= 5 else f" (+{len(missing) - 5} more)"
        raise OracleError(f"points missing true_label: {shown}{more}")
    return SimulatedOracle({pt.id: pt.true_label for pt in ts.points})


class ScriptedOracle(Oracle):
    """Answers from an explicit id -> label mapping (e.g. replayed sessions)."""

    kind = "scripted"

    def __init__(self, answers: dict[str, str]):
        self._answers = dict(answers)
        self.answered: set[str] = set()

    def query(self, point_id: str) -> str:
        if point_id in self.answered:
            raise OracleError(f"point {point_id!r} was already answered")
        try:
            label = self._answers[point_id]
        except KeyError:
            raise OracleError(f"no scripted answer for point {point_id!r}") from None
        self.answered.add(point_id)
        return label


@dataclass
class SearchConfig:
    """Knobs shared by every strategy; unused ones are ignored per strategy."""

    budget: int
    tau: float = 0.65
    seed: int = 0
    estimator: str | None = None  # None = strategy default; prior|logistic|cluster
    clusters: int = 10
    exploration: float = 1.0
    restrict_candidates: bool = False  # apply the tau filter to the fl search too
    allow_below_tau: bool = False  # let mu continue below tau instead of stopping
    include_intercept: bool = False

    def validate(self, ts: TestSet) -> None:
        if self.budget < 1:
            raise ConfigError(f"budget must be >= 1, got {self.budget}")
        if self.budget > ts.n:
            raise ConfigError(f"budget {self.budget} exceeds candidate count {ts.n}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau {self.tau} outside [0, 1]")
        if self.clusters < 1:
            raise ConfigError(f"clusters must be >= 1, got {self.clusters}")
        if self.exploration < 0:
            raise ConfigError("exploration weight must be nonnegative")
        if self.estimator not in (None, "prior", "logistic", "cluster"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class QueryStep:
    b: int
    point_id: str
    confidence: float
    phi: float
    label: str
    is_uu: bool
    utility: float
    gain: float

    def to_obj(self) -> dict:
        return {
            "b": self.b,
            "id": self.point_id,
            "c": self.confidence,
            "phi": self.phi,
            "label": self.label,
            "is_uu": self.is_uu,
            "W": self.utility,
            "gain": self.gain,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "QueryStep":
        return cls(
            b=int(obj["b"]),
            point_id=str(obj["id"]),
            confidence=float(obj["c"]),
            phi=float(obj["phi"]),
            label=str(obj["label"]),
            is_uu=bool(obj["is_uu"]),
            utility=float(obj["W"]),
            gain=float(obj["gain"]),
        )


@dataclass
class QueryTrace:
    """Ordered record of one search run; everything metrics need post hoc."""

    algorithm: str
    config: dict
    seed: int
    steps: list[QueryStep] = field(default_factory=list)
    early_stopped: bool = False
    aborted: bool = False
    stop_reason: str | None = None

    def uu_ids(self) -> list[str]:
        return [s.point_id for s in self.steps if s.is_uu]

    def uu_count(self) -> int:
        return sum(1 for s in self.steps if s.is_uu)

    def to_jsonl(self) -> str:
        """Canonical serialization: one step object per line."""
        return "".join(
            json.dumps(s.to_obj(), separators=(",", ":")) + "\n" for s in self.steps
        )


def write_trace(trace: QueryTrace, path: str | Path) -> None:
    Path(path).write_text(trace.to_jsonl(), encoding="utf-8")


def read_trace(path: str | Path, algorithm: str = "unknown") -> QueryTrace:
    steps = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            steps.append(QueryStep.from_obj(json.loads(line)))
    return QueryTrace(algorithm=algorithm, config={}, seed=0, steps=steps)


@dataclass(frozen=True)
class PendingQuery:
    b: int
    point_id: str
    index: int
    phi: float
    score: float


def _min_id_choice(ts: TestSet, indices: np.ndarray, scores: np.ndarray) -> int:
    """Index of the highest score, ties broken by smallest point id."""
    best = scores.max()
    tied = indices[scores == best]
    if tied.shape[0] == 1:
        return int(tied[0])
    return min((ts.ids[i], int(i)) for i in tied)[1]


def _uu_eligible_mask(ts: TestSet, indices: np.ndarray) -> np.ndarray:
    """1.0 where a point could enter S if misclassified, else 0.0.

    With a critical class set, points predicted as another class can never
    become discoveries, so their effective discovery probability is zero.
    """
    if ts.critical_class is None:
        return np.ones(len(indices))
    predicted = ts.predicted_classes
    return np.array(
        [1.0 if predicted[i] == ts.critical_class else 0.0 for i in indices]
    )


class _Strategy:
    name = "abstract"

    def select(self, ts: TestSet, state: SearchState) -> tuple[int, float, float] | None:
        """Return (dataset index, phi at selection, selection score) or None
        when no eligible candidate remains."""
        raise NotImplementedError

    def on_answer(self, ts: TestSet, state: SearchState, index: int, is_uu: bool) -> None:
        pass

    def phi_snapshot(self) -> PhiModel:
        return PhiModel(kind="prior")


def _make_estimator(cfg: SearchConfig, default: str) -> PhiEstimator:
    kind = cfg.estimator or default
    if kind == "prior":
        return PriorEstimator()
    if kind == "logistic":
        return LogisticEstimator(include_intercept=cfg.include_intercept)
    if kind == "cluster":
        return ClusterRatesEstimator(k=cfg.clusters, seed=cfg.seed)
    raise ConfigError(f"unknown estimator {kind!r}")


def _unqueried_indices(ts: TestSet, state: SearchState) -> np.ndarray:
    mask = np.ones(ts.n, dtype=bool)
    for pid in state.labels:
        mask[ts.index_of(pid)] = False
    return np.nonzero(mask)[0]


class _GreedyFlStrategy(_Strategy):
    name = "fl"

    def __init__(self, ts: TestSet, cfg: SearchConfig):
        self.cfg = cfg
        self.estimator = _make_estimator(cfg, "logistic")

    def select(self, ts, state):
        cands = _unqueried_indices(ts, state)
        if self.cfg.restrict_candidates:
            cands = cands[ts.confidences[cands] >= self.cfg.tau]
        if cands.size == 0:
            return None
        phis = self.estimator.phis(ts, state, cands) * _uu_eligible_mask(ts, cands)
        gains = fl_gain_batch(ts, state, cands, phis)
        idx = _min_id_choice(ts, cands, gains)
        pos = int(np.nonzero(cands == idx)[0][0])
        return idx, float(phis[pos]), float(gains[pos])

    def on_answer(self, ts, state, index, is_uu):
        self.estimator.refresh(ts, state)

    def phi_snapshot(self):
        return self.estimator.snapshot()


class _MostUncertainStrategy(_Strategy):
    name = "mu"

    def __init__(self, ts: TestSet, cfg: SearchConfig):
        self.cfg = cfg
        eligible = sorted(
            (i for i in range(ts.n) if ts.confidences[i] >= cfg.tau),
            key=lambda i: (ts.confidences[i], ts.ids[i]),
        )
        below = sorted(
            (i for i in range(ts.n) if ts.confidences[i] < cfg.tau),
            key=lambda i: (ts.confidences[i], ts.ids[i]),
        )
        self.order = eligible + below if cfg.allow_below_tau else eligible
        self._cursor = 0

    def select(self, ts, state):
        while self._cursor < len(self.order):
            i = self.order[self._cursor]
            if ts.ids[i] not in state.labels:
                return i, 1.0 - float(ts.confidences[i]), -float(ts.confidences[i])
            self._cursor += 1
        return None

    def on_answer(self, ts, state, index, is_uu):
        self._cursor += 1


class _CoverageGreedyStrategy(_Strategy):
    name = "cov"

    def __init__(self, ts: TestSet, cfg: SearchConfig):
        self.cfg = cfg
        self.estimator = _make_estimator(cfg, "cluster")

    def select(self, ts, state):
        cands = _unqueried_indices(ts, state)
        cands = cands[ts.confidences[cands] >= self.cfg.tau]
        if cands.size == 0:
            return None
        phis = self.estimator.phis(ts, state, cands) * _uu_eligible_mask(ts, cands)
        scores = expected_coverage_batch(ts, state, cands, phis)
        idx = _min_id_choice(ts, cands, scores)
        pos = int(np.nonzero(cands == idx)[0][0])
        return idx, float(phis[pos]), float(scores[pos])

    def on_answer(self, ts, state, index, is_uu):
        self.estimator.refresh(ts, state)

    def phi_snapshot(self):
        return self.estimator.snapshot()


class _BanditStrategy(_Strategy):
    """UCB1 over clusters; reward = discovery indicator per pull."""

    name = "bandit"

    def __init__(self, ts: TestSet, cfg: SearchConfig):
        self.cfg = cfg
        k = min(cfg.clusters, ts.n)  # tiny test sets cannot host more clusters
        geometry = ClusterRatesEstimator(k=k, seed=cfg.seed)
        self.assign = geometry.assignments(ts)
        self.k = k
        self.rng = np.random.default_rng(cfg.seed)
        self.pulls = np.zeros(k, dtype=int)
        self.uu_pulls = np.zeros(k, dtype=int)
        # per-cluster eligible candidates kept sorted by id for reproducibility
        self.eligible: list[list[int]] = [[] for _ in range(k)]
        for i in range(ts.n):
            if ts.confidences[i] >= cfg.tau:
                self.eligible[self.assign[i]].append(i)
        for c in range(k):
            self.eligible[c].sort(key=lambda i: ts.ids[i])

    def _active_clusters(self) -> list[int]:
        return [c for c in range(self.k) if self.eligible[c]]

    def select(self, ts, state):
        active = self._active_clusters()
        if not active:
            return None
        unpulled = [c for c in active if self.pulls[c] == 0]
        if unpulled:
            cluster = unpulled[0]  # burn-in: one pull per cluster, index order
            score = float(self._mean(cluster))
        else:
            total = int(self.pulls.sum())
            best_score, cluster = -math.inf, active[0]
            for c in active:
                ucb = self._mean(c) + self.cfg.exploration * math.sqrt(
                    2.0 * math.log(total) / self.pulls[c]
                )
                if ucb > best_score:
                    best_score, cluster = ucb, c
            score = float(best_score)
        pool = self.eligible[cluster]
        pick = pool[int(self.rng.integers(len(pool)))]
        return pick, float(self._mean(cluster)), score

    def _mean(self, cluster: int) -> float:
        if self.pulls[cluster] == 0:
            return 0.0
        return self.uu_pulls[cluster] / self.pulls[cluster]

    def on_answer(self, ts, state, index, is_uu):
        cluster = int(self.assign[index])
        self.pulls[cluster] += 1
        if is_uu:
            self.uu_pulls[cluster] += 1
        self.eligible[cluster].remove(index)


_STRATEGY_CLASSES = {
    "fl": _GreedyFlStrategy,
    "mu": _MostUncertainStrategy,
    "cov": _CoverageGreedyStrategy,
    "bandit": _BanditStrategy,
}


class InteractiveSearch:
    """Incremental run of one strategy: propose a query, receive an answer.

    Batch searches and the labeling service both drive this engine, so an
    interactive session is step-for-step identical to the offline run fed
    the same answers.
    """

    def __init__(self, ts: TestSet, cfg: SearchConfig, strategy: str):
        if strategy not in _STRATEGY_CLASSES:
            raise ConfigError(
                f"unknown strategy {strategy!r}; expected one of {STRATEGIES}"
            )
        cfg.validate(ts)
        self.ts = ts
        self.cfg = cfg
        self.strategy_name = strategy
        self.strategy: _Strategy = _STRATEGY_CLASSES[strategy](ts, cfg)
        self.state = SearchState(ts)
        self.trace = QueryTrace(
            algorithm=strategy, config=cfg.to_dict(), seed=cfg.seed
        )
        self._pending: PendingQuery | None = None
        self._finished = False

    @property
    def finished(self) -> bool:
        return self._finished

    def propose(self) -> PendingQuery | None:
        """Next query under the strategy; idempotent until answered."""
        if self._finished:
            return None
        if self._pending is not None:
            return self._pending
        if len(self.trace.steps) >= self.cfg.budget:
            self._finished = True
            return None
        choice = self.strategy.select(self.ts, self.state)
        if choice is None:
            self._finished = True
            self.trace.early_stopped = True
            self.trace.stop_reason = "no eligible candidates remain"
            return None
        index, phi, score = choice
        self._pending = PendingQuery(
            b=len(self.trace.steps) + 1,
            point_id=self.ts.ids[index],
            index=index,
            phi=phi,
            score=score,
        )
        return self._pending

    def answer(self, label: str) -> QueryStep:
        """Record the oracle's answer for the pending query."""
        if self._pending is None:
            raise ValidationError("no pending query to answer")
        pending = self._pending
        dist_row = distances_to(self.ts.features, self.ts.features[pending.index])
        is_uu = self.state.record_answer(
            self.ts, pending.point_id, label, dist_row=dist_row
        )
        self.strategy.on_answer(self.ts, self.state, pending.index, is_uu)
        step = QueryStep(
            b=pending.b,
            point_id=pending.point_id,
            confidence=float(self.ts.confidences[pending.index]),
            phi=pending.phi,
            label=label,
            is_uu=is_uu,
            utility=facility_utility(self.ts, self.state).total,
            gain=pending.score,
        )
        self.trace.steps.append(step)
        self._pending = None
        if len(self.trace.steps) >= self.cfg.budget:
            self._finished = True
        return step

    def phi_snapshot(self) -> PhiModel:
        return self.strategy.phi_snapshot()

    def run(self, oracle: Oracle) -> QueryTrace:
        """Drive the full loop against an oracle and return the trace."""
        while True:
            pending = self.propose()
            if pending is None:
                break
            try:
                label = oracle.query(pending.point_id)
            except OracleError as exc:
                self.trace.aborted = True
                self.trace.stop_reason = str(exc)
                self._finished = True
                break
            self.answer(label)
        return self.trace


def _run(ts: TestSet, oracle: Oracle, cfg: SearchConfig, strategy: str) -> QueryTrace:
    return InteractiveSearch(ts, cfg, strategy).run(oracle)


def greedy_fl_search(ts: TestSet, oracle: Oracle, cfg: SearchConfig) -> QueryTrace:
    """Greedy facility-location search (expected-gain argmax each step)."""
    return _run(ts, oracle, cfg, "fl")


def most_uncertain_search(ts: TestSet, oracle: Oracle, cfg: SearchConfig) -> QueryTrace:
    """Ascending-confidence baseline over candidates at or above tau."""
    return _run(ts, oracle, cfg, "mu")


def coverage_greedy_search(ts: TestSet, oracle: Oracle, cfg: SearchConfig) -> QueryTrace:
    """Expected-coverage-gain greedy baseline with cluster-rate phi."""
    return _run(ts, oracle, cfg, "cov")


def bandit_search(ts: TestSet, oracle: Oracle, cfg: SearchConfig) -> QueryTrace:
    """UCB1-over-clusters baseline."""
    return _run(ts, oracle, cfg, "bandit")


def run_strategy(
    ts: TestSet, oracle: Oracle, cfg: SearchConfig, strategy: str
) -> QueryTrace:
    """Dispatch by strategy name (fl, mu, cov, bandit)."""
    return _run(ts, oracle, cfg, strategy)
