"""Post-hoc metrics over query traces and the Monte Carlo comparison harness.

The central efficiency metric is the standardized discovery ratio

    SDR = |S| / sum_{queried x} (1 - c_x)

the number of discovered misclassifications divided by the number expected
from the queried points' own confidences. Under a perfectly calibrated
classifier SDR concentrates around 1 regardless of the query strategy;
values above 1 evidence overconfidence in the queried region.

Monte Carlo runs draw repeated subsamples, run every strategy on the same
sample with the same simulated oracle answers (paired comparison), and
summarize per-step medians with 5%/95% empirical quantile bands using
linear interpolation between order statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import TestSet, max_pairwise_distance, sample_testset
from .errors import (
    InsufficientDataError,
    SdrUndefinedError,
    UUAuditError,
    ValidationError,
)
from .search import QueryTrace, SearchConfig, make_simulated_oracle, run_strategy
from .utility import SearchState, coverage_utility, facility_utility

PROFILE_GRID_SIZE = 101


def sdr(trace: QueryTrace) -> float:
    """Standardized discovery ratio of a completed (or partial) trace."""
    if not trace.steps:
        raise ValidationError("cannot compute SDR of an empty trace")
    denom = sum(1.0 - s.confidence for s in trace.steps)
    if denom <= 0.0:
        raise SdrUndefinedError("all queried confidences are exactly 1")
    return trace.uu_count() / denom


def sdr_series(trace: QueryTrace) -> np.ndarray:
    """Prefix SDR after each step; NaN where the denominator is still zero."""
    if not trace.steps:
        return np.empty(0)
    expected = np.cumsum([1.0 - s.confidence for s in trace.steps])
    found = np.cumsum([1.0 if s.is_uu else 0.0 for s in trace.steps])
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(expected > 0, found / expected, np.nan)
    return out


def replay_utility_series(
    ts: TestSet, trace: QueryTrace
) -> tuple[np.ndarray, np.ndarray]:
    """Recompute (facility gain, coverage utility) after each trace prefix.

    Facility values are reported relative to the empty-query baseline
    (W + d_cap), so curves start at 0 and are comparable across samples with
    different diameters.
    """
    state = SearchState(ts)
    fac = np.empty(len(trace.steps))
    cov = np.empty(len(trace.steps))
    for i, step in enumerate(trace.steps):
        state.record_answer(ts, step.point_id, step.label)
        fac[i] = facility_utility(ts, state).total + state.d_cap
        cov[i] = coverage_utility(ts, state)
    return fac, cov


def utility_trajectory(
    ts: TestSet, trace: QueryTrace, which: str = "facility"
) -> np.ndarray:
    """Per-step utility series recomputed from the trace."""
    fac, cov = replay_utility_series(ts, trace)
    if which == "facility":
        return fac
    if which == "coverage":
        return cov
    raise ValidationError(f"unknown utility kind {which!r}")


@dataclass(frozen=True)
class OverconfidenceProfile:
    """Smoothed accuracy-vs-confidence curve and its gap to the diagonal."""

    grid: np.ndarray
    estimated_accuracy: np.ndarray
    overconfidence: np.ndarray  # grid - estimated_accuracy
    support: np.ndarray
    smoother: str

    def to_json_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "estimated_accuracy": self.estimated_accuracy.tolist(),
            "overconfidence": self.overconfidence.tolist(),
            "support": self.support.tolist(),
            "smoother": self.smoother,
        }


def _spline_knots(
    conf: np.ndarray, correct: np.ndarray, knots: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equal-count aggregation of the indicator: (x, mean y, weight) with
    strictly increasing x."""
    order = np.argsort(conf, kind="stable")
    chunks = np.array_split(order, min(knots, len(order)))
    x = np.array([conf[ch].mean() for ch in chunks])
    y = np.array([correct[ch].mean() for ch in chunks])
    w = np.array([len(ch) for ch in chunks], dtype=float)
    xu, inverse, _ = np.unique(x, return_inverse=True, return_counts=True)
    if len(xu) < len(x):
        wagg = np.zeros(len(xu))
        yagg = np.zeros(len(xu))
        np.add.at(wagg, inverse, w)
        np.add.at(yagg, inverse, w * y)
        return xu, yagg / wagg, wagg
    return x, y, w


def _binned_accuracy(conf: np.ndarray, correct: np.ndarray, grid: np.ndarray,
                     bins: int) -> np.ndarray:
    order = np.argsort(conf, kind="stable")
    chunks = np.array_split(order, min(bins, len(order)))
    uppers = np.array([conf[ch].max() for ch in chunks])
    means = np.array([correct[ch].mean() for ch in chunks])
    which = np.searchsorted(uppers, grid, side="left")
    which = np.minimum(which, len(chunks) - 1)
    return means[which]


def overconfidence_profile(
    ts: TestSet,
    lam: float | None = None,
    smoother: str = "spline",
    bins: int = 20,
) -> OverconfidenceProfile:
    """Estimate actual accuracy as a smooth function of stated confidence.

    Default smoother is a cubic smoothing spline on the 0/1
    correct-classification indicator with the penalty chosen by generalized
    cross-validation (``lam`` overrides it); ``smoother="binned"`` uses
    equal-count bin means instead. Requires every point to carry a true
    label and at least 10 points.
    """
    missing = [pt.id for pt in ts.points if pt.true_label is None]
    if missing:
        raise ValidationError(
            f"{len(missing)} points lack true_label (first: {missing[0]!r})"
        )
    if ts.n < 10:
        raise InsufficientDataError(f"need at least 10 labeled points, got {ts.n}")
    conf = ts.confidences
    correct = np.array(
        [1.0 if pt.true_label == pt.predicted_class else 0.0 for pt in ts.points]
    )
    grid = np.linspace(conf.min(), conf.max(), PROFILE_GRID_SIZE)
    used = smoother
    if correct.min() == correct.max():
        # constant indicator: every smoother must reproduce it exactly
        acc = np.full(PROFILE_GRID_SIZE, correct[0])
    elif smoother == "spline":
        # raw 0/1 responses destabilize the generalized-cross-validation
        # penalty choice, so the spline is fit to weighted equal-count bin
        # means (ties in confidence are merged, keeping abscissas strictly
        # increasing)
        xk, yk, wk = _spline_knots(conf, correct, knots=80)
        if len(xk) >= 5:
            from scipy.interpolate import make_smoothing_spline

            spline = make_smoothing_spline(xk, yk, w=wk, lam=lam)
            acc = np.asarray(spline(grid), dtype=float)
        else:
            used = "binned"
            acc = _binned_accuracy(conf, correct, grid, bins)
    elif smoother == "binned":
        acc = _binned_accuracy(conf, correct, grid, bins)
    else:
        raise ValidationError(f"unknown smoother {smoother!r}")
    acc = np.clip(acc, 0.0, 1.0)
    edges = np.concatenate(([-np.inf], (grid[1:] + grid[:-1]) / 2.0, [np.inf]))
    support, _ = np.histogram(conf, bins=edges)
    return OverconfidenceProfile(
        grid=grid,
        estimated_accuracy=acc,
        overconfidence=grid - acc,
        support=support,
        smoother=used,
    )


@dataclass
class McSummary:
    """Per-step quantile bands of one metric for one strategy."""

    strategy: str
    metric: str
    reps: int
    median: list[float]
    q05: list[float]
    q95: list[float]
    attrition: int = 0  # runs that stopped early, aborted, or errored

    def to_rows(self) -> list[list]:
        return [
            [b + 1, self.strategy, self.metric,
             self.median[b], self.q05[b], self.q95[b], self.reps]
            for b in range(len(self.median))
        ]

    def to_json_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "metric": self.metric,
            "reps": self.reps,
            "attrition": self.attrition,
            "median": self.median,
            "q05": self.q05,
            "q95": self.q95,
        }


MC_METRICS = ("facility_gain", "coverage_utility", "sdr")


def _pad_forward(values: np.ndarray, length: int, fill: float) -> np.ndarray:
    out = np.full(length, fill)
    if values.size:
        out[: len(values)] = values[:length]
        if len(values) < length:
            out[len(values):] = values[-1]
    return out


def _quantiles(col: np.ndarray, q: float) -> float:
    finite = col[~np.isnan(col)]
    if finite.size == 0:
        return float("nan")
    return float(np.quantile(finite, q, method="linear"))


def monte_carlo(
    ts_full: TestSet,
    strategies: list[str],
    n: int,
    budget: int,
    reps: int,
    seed: int = 0,
    base_cfg: SearchConfig | None = None,
) -> list[McSummary]:
    """Paired Monte Carlo comparison of strategies over repeated subsamples.

    Replication r draws ``sample_testset(ts_full, n, seed + r)`` and runs
    every strategy on that same sample with a fresh simulated oracle (the
    oracle answers hidden true labels, so all strategies see identical
    answers per point id). Per-run failures count as attrition instead of
    aborting the experiment; early-stopped traces carry their last value
    forward so bands stay comparable.
    """
    if reps < 1:
        raise ValidationError(f"reps must be >= 1, got {reps}")
    if not strategies:
        raise ValidationError("need at least one strategy")
    template = base_cfg if base_cfg is not None else SearchConfig(budget=budget)
    series = {
        (s, m): np.full((reps, budget), np.nan) for s in strategies for m in MC_METRICS
    }
    attrition = {s: 0 for s in strategies}
    for r in range(reps):
        sample = sample_testset(ts_full, n, seed + r)
        d_cap = max_pairwise_distance(sample.features)
        for strat in strategies:
            cfg = replace(template, budget=budget, seed=seed + r)
            try:
                oracle = make_simulated_oracle(sample)
                trace = run_strategy(sample, oracle, cfg, strat)
            except UUAuditError:
                attrition[strat] += 1
                continue
            if trace.early_stopped or trace.aborted:
                attrition[strat] += 1
            fac = np.array([s.utility for s in trace.steps]) + d_cap
            _, cov = replay_utility_series(sample, trace)
            sdr_vals = sdr_series(trace)
            series[(strat, "facility_gain")][r] = _pad_forward(fac, budget, 0.0)
            series[(strat, "coverage_utility")][r] = _pad_forward(cov, budget, 0.0)
            series[(strat, "sdr")][r] = _pad_forward(sdr_vals, budget, np.nan)
    out = []
    for strat in strategies:
        for metric in MC_METRICS:
            mat = series[(strat, metric)]
            out.append(
                McSummary(
                    strategy=strat,
                    metric=metric,
                    reps=reps,
                    median=[_quantiles(mat[:, b], 0.5) for b in range(budget)],
                    q05=[_quantiles(mat[:, b], 0.05) for b in range(budget)],
                    q95=[_quantiles(mat[:, b], 0.95) for b in range(budget)],
                    attrition=attrition[strat],
                )
            )
    return out


def sdr_summary(traces: list[QueryTrace]) -> tuple[float, float, float]:
    """(median, q05, q95) of per-trace SDR under the linear quantile rule."""
    if not traces:
        raise ValidationError("need at least one trace")
    values = np.array([sdr(t) for t in traces])
    return (
        float(np.quantile(values, 0.5, method="linear")),
        float(np.quantile(values, 0.05, method="linear")),
        float(np.quantile(values, 0.95, method="linear")),
    )


def write_mc_csv(summaries: list[McSummary], path: str | Path) -> None:
    """Tidy CSV: step,strategy,metric,median,q05,q95,reps."""
    lines = ["step,strategy,metric,median,q05,q95,reps"]
    for s in summaries:
        for row in s.to_rows():
            lines.append(",".join(str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_mc_json(summaries: list[McSummary], path: str | Path) -> None:
    payload = [s.to_json_dict() for s in summaries]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def write_mc_gnuplot(summaries: list[McSummary], path: str | Path) -> None:
    """Gnuplot-friendly blocks: '# strategy metric' header then
    step/median/q05/q95 columns, blocks separated by two blank lines."""
    blocks = []
    for s in summaries:
        lines = [f"# strategy={s.strategy} metric={s.metric} reps={s.reps}"]
        for b in range(len(s.median)):
            lines.append(f"{b + 1} {s.median[b]} {s.q05[b]} {s.q95[b]}")
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n\n".join(blocks) + "\n", encoding="utf-8")


def read_trace_report(
    trace_path: str | Path, data_path: str | Path, critical_class: str | None = None
) -> dict:
    """Load a saved trace plus its dataset and compute the trace report."""
    from .dataset import load_testset
    from .search import read_trace

    ts = load_testset(data_path, critical_class=critical_class)
    trace = read_trace(trace_path)
    return trace_report(ts, trace)


def trace_report(ts: TestSet, trace: QueryTrace) -> dict:
    """Plot-ready JSON report for a single trace."""
    fac, cov = replay_utility_series(ts, trace)
    try:
        ratio = sdr(trace) if trace.steps else None
    except SdrUndefinedError:
        ratio = None
    uus = sorted(
        (
            {
                "id": s.point_id,
                "confidence": s.confidence,
                "predicted_class": ts.point(s.point_id).predicted_class,
                "label": s.label,
            }
            for s in trace.steps
            if s.is_uu
        ),
        key=lambda u: -u["confidence"],
    )
    return {
        "algorithm": trace.algorithm,
        "steps": [s.to_obj() for s in trace.steps],
        "sdr": ratio,
        "uu_count": trace.uu_count(),
        "uus": uus,
        "facility_gain": fac.tolist(),
        "coverage_utility": cov.tolist(),
        "early_stopped": trace.early_stopped,
        "aborted": trace.aborted,
    }
