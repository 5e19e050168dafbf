import math

import numpy as np
import pytest

from uuaudit.dataset import TestSet
from uuaudit.errors import ConfigError, OracleError
from uuaudit.phi import fit_cluster_rates, fit_logistic, predict_phi
from uuaudit.errors import FitUnavailableError
from uuaudit.search import (
    InteractiveSearch,
    Oracle,
    ScriptedOracle,
    SearchConfig,
    bandit_search,
    coverage_greedy_search,
    greedy_fl_search,
    make_simulated_oracle,
    most_uncertain_search,
    read_trace,
    run_strategy,
    write_trace,
)
from uuaudit.utility import SearchState, facility_utility

from conftest import brute_force_fl_expectation, make_point, random_testset


def agreeing_oracle(ts):
    """Oracle that always confirms the classifier's prediction."""
    return ScriptedOracle({pt.id: pt.predicted_class for pt in ts.points})


class TestSimulatedOracle:
    def test_answers_true_labels(self, rng):
        ts = random_testset(rng, n=20)
        oracle = make_simulated_oracle(ts)
        for pt in list(ts.points)[:10]:
            assert oracle.query(pt.id) == pt.true_label

    def test_each_id_once(self, rng):
        ts = random_testset(rng, n=5)
        oracle = make_simulated_oracle(ts)
        oracle.query(ts.ids[0])
        with pytest.raises(OracleError):
            oracle.query(ts.ids[0])

    def test_missing_label_fails_loudly(self):
        pts = [
            make_point("a", [0.0], 0.5, "x", "x"),
            make_point("b", [1.0], 0.5, "x", None),
        ]
        ts = TestSet(pts)
        with pytest.raises(OracleError, match="'b'"):
            make_simulated_oracle(ts)


class TestGreedyFlSearch:
    def test_prior_prefers_larger_expected_reward(self):
        # both candidates coincide with all mass: the distance term vanishes
        # and the prior-weighted reward decides: 0.4*ln(2.5) > 0.1*ln(10)
        pts = [
            make_point("hi", [0.0], 0.9, "x", "y"),
            make_point("lo", [0.0], 0.6, "x", "y"),
        ]
        ts = TestSet(pts)
        cfg = SearchConfig(budget=1)
        trace = greedy_fl_search(ts, make_simulated_oracle(ts), cfg)
        assert trace.steps[0].point_id == "lo"
        assert 0.4 * math.log(2.5) > 0.1 * math.log(10)

    def test_no_discoveries_keeps_utility_flat(self, rng):
        ts = random_testset(rng, n=12)
        cfg = SearchConfig(budget=6)
        trace = greedy_fl_search(ts, agreeing_oracle(ts), cfg)
        state = SearchState(ts)
        for step in trace.steps:
            assert not step.is_uu
            assert step.utility == -state.d_cap

    def test_trace_matches_brute_force_twin(self, rng):
        for seed in range(5):
            local = np.random.default_rng(seed)
            ts = random_testset(local, n=12, duplicate_pairs=1)
            cfg = SearchConfig(budget=4)
            trace = greedy_fl_search(ts, make_simulated_oracle(ts), cfg)
            twin = self._twin_run(ts, 4)
            assert [s.point_id for s in trace.steps] == [t[0] for t in twin]
            assert [s.is_uu for s in trace.steps] == [t[1] for t in twin]

    @staticmethod
    def _twin_run(ts, budget):
        """Independent greedy loop: evaluates both expectation branches with
        pure-python recomputation for every candidate at every step."""
        state = SearchState(ts)
        answers = {pt.id: pt.true_label for pt in ts.points}
        model = None
        out = []
        for _ in range(budget):
            cands = [pid for pid in ts.ids if pid not in state.labels]
            if not cands:
                break
            best_id, best_val = None, -math.inf
            for pid in sorted(cands):
                pt = ts.point(pid)
                phi = 1.0 - pt.confidence if model is None else predict_phi(model, pt)
                if ts.critical_class is not None and pt.predicted_class != ts.critical_class:
                    phi = 0.0
                val = brute_force_fl_expectation(ts, state, pid, phi)
                if val > best_val:
                    best_id, best_val = pid, val
            is_uu = state.record_answer(ts, best_id, answers[best_id])
            out.append((best_id, is_uu))
            try:
                model = fit_logistic(ts, state)
            except FitUnavailableError:
                model = None
        return out

    def test_critical_class_focuses_search(self, rng):
        ts = random_testset(rng, n=20, critical="a")
        n_a = sum(1 for pt in ts.points if pt.predicted_class == "a")
        assert n_a >= 3
        cfg = SearchConfig(budget=min(3, n_a))
        trace = greedy_fl_search(ts, make_simulated_oracle(ts), cfg)
        for step in trace.steps:
            assert ts.point(step.point_id).predicted_class == "a"

    def test_restrict_candidates_flag(self, rng):
        ts = random_testset(rng, n=20)
        cfg = SearchConfig(budget=5, tau=0.5, restrict_candidates=True)
        trace = greedy_fl_search(ts, make_simulated_oracle(ts), cfg)
        for step in trace.steps:
            assert step.confidence >= 0.5


class TestMostUncertain:
    def make_ts(self, confs_ids):
        return TestSet(
            [make_point(pid, [float(i)], c, "x", "x")
             for i, (c, pid) in enumerate(confs_ids)]
        )

    def test_ascending_order_from_tau(self):
        ts = self.make_ts([(0.9, "a"), (0.66, "b"), (0.7, "c")])
        cfg = SearchConfig(budget=3)
        trace = most_uncertain_search(ts, agreeing_oracle(ts), cfg)
        assert [s.point_id for s in trace.steps] == ["b", "c", "a"]

    def test_all_below_tau_stops_early(self):
        ts = self.make_ts([(0.5, "a"), (0.6, "b")])
        cfg = SearchConfig(budget=2)
        trace = most_uncertain_search(ts, agreeing_oracle(ts), cfg)
        assert trace.steps == []
        assert trace.early_stopped

    def test_below_tau_flag_continues(self):
        ts = self.make_ts([(0.5, "a"), (0.7, "b")])
        cfg = SearchConfig(budget=2, allow_below_tau=True)
        trace = most_uncertain_search(ts, agreeing_oracle(ts), cfg)
        assert [s.point_id for s in trace.steps] == ["b", "a"]
        assert not trace.early_stopped

    def test_tie_breaks_to_lower_id(self):
        ts = self.make_ts([(0.7, "z2"), (0.7, "z1"), (0.8, "z3")])
        cfg = SearchConfig(budget=2)
        trace = most_uncertain_search(ts, agreeing_oracle(ts), cfg)
        assert [s.point_id for s in trace.steps] == ["z1", "z2"]


class TestCoverageGreedy:
    def test_first_pick_maximizes_weighted_similarity(self, rng):
        feats = rng.standard_normal((10, 2)) * 2.0
        pts = [make_point(f"c{i}", feats[i], 0.8, "x", "x") for i in range(10)]
        ts = TestSet(pts)
        cfg = SearchConfig(budget=1, clusters=3)
        trace = coverage_greedy_search(ts, agreeing_oracle(ts), cfg)
        # exhaustive scoring oracle: phi is uniform (no queries yet), S empty
        best_id, best_val = None, -math.inf
        for pid in sorted(ts.ids):
            q = ts.features[ts.index_of(pid)]
            val = sum(
                ts.confidences[x] * math.exp(-math.dist(ts.features[x].tolist(), q.tolist()))
                for x in range(ts.n)
            )
            if val > best_val:
                best_id, best_val = pid, val
        assert trace.steps[0].point_id == best_id

    def test_single_eligible_candidate(self):
        pts = [
            make_point("low1", [0.0], 0.3, "x", "x"),
            make_point("low2", [1.0], 0.4, "x", "x"),
            make_point("only", [2.0], 0.8, "x", "x"),
        ]
        ts = TestSet(pts)
        cfg = SearchConfig(budget=1, clusters=2)
        trace = coverage_greedy_search(ts, agreeing_oracle(ts), cfg)
        assert trace.steps[0].point_id == "only"

    def test_trace_matches_brute_force_twin(self, rng):
        for seed in range(4):
            local = np.random.default_rng(100 + seed)
            ts = random_testset(local, n=12)
            cfg = SearchConfig(budget=4, tau=0.3, clusters=3, seed=11)
            trace = coverage_greedy_search(ts, make_simulated_oracle(ts), cfg)
            twin = self._twin_run(ts, budget=4, tau=0.3, k=3, seed=11)
            assert [s.point_id for s in trace.steps] == twin

    @staticmethod
    def _twin_run(ts, budget, tau, k, seed):
        state = SearchState(ts)
        answers = {pt.id: pt.true_label for pt in ts.points}
        out = []
        for _ in range(budget):
            cands = [
                pid for pid in ts.ids
                if pid not in state.labels and ts.point(pid).confidence >= tau
            ]
            if not cands:
                break
            model = fit_cluster_rates(ts, state, k=k, seed=seed)
            best_id, best_val = None, -math.inf
            for pid in sorted(cands):
                pt = ts.point(pid)
                phi = predict_phi(model, pt)
                if ts.critical_class is not None and pt.predicted_class != ts.critical_class:
                    phi = 0.0
                # naive two-branch expected coverage utility
                u_with, u_without = 0.0, 0.0
                for x in range(ts.n):
                    sims = [
                        math.exp(-math.dist(
                            ts.features[x].tolist(),
                            ts.features[ts.index_of(q)].tolist(),
                        ))
                        for q in state.uus
                    ]
                    base = max(sims) if sims else 0.0
                    cand_sim = math.exp(-math.dist(
                        ts.features[x].tolist(), pt.features.tolist()
                    ))
                    u_without += ts.confidences[x] * base
                    u_with += ts.confidences[x] * max(base, cand_sim)
                val = phi * u_with + (1 - phi) * u_without
                if val > best_val:
                    best_id, best_val = pid, val
            state.record_answer(ts, best_id, answers[best_id])
            out.append(best_id)
        return out

    def test_early_stop_when_candidates_run_out(self, rng):
        pts = [make_point(f"p{i}", [float(i)], 0.95 if i < 2 else 0.3, "x", "x")
               for i in range(8)]
        ts = TestSet(pts)
        cfg = SearchConfig(budget=5, tau=0.9, clusters=2)
        trace = coverage_greedy_search(ts, agreeing_oracle(ts), cfg)
        assert len(trace.steps) == 2
        assert trace.early_stopped


class TestBandit:
    def test_k1_is_uniform_sampling(self):
        pts = [make_point(f"u{i}", [float(i)], 0.8, "x", "x") for i in range(10)]
        ts = TestSet(pts)
        counts = {pid: 0 for pid in ts.ids}
        runs = 500
        for seed in range(runs):
            cfg = SearchConfig(budget=1, clusters=1, seed=seed)
            trace = bandit_search(ts, agreeing_oracle(ts), cfg)
            counts[trace.steps[0].point_id] += 1
        expected = runs / 10
        sigma = math.sqrt(runs * 0.1 * 0.9)
        for pid, count in counts.items():
            assert abs(count - expected) <= 3 * sigma, (pid, count)

    def test_rewarding_cluster_dominates(self, rng):
        pts = []
        centers = {"A": (0.0, 0.0), "B": (60.0, 0.0), "C": (0.0, 60.0)}
        for name, (cx, cy) in centers.items():
            for i in range(100):
                feats = [cx + rng.normal(), cy + rng.normal()]
                true = "y" if name == "A" else "x"  # only A misclassifies
                pts.append(make_point(f"{name}{i:03d}", feats, 0.8, "x", true))
        ts = TestSet(pts)
        cfg = SearchConfig(budget=200, clusters=3, seed=3)
        trace = bandit_search(ts, make_simulated_oracle(ts), cfg)
        shares = {"A": 0, "B": 0, "C": 0}
        for step in trace.steps:
            shares[step.point_id[0]] += 1
        assert shares["A"] > shares["B"]
        assert shares["A"] > shares["C"]

    def test_burn_in_one_pull_per_cluster(self, rng):
        ts = random_testset(rng, n=40)
        k = 4
        cfg = SearchConfig(budget=k, clusters=k, seed=6)
        trace = bandit_search(ts, make_simulated_oracle(ts), cfg)
        model = fit_cluster_rates(ts, SearchState(ts), k=k, seed=6)
        clusters = [model.cluster_assignments[s.point_id] for s in trace.steps]
        assert sorted(clusters) == list(range(k))

    def test_exhausting_all_clusters_stops_early(self):
        pts = [make_point(f"p{i}", [float(i)], 0.7 if i < 3 else 0.2, "x", "x")
               for i in range(10)]
        ts = TestSet(pts)
        cfg = SearchConfig(budget=8, clusters=2, seed=0)
        trace = bandit_search(ts, agreeing_oracle(ts), cfg)
        assert len(trace.steps) == 3
        assert trace.early_stopped


class TestTraceContracts:
    @pytest.mark.parametrize("strategy", ["fl", "mu", "cov", "bandit"])
    def test_determinism_bit_identical(self, strategy):
        local = np.random.default_rng(77)
        ts = random_testset(local, n=25)
        cfg = SearchConfig(budget=8, tau=0.3, clusters=4, seed=123)
        a = run_strategy(ts, make_simulated_oracle(ts), cfg, strategy)
        b = run_strategy(ts, make_simulated_oracle(ts), cfg, strategy)
        assert a.to_jsonl() == b.to_jsonl()

    @pytest.mark.parametrize("strategy", ["fl", "mu", "cov", "bandit"])
    def test_no_reuse_and_budget(self, rng, strategy):
        ts = random_testset(rng, n=20)
        cfg = SearchConfig(budget=10, tau=0.2, clusters=3, seed=5)
        trace = run_strategy(ts, make_simulated_oracle(ts), cfg, strategy)
        ids = [s.point_id for s in trace.steps]
        assert len(ids) == len(set(ids))
        assert trace.uu_count() <= len(ids) <= 10

    def test_w_flat_or_rising(self, rng):
        for _ in range(20):
            ts = random_testset(rng, n=15)
            cfg = SearchConfig(budget=8)
            trace = greedy_fl_search(ts, make_simulated_oracle(ts), cfg)
            state = SearchState(ts)
            prev = -state.d_cap
            for step in trace.steps:
                if step.is_uu:
                    assert step.utility >= prev - 1e-12
                else:
                    assert step.utility == prev
                prev = step.utility

    def test_recorded_w_matches_replay_exactly(self, rng):
        ts = random_testset(rng, n=18)
        cfg = SearchConfig(budget=9)
        trace = greedy_fl_search(ts, make_simulated_oracle(ts), cfg)
        state = SearchState(ts)
        for step in trace.steps:
            from uuaudit.dataset import distances_to

            row = distances_to(ts.features, ts.features[ts.index_of(step.point_id)])
            state.record_answer(ts, step.point_id, step.label, dist_row=row)
            assert facility_utility(ts, state).total == step.utility

    @pytest.mark.parametrize("strategy", ["fl", "mu", "cov", "bandit"])
    def test_true_labels_only_reachable_through_oracle(self, strategy):
        local = np.random.default_rng(4242)
        ts = random_testset(local, n=25)
        oracle_before = make_simulated_oracle(ts)  # snapshots the labels
        perm = local.permutation(ts.n)
        poisoned = TestSet(
            [
                make_point(
                    pt.id, pt.features, pt.confidence, pt.predicted_class,
                    ts.points[perm[i]].true_label,
                )
                for i, pt in enumerate(ts.points)
            ],
            critical_class=ts.critical_class,
        )
        cfg = SearchConfig(budget=10, tau=0.3, clusters=4, seed=9)
        baseline = run_strategy(ts, make_simulated_oracle(ts), cfg, strategy)
        shadow = run_strategy(poisoned, oracle_before, cfg, strategy)
        assert baseline.to_jsonl() == shadow.to_jsonl()

    def test_budget_exceeds_candidates_is_config_error(self, rng):
        ts = random_testset(rng, n=5)
        oracle = make_simulated_oracle(ts)
        with pytest.raises(ConfigError):
            greedy_fl_search(ts, oracle, SearchConfig(budget=6))
        assert oracle.answered == set()

    def test_oracle_failure_aborts_with_partial_trace(self, rng):
        ts = random_testset(rng, n=12)

        class FlakyOracle(Oracle):
            def __init__(self, inner, fail_after):
                self.inner = inner
                self.fail_after = fail_after
                self.count = 0

            def query(self, point_id):
                if self.count >= self.fail_after:
                    raise OracleError("oracle went offline")
                self.count += 1
                return self.inner.query(point_id)

        oracle = FlakyOracle(make_simulated_oracle(ts), fail_after=3)
        trace = greedy_fl_search(ts, oracle, SearchConfig(budget=8))
        assert len(trace.steps) == 3
        assert trace.aborted
        assert "offline" in trace.stop_reason

    def test_trace_round_trip(self, rng, tmp_path):
        ts = random_testset(rng, n=10)
        trace = greedy_fl_search(ts, make_simulated_oracle(ts), SearchConfig(budget=5))
        path = tmp_path / "t.jsonl"
        write_trace(trace, path)
        back = read_trace(path)
        assert [s.to_obj() for s in back.steps] == [s.to_obj() for s in trace.steps]


class TestInteractiveEngine:
    def test_propose_is_idempotent(self, rng):
        ts = random_testset(rng, n=10)
        engine = InteractiveSearch(ts, SearchConfig(budget=3), "fl")
        first = engine.propose()
        second = engine.propose()
        assert first == second

    def test_engine_equals_batch_run(self, rng):
        ts = random_testset(rng, n=16)
        cfg = SearchConfig(budget=6, seed=2)
        batch = greedy_fl_search(ts, make_simulated_oracle(ts), cfg)
        engine = InteractiveSearch(ts, SearchConfig(budget=6, seed=2), "fl")
        oracle = make_simulated_oracle(ts)
        while True:
            pending = engine.propose()
            if pending is None:
                break
            engine.answer(oracle.query(pending.point_id))
        assert engine.trace.to_jsonl() == batch.to_jsonl()

    def test_step_counter_tracks_queries(self, rng):
        ts = random_testset(rng, n=8)
        engine = InteractiveSearch(ts, SearchConfig(budget=3), "fl")
        oracle = make_simulated_oracle(ts)
        for expected_b in (1, 2, 3):
            pending = engine.propose()
            assert pending.b == expected_b
            assert pending.b == len(engine.state.queried) + 1
            engine.answer(oracle.query(pending.point_id))
        assert engine.finished
