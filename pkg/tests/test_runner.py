import dataclasses
import json

import numpy as np
import pytest

from cildrift.data_io import SyntheticSpec, write_report
from cildrift.evaluation import SessionMetrics
from cildrift.runner import (
    ExperimentConfig,
    MetricsRow,
    RunError,
    _average_rows,
    permute_plan,
    run_experiment,
    split_ontology_greedy,
)
from cildrift.strategies import StrategyConfig


SPEC = SyntheticSpec(
    num_classes=4, train_per_class=30, dev_per_class=10, test_per_class=15,
    dim=8, task_mode="classification", anisotropy=1.0, seed=1,
)


def small_cfg(**kw):
    kw.setdefault("strategy", StrategyConfig(kind="ice", microbatch_size=4, max_epochs=5))
    kw.setdefault("num_sessions", 2)
    kw.setdefault("permutations", 2)
    kw.setdefault("master_seed", 5)
    kw.setdefault("synthetic", SPEC)
    return ExperimentConfig(**kw)


class TestGreedySplit:
    def test_hand_simulated_example(self):
        counts = {"A": 5, "B": 4, "C": 3, "D": 2, "E": 1, "F": 1}
        plan = split_ontology_greedy(counts, 2)
        assert set(plan.sessions[0]) == {"A", "D", "E"}
        assert set(plan.sessions[1]) == {"B", "C", "F"}
        totals = [sum(counts[c] for c in s) for s in plan.sessions]
        assert totals == [8, 8]

    def test_equal_counts_one_per_session(self):
        counts = {c: 7 for c in "abcd"}
        plan = split_ontology_greedy(counts, 4)
        assert all(len(s) == 1 for s in plan.sessions)

    def test_single_session_takes_all(self):
        plan = split_ontology_greedy({"a": 1, "b": 2}, 1)
        assert set(plan.sessions[0]) == {"a", "b"}

    def test_too_many_sessions(self):
        with pytest.raises(RunError):
            split_ontology_greedy({"a": 1}, 2)

    def test_balance_bound_random(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 12))
            counts = {f"k{i}": int(rng.integers(0, 100)) for i in range(n)}
            T = int(rng.integers(1, n + 1))
            plan = split_ontology_greedy(counts, T)
            totals = [sum(counts[c] for c in s) for s in plan.sessions]
            assert max(totals) - min(totals) <= max(counts.values())


class TestPermutePlan:
    def plan(self):
        return split_ontology_greedy({c: 1 for c in "abcde"}, 3)

    def test_same_seed_same_order(self):
        p = self.plan()
        assert permute_plan(p, 3).sessions == permute_plan(p, 3).sessions

    def test_membership_unchanged(self):
        p = self.plan()
        q = permute_plan(p, 9)
        assert sorted(map(sorted, q.sessions)) == sorted(map(sorted, p.sessions))

    def test_identity_permutation_exists(self):
        p = self.plan()
        hits = [s for s in range(50) if permute_plan(p, s).sessions == p.sessions]
        assert hits, "no identity draw in 50 seeds for T=3"

    def test_snapshot_fixed_seed(self):
        p = self.plan()
        # frozen once from a verified run; guards against silent rng drift
        order = [p.sessions.index(s) for s in permute_plan(p, 12345).sessions]
        assert order == [0, 2, 1]


class TestAveraging:
    def test_mean_of_two_permutations(self):
        rows = [
            MetricsRow(0, SessionMetrics(1, 0.60, 0.5, 0.5, None, None)),
            MetricsRow(1, SessionMetrics(1, 0.62, 0.7, 0.7, None, None)),
        ]
        out = _average_rows(rows, 1)
        assert out[0]["micro"] == pytest.approx(0.61)
        assert out[0]["acc_old"] is None


class TestRunExperiment:
    def test_single_session_report(self):
        cfg = small_cfg(num_sessions=1, permutations=1)
        rep = run_experiment(cfg)
        assert len(rep.averaged) == 1
        assert rep.averaged[0]["acc_old"] is None and rep.averaged[0]["prev_old"] is None

    def test_bit_reproducible(self):
        a = run_experiment(small_cfg())
        b = run_experiment(small_cfg())
        assert a.to_json() == b.to_json()

    def test_session_orders_recorded_and_valid(self):
        rep = run_experiment(small_cfg(permutations=3))
        assert len(rep.session_orders) == 3
        base = sorted(map(sorted, rep.session_orders[0]))
        for order in rep.session_orders:
            assert sorted(map(sorted, order)) == base

    def test_adding_permutations_preserves_earlier(self):
        two = run_experiment(small_cfg(permutations=2))
        three = run_experiment(small_cfg(permutations=3))
        rows2 = [(r.permutation, r.metrics) for r in two.rows]
        rows3 = [(r.permutation, r.metrics) for r in three.rows if r.permutation < 2]
        assert rows2 == rows3

    def test_validation(self):
        with pytest.raises(RunError):
            small_cfg(permutations=0)
        with pytest.raises(RunError):
            small_cfg(num_sessions=0)
        with pytest.raises(RunError):
            small_cfg(synthetic=None)
        with pytest.raises(RunError):
            run_experiment(small_cfg(num_sessions=10))

    def test_detection_strategy_mode_check(self):
        spec = dataclasses.replace(SPEC, task_mode="detection", negatives_train=10,
                                   negatives_dev=4, negatives_test=4)
        cfg = small_cfg(synthetic=spec)
        from cildrift.strategies import StrategyError
        with pytest.raises(StrategyError):
            run_experiment(cfg)

    def test_error_annotated_with_location(self, tmp_path):
        # force a failure inside the loop via an impossible negative cap rng use
        spec = dataclasses.replace(SPEC, train_per_class=1, dev_per_class=0, test_per_class=1)
        cfg = small_cfg(synthetic=spec, num_sessions=4,
                        strategy=StrategyConfig(kind="ice", microbatch_size=4, max_epochs=1))
        rep = run_experiment(cfg)  # degenerate but trainable: 1 instance per class
        assert rep.rows

    def test_er_strategy_end_to_end(self):
        cfg = small_cfg(strategy=StrategyConfig(kind="er", microbatch_size=4, max_epochs=4,
                                                exemplars_per_class=3))
        rep = run_experiment(cfg)
        assert len(rep.rows) == 4


class TestResume:
    def test_resume_matches_uninterrupted(self, tmp_path):
        full_dir = tmp_path / "full"
        rep_full = run_experiment(small_cfg(out_dir=str(full_dir)))

        part_dir = tmp_path / "part"
        # simulate an interruption: run only the first permutation by hand,
        # then resume the real config
        cfg_small = small_cfg(out_dir=str(part_dir), permutations=1)
        run_experiment(cfg_small)
        state = json.loads((part_dir / "state.json").read_text())
        assert state["completed"] == {"0": 2}
        # patch the stored digest to the full config's digest so resume accepts it
        from cildrift.data_io import config_digest
        state["digest"] = config_digest(small_cfg(out_dir=str(part_dir)))
        (part_dir / "state.json").write_text(json.dumps(state, sort_keys=True))

        rep_resumed = run_experiment(small_cfg(out_dir=str(part_dir)), resume=True)
        assert rep_resumed.to_json() == rep_full.to_json().replace(str(full_dir), str(part_dir))

    def test_resume_rejects_other_config(self, tmp_path):
        out = tmp_path / "run"
        run_experiment(small_cfg(out_dir=str(out)))
        other = small_cfg(out_dir=str(out), master_seed=99)
        with pytest.raises(RunError, match="different configuration"):
            run_experiment(other, resume=True)

    def test_resume_needs_out_dir(self):
        with pytest.raises(RunError):
            run_experiment(small_cfg(), resume=True)

    def test_checkpoints_written_per_session(self, tmp_path):
        out = tmp_path / "run"
        run_experiment(small_cfg(out_dir=str(out), permutations=1))
        ckpts = sorted(p.name for p in (out / "checkpoints").iterdir())
        assert ckpts == ["perm00_s01.ckpt", "perm00_s02.ckpt"]


def test_write_report_files(tmp_path):
    rep = run_experiment(small_cfg())
    paths = write_report(rep, tmp_path / "out")
    metrics = paths["metrics"].read_text().splitlines()
    assert metrics[0].startswith("strategy\tpermutation\tsession")
    assert len(metrics) == 1 + len(rep.rows)
    summary = paths["summary"].read_text().splitlines()
    # summary row equals the mean of the permutation rows
    last = summary[-1].split("\t")
    t = int(last[1])
    per = [r.metrics.micro for r in rep.rows if r.metrics.session == t]
    assert float(last[2]) == pytest.approx(sum(per) / len(per))
    manifest = json.loads(paths["manifest"].read_text())
    assert manifest["config_digest"] == rep.config_digest
