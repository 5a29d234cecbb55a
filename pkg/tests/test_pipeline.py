import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semvid.budget import HyperParams, total_budget
from semvid.errors import BudgetInfeasibleError, ValidationError
from semvid.pipeline import (
    BENCH_COLUMNS,
    Strategy,
    budget_for,
    grounding_summary,
    interval_iou,
    mean_iou,
    parse_strategy,
    recall_at,
    run_baseline,
    run_bench,
    run_semvid,
)
from semvid.synth import ScenarioSpec, generate_scenario


@pytest.fixture(scope="module")
def scenario():
    return generate_scenario(ScenarioSpec(seed=12))


class TestSemvid:
    def test_full_retention(self, scenario):
        sel = run_semvid(scenario.patches, scenario.query, HyperParams(retention_ratio=1.0))
        assert sel.mask().all()

    def test_default_count(self, scenario):
        sel = run_semvid(scenario.patches, scenario.query, HyperParams())
        T, P = scenario.spec.T, scenario.spec.P
        assert sel.K == int(np.floor(0.125 * T * P)) == len(sel.flat_indices())

    def test_infeasible(self, scenario):
        with pytest.raises(BudgetInfeasibleError):
            run_semvid(scenario.patches, scenario.query, HyperParams(retention_ratio=0.02))

    def test_evidence_frames_get_more_budget(self):
        above = []
        for seed in range(100):
            sc = generate_scenario(ScenarioSpec(seed=seed))
            k = budget_for(sc.patches, sc.query, HyperParams()).k
            above.append(k[list(sc.spec.evidence_frames)].mean() > k.mean())
        assert np.mean(above) > 0.95


class TestBaselines:
    def test_uniform_stride(self):
        v = np.random.default_rng(0).standard_normal((3, 4, 2)).astype(np.float32)
        sel = run_baseline(v, np.ones((1, 2)), "uniform", 0.5)
        assert [fs.object for fs in sel.frames] == [[0, 2]] * 3

    def test_random_is_seeded(self, scenario):
        a = run_baseline(scenario.patches, scenario.query, Strategy("random", 5), 0.2)
        b = run_baseline(scenario.patches, scenario.query, Strategy("random", 5), 0.2)
        c = run_baseline(scenario.patches, scenario.query, Strategy("random", 6), 0.2)
        assert a.to_json() == b.to_json()
        assert a.to_json() != c.to_json()

    def test_random_needs_seed(self):
        with pytest.raises(ValidationError):
            Strategy("random")

    def test_relevance_concentrates_on_aligned_frame(self):
        spec = ScenarioSpec(seed=2, T=8, P=16, n_evidence=16, evidence_frames=(3,), boundary_frames=(), align=1.0)
        sc = generate_scenario(spec)
        sel = run_baseline(sc.patches, sc.query, "relevance", 0.125)
        counts = [len(fs) for fs in sel.frames]
        assert counts[3] == 16 and sum(counts) == 16
        assert counts.count(0) == 7

    def test_saliency_picks_largest_norms(self, scenario):
        sel = run_baseline(scenario.patches, scenario.query, "saliency", 0.1)
        norms = np.linalg.norm(scenario.patches.astype(np.float64), axis=-1).ravel()
        kept = sel.flat_indices()
        dropped = np.setdiff1d(np.arange(norms.size), kept)
        assert norms[kept].min() >= norms[dropped].max()

    def test_roles_are_object_only(self, scenario):
        sel = run_baseline(scenario.patches, scenario.query, "saliency", 0.25)
        assert all(not fs.motion and not fs.context for fs in sel.frames)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(3, 12), st.floats(0.05, 1.0), st.sampled_from(["semvid", "uniform", "random:3", "relevance", "saliency"]))
    def test_every_strategy_keeps_k(self, T, P, r, name):
        rng = np.random.default_rng(T * 100 + P)
        v = rng.standard_normal((T, P, 4)).astype(np.float32)
        q = rng.standard_normal((2, 4)).astype(np.float32)
        r = max(r, 1 / P)  # keeps the single context slot feasible
        hp = HyperParams(retention_ratio=r, k_ctx=1)
        strat = parse_strategy(name)
        sel = run_semvid(v, q, hp) if strat.name == "semvid" else run_baseline(v, q, strat, r)
        assert sel.K == total_budget(r, T, P) == len(sel.flat_indices())


class TestBench:
    def test_no_pruning_row(self):
        rows = run_bench([ScenarioSpec(seed=0)], ["semvid"], [1.0])
        assert len(rows) == 1
        assert rows[0]["er_rel"] == 1.0 and rows[0]["recall"] == 1.0

    def test_row_count_and_schema(self):
        specs = [ScenarioSpec(seed=s, T=6, P=9, evidence_frames=(2,), boundary_frames=(3,)) for s in range(2)]
        rows = run_bench(specs, ["semvid", "uniform", "saliency"], [0.5, 0.75])
        assert len(rows) == 2 * 3 * 2
        for row in rows:
            assert set(BENCH_COLUMNS) <= set(row)
            assert row["prune_ms"] >= 0

    def test_failure_recorded_and_run_continues(self):
        rows = run_bench([ScenarioSpec(seed=0)], ["semvid", "uniform"], [0.01])
        by = {r["strategy"]: r for r in rows}
        assert "error" in by["semvid"] and np.isnan(by["semvid"]["er_rel"])
        assert "error" not in by["uniform"]

    def test_untimed_runs_are_identical(self):
        args = ([ScenarioSpec(seed=3)], ["semvid", "random:1"], [0.25])
        assert run_bench(*args, timing=False) == run_bench(*args, timing=False)


class TestIoU:
    def test_identical(self):
        assert interval_iou([2, 7], [2, 7]) == 1.0

    def test_disjoint(self):
        assert interval_iou([0, 1], [2, 3]) == 0.0

    def test_half_overlap(self):
        assert interval_iou([0, 10], [5, 15]) == pytest.approx(1 / 3)

    def test_zero_length(self):
        assert interval_iou([3, 3], [3, 3]) == 0.0

    def test_inverted(self):
        with pytest.raises(ValidationError):
            interval_iou([5, 1], [0, 3])

    @given(
        st.tuples(st.floats(0, 100), st.floats(0, 100)).map(sorted),
        st.tuples(st.floats(0, 100), st.floats(0, 100)).map(sorted),
    )
    def test_symmetric_bounded(self, a, b):
        x = interval_iou(a, b)
        assert x == interval_iou(b, a)
        assert 0.0 <= x <= 1.0

    def test_summary(self):
        preds = [[0, 10], [0, 10], [20, 30]]
        gts = [[0, 10], [5, 15], [0, 5]]
        out = grounding_summary(preds, gts)
        assert out["mIoU"] == pytest.approx((1 + 1 / 3 + 0) / 3)
        assert out["R1@0.3"] == pytest.approx(2 / 3)
        assert out["R1@0.5"] == pytest.approx(1 / 3)
        assert out["R1@0.7"] == pytest.approx(1 / 3)

    def test_identical_lists(self):
        pairs = [[0, 1], [2, 5], [1, 9]]
        assert mean_iou(pairs, pairs) == 1.0
        assert recall_at(pairs, pairs, 0.7) == 1.0
