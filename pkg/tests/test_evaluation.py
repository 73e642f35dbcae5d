import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rppgbench.evaluation import (
    DUMMY,
    EvalPair,
    EvalSettings,
    build_report,
    dummy_mean_estimator,
    evaluate_method,
    evaluate_methods,
    kfold_participant_split,
    mae,
    standard_error,
    summary_csv,
)
from rppgbench.ingest import SCENARIO_ORDER, DatasetManifest, load_manifest


def pairs_from(gt, est, scenarios=None):
    scenarios = scenarios or ["unlabeled"] * len(gt)
    return [EvalPair(f"r{i:03d}", f"p{i % 5}", s, g, e)
            for i, (g, e, s) in enumerate(zip(gt, est, scenarios))]


class TestMetrics:
    def test_mae_examples(self):
        assert mae(pairs_from([76, 80], [78, 84])) == 3.0
        assert mae(pairs_from([70, 90], [70, 90])) == 0.0
        assert mae(pairs_from([100], [90])) == 10.0

    def test_mae_empty(self):
        with pytest.raises(ValueError):
            mae([])

    def test_se_examples(self):
        assert standard_error(pairs_from([70, 70], [72, 74])) == pytest.approx(1.0)
        assert standard_error(pairs_from([70] * 3, [75] * 3)) == 0.0
        errs = [1, 2, 3, 4, 5, 6]
        se = standard_error(pairs_from([100] * 6, [100 + e for e in errs]))
        assert se == pytest.approx(0.7637626158, abs=1e-9)

    def test_se_needs_two(self):
        with pytest.raises(ValueError):
            standard_error(pairs_from([70], [71]))

    def test_pair_range(self):
        with pytest.raises(ValueError):
            EvalPair("r", "p", "unlabeled", 0.0, 70.0)
        with pytest.raises(ValueError):
            EvalPair("r", "p", "unlabeled", 70.0, 300.0)

    @given(st.lists(st.tuples(st.floats(30, 250), st.floats(30, 250)), min_size=2, max_size=40))
    def test_against_plain_loops(self, data):
        ps = pairs_from([g for g, _ in data], [e for _, e in data])
        errs = [abs(g - e) for g, e in data]
        m = sum(errs) / len(errs)
        sd = math.sqrt(sum((x - m) ** 2 for x in errs) / (len(errs) - 1))
        assert mae(ps) == pytest.approx(m, rel=1e-12, abs=1e-12)
        assert standard_error(ps) == pytest.approx(sd / math.sqrt(len(errs)), rel=1e-9, abs=1e-12)


class TestDummy:
    def test_mean(self):
        assert dummy_mean_estimator([70, 80, 90])() == 80.0
        assert dummy_mean_estimator([76.2])("anything") == 76.2

    def test_empty(self):
        with pytest.raises(ValueError):
            dummy_mean_estimator([])


class TestFolds:
    def test_45_by_10(self):
        plan = kfold_participant_split([f"p{i}" for i in range(45)], 10, seed=3)
        assert sorted(len(f) for f in plan.folds()) == [4] * 5 + [5] * 5

    def test_leave_one_out(self):
        plan = kfold_participant_split(list("abcdef"), 6)
        assert all(len(f) == 1 for f in plan.folds())

    def test_deterministic_and_seeded(self):
        ids = [f"p{i}" for i in range(30)]
        assert kfold_participant_split(ids, 4, 1) == kfold_participant_split(ids, 4, 1)
        assert kfold_participant_split(ids, 4, 1) != kfold_participant_split(ids, 4, 2)

    def test_duplicates_are_one_participant(self):
        plan = kfold_participant_split(["a", "a", "b", "c"], 3)
        assert sorted(plan.assignments) == ["a", "b", "c"]

    def test_errors(self):
        with pytest.raises(ValueError):
            kfold_participant_split(["a", "b"], 3)
        with pytest.raises(ValueError):
            kfold_participant_split(["a", "b"], 0)

    @given(n=st.integers(1, 60), data=st.data(), seed=st.integers(0, 2**32 - 1))
    def test_partition_properties(self, n, data, seed):
        k = data.draw(st.integers(1, n))
        ids = [f"id{i}" for i in range(n)]
        plan = kfold_participant_split(ids, k, seed)
        folds = plan.folds()
        flat = [p for f in folds for p in f]
        assert sorted(flat) == sorted(ids)
        assert len(flat) == len(set(flat))
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1
        assert all(0 <= plan.fold_of(p) < k for p in ids)


class TestReport:
    def test_aggregation_consistency(self):
        rng = np.random.default_rng(0)
        scen = [SCENARIO_ORDER[i % 4] for i in range(40)]
        ps = pairs_from(rng.uniform(55, 140, 40), rng.uniform(55, 140, 40), scen)
        rep = build_report("POS", "d", {}, ps)
        weighted = sum(a.mae * a.n for a in rep.per_scenario.values()) / len(ps)
        assert rep.overall.mae == pytest.approx(weighted, abs=1e-9)
        assert rep.overall.mae == pytest.approx(np.mean([p.abs_error for p in ps]), abs=1e-9)
        assert list(rep.per_scenario) == list(SCENARIO_ORDER)

    def test_unlabeled_has_no_scenarios(self):
        rep = build_report("POS", "d", {}, pairs_from([70, 80], [71, 79]))
        assert rep.per_scenario == {}
        header = summary_csv({"POS": rep}).splitlines()[0]
        assert header == "method,ALL"

    def test_fingerprint_tracks_config(self):
        a = build_report("POS", "d", {"x": 1}, pairs_from([70], [71]))
        b = build_report("POS", "d", {"x": 2}, pairs_from([70], [71]))
        assert a.config_fingerprint != b.config_fingerprint


class TestEvaluate:
    def test_end_to_end_small(self, small_corpus):
        out, _ = small_corpus
        manifest = load_manifest(out / "manifest.json")
        reports = evaluate_methods(manifest)
        assert set(reports) == {"GREEN", "CHROM", "POS", "ICA", DUMMY}
        for name, rep in reports.items():
            assert rep.overall.n + rep.n_excluded == 12
            if name != DUMMY:
                assert rep.overall.mae < reports[DUMMY].overall.mae
        header = summary_csv(reports).splitlines()[0].split(",")
        assert header == ["method", *SCENARIO_ORDER, "ALL"]

    def test_dummy_equals_mean_absolute_deviation(self, small_corpus):
        out, _ = small_corpus
        rep = evaluate_methods(load_manifest(out / "manifest.json"), ["GREEN"])[DUMMY]
        gts = np.array([p.hr_gt_bpm for p in rep.per_recording])
        assert rep.overall.mae == pytest.approx(np.mean(np.abs(gts - gts.mean())), abs=1e-9)
        assert rep.overall.mae > 0

    def test_folds_reported(self, small_corpus):
        out, _ = small_corpus
        m = load_manifest(out / "manifest.json")
        plan = kfold_participant_split(m.participants, 3, seed=1)
        reports = evaluate_methods(m, ["POS"], fold_plan=plan)
        folds = reports["POS"].folds
        assert len(folds["per_fold"]) == 3
        assert folds["mean_fold_mae"] == pytest.approx(np.mean([f["mae"] for f in folds["per_fold"]]))
        assert folds["recording_weighted_fold_mae"] == pytest.approx(reports["POS"].overall.mae)
        # dummy trained on the other folds cannot see its own fold's ground truth
        dummy = reports[DUMMY]
        gt = {p.recording_id: p.hr_gt_bpm for p in dummy.per_recording}
        pid = {r.recording_id: r.participant_id for r in m.recordings}
        for p in dummy.per_recording:
            f = plan.fold_of(p.participant_id)
            train = [g for rid, g in gt.items() if plan.fold_of(pid[rid]) != f]
            assert p.hr_est_bpm == pytest.approx(np.mean(train))

    def test_unreadable_file_becomes_diagnostic(self, small_corpus, tmp_path):
        out, _ = small_corpus
        m = load_manifest(out / "manifest.json")
        recs = list(m.recordings)
        broken = recs[0].__class__(**{**recs[0].__dict__, "gt_ppg": "ppg/missing.csv"})
        m2 = DatasetManifest(m.dataset_name, (broken, *recs[1:]), m.base_dir)
        rep = evaluate_method(m2, "POS")
        assert rep.overall.n == len(recs) - 1
        assert rep.n_excluded == 1
        assert rep.diagnostics[0]["recording_id"] == broken.recording_id
        assert "missing.csv" in rep.diagnostics[0]["error"]

    def test_byte_identical_reports(self, small_corpus):
        out, _ = small_corpus
        m = load_manifest(out / "manifest.json")
        a = evaluate_method(m, "ICA").dumps()
        b = evaluate_method(m, "ICA").dumps()
        assert a == b
        json.loads(a)

    def test_jobs_do_not_change_results(self, small_corpus):
        out, _ = small_corpus
        m = load_manifest(out / "manifest.json")
        s = EvalSettings()
        one = evaluate_methods(m, ["CHROM"], s, jobs=1)
        two = evaluate_methods(m, ["CHROM"], s, jobs=2)
        assert one["CHROM"].dumps() == two["CHROM"].dumps()

    def test_unknown_method(self, small_corpus):
        out, _ = small_corpus
        with pytest.raises(ValueError):
            evaluate_methods(load_manifest(out / "manifest.json"), ["PBV"])
