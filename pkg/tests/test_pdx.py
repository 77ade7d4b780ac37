import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmcausal.core import DataError, EstimationError, SchemaError, restrict_eligible
from pmcausal.pdx import (
    CONTROL_DRUG,
    MEK_DRUG,
    PI3K_DRUG,
    DrugResponse,
    PdxModelRecord,
    ResponseThresholds,
    VolumeSeries,
    best_average_response,
    best_response,
    classify_response,
    default_pdx_method_specs,
    default_thresholds,
    load_pdx,
    pdx_algorithm,
    records_to_cohort,
    run_pdx_experiment,
    tumor_volume_change,
)
from pmcausal.simulation import result_to_json

from conftest import synthetic_pdx_records

HAND_SERIES = VolumeSeries("m1", MEK_DRUG, (0, 3, 7, 14, 21), (100.0, 120.0, 90.0, 60.0, 80.0))


class TestVolumeMetrics:
    def test_volume_change_as_printed(self):
        days, change = tumor_volume_change(VolumeSeries("m", MEK_DRUG, (0, 3), (100.0, 120.0)))
        assert change[0] == 0.0
        assert change[1] == pytest.approx(100 * 20 / 120)

    def test_volume_change_shrinking(self):
        _, change = tumor_volume_change(VolumeSeries("m", MEK_DRUG, (0, 7), (100.0, 90.0)))
        assert change[1] == pytest.approx(-100 / 9)

    def test_constant_volume_zero_change(self):
        _, change = tumor_volume_change(VolumeSeries("m", MEK_DRUG, (0, 7, 14), (50.0, 50.0, 50.0)))
        np.testing.assert_allclose(change, 0.0)

    def test_baseline_denominator_variant(self):
        _, change = tumor_volume_change(HAND_SERIES, baseline_denominator=True)
        np.testing.assert_allclose(change, [0.0, 20.0, -10.0, -40.0, -20.0])

    def test_hand_series_change_vector(self):
        _, change = tumor_volume_change(HAND_SERIES)
        np.testing.assert_allclose(change, [0.0, 50 / 3, -100 / 9, -200 / 3, -25.0], atol=1e-12)

    def test_nonpositive_volume_rejected(self):
        with pytest.raises(DataError):
            VolumeSeries("m", MEK_DRUG, (0, 3), (100.0, -5.0))

    def test_day_zero_required(self):
        with pytest.raises(DataError):
            VolumeSeries("m", MEK_DRUG, (3, 7), (100.0, 120.0))


class TestBestResponse:
    def test_hand_value(self):
        days, change = tumor_volume_change(HAND_SERIES)
        assert best_response(days, change) == pytest.approx(-200 / 3, abs=1e-9)

    def test_single_late_point(self):
        assert best_response(np.array([0, 14]), np.array([0.0, 5.0])) == pytest.approx(5.0)

    def test_requires_followup_after_day_10(self):
        with pytest.raises(DataError, match="insufficient follow-up"):
            best_response(np.array([0, 3, 7]), np.array([0.0, 1.0, 2.0]))


class TestBestAverageResponse:
    def test_hand_running_means(self):
        days, change = tumor_volume_change(HAND_SERIES)
        # running means: day 14 -> -55/36*10 = -15.2778, day 21 -> -155/9
        assert best_average_response(days, change) == pytest.approx(-155 / 9, abs=1e-9)

    def test_intermediate_running_mean_value(self):
        days = np.array([0, 3, 7, 14])
        change = np.array([0.0, 50 / 3, -100 / 9, -200 / 3])
        assert best_average_response(days, change) == pytest.approx(-550 / 36, abs=1e-9)

    def test_constant_change_past_day10(self):
        days = np.array([0, 12, 20])
        change = np.array([7.0, 7.0, 7.0])
        assert best_average_response(days, change) == pytest.approx(7.0)

    def test_decreasing_change_attained_at_last_day(self):
        days = np.array([0, 11, 15, 30])
        change = np.array([0.0, -10.0, -20.0, -30.0])
        running = np.cumsum(change) / np.arange(1, 5)
        assert best_average_response(days, change) == pytest.approx(running[-1])


class TestClassification:
    def test_progressive_disease_is_nonresponder(self):
        category, responder = classify_response(50.0, 40.0)
        assert category == "PD"
        assert responder == 0

    def test_complete_response_is_responder(self):
        category, responder = classify_response(-100.0, -60.0)
        assert category == "CR"
        assert responder == 1

    def test_boundary_goes_to_better_category(self):
        thresholds = default_thresholds()
        name, br_max, bar_max = thresholds.categories[0]
        category, _ = classify_response(br_max, bar_max, thresholds)
        assert category == name

    def test_partial_and_stable(self):
        assert classify_response(-60.0, -25.0)[0] == "PR"
        assert classify_response(10.0, 5.0)[0] == "SD"

    def test_custom_thresholds(self):
        custom = ResponseThresholds(categories=(("CR", -99.0, -99.0),), default="PD")
        assert classify_response(-10.0, -10.0, custom) == ("PD", 0)


class TestAlgorithm:
    def test_kras_gets_mek_inhibitor(self):
        algo = pdx_algorithm()
        assert algo.recommend({"KRAS": 1, "BRAF": 0, "PIK3CA": 0, "PTEN": 0}) == MEK_DRUG

    def test_pik3ca_only_gets_pi3k_inhibitor(self):
        algo = pdx_algorithm()
        assert algo.recommend({"KRAS": 0, "BRAF": 0, "PIK3CA": 1, "PTEN": 1}) == PI3K_DRUG

    def test_double_mutant_precedence(self):
        algo = pdx_algorithm()
        assert algo.recommend({"KRAS": 1, "BRAF": 0, "PIK3CA": 1, "PTEN": 0}) == MEK_DRUG

    def test_unmutated_ineligible(self):
        algo = pdx_algorithm()
        assert algo.recommend({"KRAS": 0, "BRAF": 0, "PIK3CA": 0, "PTEN": 1}) is None


def write_models_csv(path, rows):
    lines = ["model_id,tissue,KRAS,BRAF,PIK3CA,PTEN"]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


class TestLoadPdx:
    def models_file(self, tmp_path):
        path = tmp_path / "models.csv"
        write_models_csv(
            path,
            [
                ("m1", "colon", 1, 0, 0, 0),
                ("m2", "lung", 0, 0, 1, 1),
                ("m3", "skin", 0, 1, 1, 0),
            ],
        )
        return path

    def responses_file(self, tmp_path):
        path = tmp_path / "responses.csv"
        lines = ["model_id,drug,best_average_response,responder"]
        for mid in ("m1", "m2", "m3"):
            for drug, bar in ((CONTROL_DRUG, 20.0), (MEK_DRUG, -40.0), (PI3K_DRUG, -10.0)):
                lines.append(f"{mid},{drug},{bar},{int(bar < 0)}")
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_three_complete_records(self, tmp_path):
        records = load_pdx(self.models_file(tmp_path), responses_csv=self.responses_file(tmp_path))
        assert len(records) == 3
        assert all(r.complete() for r in records)
        assert all(r.complete("binary") for r in records)

    def test_missing_drug_flagged_incomplete(self, tmp_path):
        models = self.models_file(tmp_path)
        path = tmp_path / "responses.csv"
        path.write_text(
            "model_id,drug,best_average_response,responder\n"
            f"m1,{CONTROL_DRUG},10.0,0\n"
            f"m1,{MEK_DRUG},-30.0,1\n"
            f"m2,{CONTROL_DRUG},10.0,0\n"
            f"m2,{MEK_DRUG},-30.0,1\n"
            f"m2,{PI3K_DRUG},-20.0,1\n"
            f"m3,{CONTROL_DRUG},10.0,0\n"
            f"m3,{MEK_DRUG},-30.0,1\n"
            f"m3,{PI3K_DRUG},-20.0,1\n"
        )
        records = load_pdx(models, responses_csv=path)
        by_id = {r.model_id: r for r in records}
        assert not by_id["m1"].complete()
        assert by_id["m2"].complete()

    def test_unknown_drug_itemized(self, tmp_path):
        models = self.models_file(tmp_path)
        path = tmp_path / "responses.csv"
        path.write_text(
            "model_id,drug,best_average_response,responder\nm1,unknown_drug,1.0,0\nm1,LEE011,x,0\n"
        )
        with pytest.raises(SchemaError) as err:
            load_pdx(models, responses_csv=path)
        message = str(err.value)
        assert "unknown_drug" in message
        assert "malformed" in message

    def test_duplicate_response_itemized(self, tmp_path):
        models = self.models_file(tmp_path)
        path = tmp_path / "responses.csv"
        path.write_text(
            "model_id,drug,best_average_response,responder\n"
            f"m1,{CONTROL_DRUG},1.0,0\n"
            f"m1,{CONTROL_DRUG},2.0,0\n"
        )
        with pytest.raises(SchemaError, match="duplicate"):
            load_pdx(models, responses_csv=path)

    def test_volumes_path_equals_responses_path(self, tmp_path):
        models = self.models_file(tmp_path)
        # constant-percent-change series: V_t = V_0 / (1 - d/100) gives
        # day-t change d exactly, so BAR has the closed form d * k / (k + 1)
        choices = {"m1": -60.0, "m2": 20.0, "m3": 50.0}
        vol_lines = ["model_id,drug,day,volume_mm3"]
        resp_lines = ["model_id,drug,best_average_response,responder"]
        for mid, d in choices.items():
            for drug, shift in ((CONTROL_DRUG, 0.0), (MEK_DRUG, -20.0), (PI3K_DRUG, 10.0)):
                dd = d + shift
                v = 100.0 / (1 - dd / 100.0)
                vol_lines.append(f"{mid},{drug},0,100.0")
                vol_lines.append(f"{mid},{drug},7,{v!r}")
                vol_lines.append(f"{mid},{drug},14,{v!r}")
                bar = dd * 2 / 3  # running means: 0, dd/2, 2dd/3; min after day 10
                _, responder = classify_response(dd, bar)
                resp_lines.append(f"{mid},{drug},{bar!r},{responder}")
        (tmp_path / "volumes.csv").write_text("\n".join(vol_lines) + "\n")
        (tmp_path / "responses.csv").write_text("\n".join(resp_lines) + "\n")
        via_volumes = load_pdx(models, volumes_csv=tmp_path / "volumes.csv")
        via_responses = load_pdx(models, responses_csv=tmp_path / "responses.csv")
        for rv, rr in zip(via_volumes, via_responses):
            assert rv.model_id == rr.model_id
            for drug in (CONTROL_DRUG, MEK_DRUG, PI3K_DRUG):
                assert rv.responses[drug].best_average_response == pytest.approx(
                    rr.responses[drug].best_average_response, abs=1e-9
                )
                assert rv.responses[drug].responder == rr.responses[drug].responder


class TestScalingInvariance:
    @settings(max_examples=25, deadline=None)
    @given(st.floats(min_value=0.01, max_value=100.0))
    def test_metrics_unchanged_by_volume_rescaling(self, scale):
        base = HAND_SERIES
        scaled = VolumeSeries(
            base.model_id, base.drug, base.days, tuple(v * scale for v in base.volumes)
        )
        d1, c1 = tumor_volume_change(base)
        d2, c2 = tumor_volume_change(scaled)
        np.testing.assert_allclose(c1, c2, atol=1e-9)
        assert best_response(d1, c1) == pytest.approx(best_response(d2, c2))
        assert best_average_response(d1, c1) == pytest.approx(best_average_response(d2, c2))


class TestExperiment:
    def test_masking_soundness(self):
        records = synthetic_pdx_records(n_eligible=40, seed=3)
        full = records_to_cohort(records)
        from pmcausal.pdx import _assign_uniform

        rng = np.random.default_rng(0)
        cohort = _assign_uniform(full, np.arange(full.n), rng, "uniform")
        rows = np.arange(cohort.n)
        np.testing.assert_array_equal(
            cohort.outcome, cohort.counterfactuals[rows, cohort.version_idx]
        )

    def test_full_set_recommended_assignment_makes_naive_pm_exact(self):
        # every model shows its recommended drug, so the naive algorithm-arm
        # mean equals the oracle one
        from pmcausal.estimators import EstimandSpec, RegimeTarget

        records = synthetic_pdx_records(n_eligible=75, seed=5)
        methods = default_pdx_method_specs(methods=("true", "naive"), n_trees=20)
        raw = EstimandSpec(kind="raw-mean", target=RegimeTarget.algorithm_arm())
        result = run_pdx_experiment(
            records,
            n_replicates=1,
            cohort_size=75,
            seed=1,
            methods=methods,
            estimands=[raw],
            assignment="recommended",
        )
        oracle_pm = result.replicate_values("raw-mean", "true")[0]
        naive_pm = result.replicate_values("raw-mean", "naive")[0]
        assert naive_pm == pytest.approx(oracle_pm, abs=1e-9)

    def test_same_seed_identical_results(self):
        records = synthetic_pdx_records(n_eligible=75, seed=7)
        methods = default_pdx_method_specs(methods=("naive", "std"), n_trees=15)
        a = run_pdx_experiment(records, n_replicates=3, cohort_size=70, seed=9, methods=methods)
        b = run_pdx_experiment(records, n_replicates=3, cohort_size=70, seed=9, methods=methods)
        assert json.dumps(result_to_json(a), sort_keys=True) == json.dumps(result_to_json(b), sort_keys=True)

    def test_worker_count_invariance(self):
        records = synthetic_pdx_records(n_eligible=75, seed=11)
        methods = default_pdx_method_specs(methods=("naive", "std"), n_trees=10)
        a = run_pdx_experiment(records, n_replicates=4, cohort_size=70, seed=2, methods=methods, workers=1)
        b = run_pdx_experiment(records, n_replicates=4, cohort_size=70, seed=2, methods=methods, workers=2)
        assert json.dumps(result_to_json(a), sort_keys=True) == json.dumps(result_to_json(b), sort_keys=True)

    def test_binary_outcome_run(self):
        records = synthetic_pdx_records(n_eligible=75, seed=13)
        methods = default_pdx_method_specs(methods=("true", "naive", "std"), n_trees=15)
        result = run_pdx_experiment(
            records, n_replicates=2, cohort_size=70, seed=3, methods=methods, outcome_kind="binary"
        )
        vals = result.replicate_values("CE1", "std")
        assert np.all(np.abs(vals[np.isfinite(vals)]) <= 1.0)

    def test_insufficient_models_rejected(self):
        records = synthetic_pdx_records(n_eligible=30, seed=1)
        with pytest.raises(EstimationError, match="eligible"):
            run_pdx_experiment(records, n_replicates=1, cohort_size=70)

    def test_truth_practice_control_equals_uniform(self):
        records = synthetic_pdx_records(n_eligible=75, seed=17)
        methods = default_pdx_method_specs(methods=("naive",), n_trees=5)
        result = run_pdx_experiment(records, n_replicates=1, cohort_size=70, seed=4, methods=methods)
        assert result.truth_value("CE2") == pytest.approx(result.truth_value("CE3"))
