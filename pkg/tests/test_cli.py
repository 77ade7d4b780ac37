import json
import socket

import numpy as np
import pytest

from pmcausal.cli import main
from pmcausal.core import write_cohort_csv
from pmcausal.simulation import main_scenario, scenario_to_json

from conftest import four_unit_cohort


@pytest.fixture
def scenario_file(tmp_path):
    doc = scenario_to_json(main_scenario(n_replicates=4, superpop_size=1500, master_seed=3))
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def study_file(tmp_path):
    doc = {
        "covariates": [{"name": "C", "kind": "binary"}],
        "arm_spec": {"control": ["k0"], "treated": ["k1"]},
        "algorithm": {"rules": [{"when": {}, "recommend": "k1"}]},
        "outcome_kind": "continuous",
    }
    path = tmp_path / "study.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def cohort_file(tmp_path):
    path = tmp_path / "cohort.csv"
    write_cohort_csv(path, four_unit_cohort())
    return path


class TestSimulate:
    def test_writes_results_and_summary(self, scenario_file, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["simulate", str(scenario_file), "--out", str(out)])
        assert code == 0
        captured = capsys.readouterr()
        assert "estimand" in captured.out
        assert "CE1" in captured.out
        assert "wrote" in captured.err
        assert (out / "result.json").exists()
        assert (out / "result.csv").exists()

    def test_reproducible_outputs(self, scenario_file, tmp_path, capsys):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", str(scenario_file), "--out", str(out1), "--replicates", "2", "--seed", "7"]) == 0
        assert main(["simulate", str(scenario_file), "--out", str(out2), "--replicates", "2", "--seed", "7"]) == 0
        capsys.readouterr()
        assert (out1 / "result.json").read_bytes() == (out2 / "result.json").read_bytes()
        assert (out1 / "result.csv").read_bytes() == (out2 / "result.csv").read_bytes()

    def test_missing_coefficient_row_exits_2(self, tmp_path, capsys):
        doc = scenario_to_json(main_scenario())
        doc["simulation"]["coefficients"] = doc["simulation"]["coefficients"][:2]
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(doc))
        assert main(["simulate", str(path), "--out", str(tmp_path / "o")]) == 2
        assert "k1_2" in capsys.readouterr().err

    def test_bad_json_exits_2(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["simulate", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_unknown_method_exits_2(self, scenario_file, tmp_path, capsys):
        assert (
            main(["simulate", str(scenario_file), "--out", str(tmp_path / "o"), "--methods", "magic"])
            == 2
        )


class TestEstimate:
    def test_worked_example_effect(self, cohort_file, study_file, tmp_path, capsys):
        out = tmp_path / "report.json"
        code = main(
            ["estimate", str(cohort_file), str(study_file), "--out", str(out), "--methods", "std", "--estimands", "CE1"]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["CE1"]["std"]["effect"] == pytest.approx(2.0)
        assert "2.0000" in capsys.readouterr().out

    def test_oracle_without_counterfactuals_exits_3(self, cohort_file, study_file, tmp_path, capsys):
        code = main(
            ["estimate", str(cohort_file), str(study_file), "--out", str(tmp_path / "r.json"), "--methods", "true"]
        )
        assert code == 3
        assert "counterfactual" in capsys.readouterr().err

    def test_method_cardinality(self, cohort_file, study_file, tmp_path, capsys):
        out = tmp_path / "report.json"
        code = main(
            [
                "estimate",
                str(cohort_file),
                str(study_file),
                "--out",
                str(out),
                "--methods",
                "naive,std,ipw,tmle",
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        for estimand in ("CE1", "CE2", "CE3"):
            assert set(payload[estimand].keys()) == {"naive", "std", "ipw", "tmle"}

    def test_schema_mismatch_exits_2(self, study_file, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("unit_id,arm,version,outcome\nu0,1,k1,2.0\n")
        assert main(["estimate", str(bad), str(study_file), "--out", str(tmp_path / "r.json")]) == 2


class TestPdxCommand:
    def make_inputs(self, tmp_path):
        from conftest import synthetic_pdx_records

        records = synthetic_pdx_records(n_eligible=74, seed=23)
        models = ["model_id,tissue,KRAS,BRAF,PIK3CA,PTEN"]
        responses = ["model_id,drug,best_average_response,responder"]
        for r in records:
            models.append(
                f"{r.model_id},{r.tissue},{r.flags['KRAS']},{r.flags['BRAF']},{r.flags['PIK3CA']},{r.flags['PTEN']}"
            )
            for drug, resp in r.responses.items():
                responses.append(
                    f"{r.model_id},{drug},{resp.best_average_response!r},{resp.responder}"
                )
        (tmp_path / "models.csv").write_text("\n".join(models) + "\n")
        (tmp_path / "responses.csv").write_text("\n".join(responses) + "\n")
        return tmp_path / "models.csv", tmp_path / "responses.csv"

    def test_binary_outcome_run(self, tmp_path, capsys):
        models, responses = self.make_inputs(tmp_path)
        code = main(
            [
                "pdx",
                str(models),
                "--responses",
                str(responses),
                "--reps",
                "2",
                "--cohort",
                "70",
                "--trees",
                "12",
                "--outcome",
                "binary",
                "--methods",
                "naive,std",
                "--out",
                str(tmp_path / "out"),
            ]
        )
        assert code == 0
        assert (tmp_path / "out" / "result.json").exists()

    def test_eligible_below_cohort_exits_3(self, tmp_path, capsys):
        models, responses = self.make_inputs(tmp_path)
        code = main(
            ["pdx", str(models), "--responses", str(responses), "--reps", "1", "--cohort", "90", "--out", str(tmp_path / "o")]
        )
        assert code == 3

    def test_load_error_exits_2(self, tmp_path, capsys):
        models, _ = self.make_inputs(tmp_path)
        bad = tmp_path / "bad_responses.csv"
        bad.write_text("model_id,drug,best_average_response,responder\nm001,unknown,1.0,0\n")
        assert main(["pdx", str(models), "--responses", str(bad), "--out", str(tmp_path / "o")]) == 2


class TestServe:
    def test_occupied_port_exits_4(self, capsys):
        placeholder = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        placeholder.bind(("127.0.0.1", 0))
        placeholder.listen(1)
        port = placeholder.getsockname()[1]
        try:
            code = main(["serve", "--port", str(port)])
        finally:
            placeholder.close()
        assert code == 4
        assert "cannot bind" in capsys.readouterr().err


class TestStdoutContract:
    def test_stdout_is_only_the_table(self, scenario_file, tmp_path, capsys):
        main(["simulate", str(scenario_file), "--out", str(tmp_path / "o"), "--replicates", "2"])
        captured = capsys.readouterr()
        lines = [l for l in captured.out.splitlines() if l.strip()]
        assert lines[0].startswith("estimand")
        assert all(("CE" in l or l.startswith(("estimand", "-"))) for l in lines)
        assert "wrote" not in captured.out
