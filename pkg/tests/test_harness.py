import csv
import json
import math

import pytest

from fairstream.cli import main as cli_main
from fairstream.generators import gen_random
from fairstream.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    PredictionSpec,
    emit_tables,
    lower_bound_suite,
    report_row,
    resolve_source,
    run_experiment,
    sweep_prediction_error,
)
from fairstream.model import harmonic, save_instance


GEN_SPEC = {"family": "random", "num_agents": 3, "batch_size": 2,
            "num_rounds": 20, "budget": 3.0, "seed": 5}


class TestRunExperiment:
    def test_trials_are_identical(self):
        config = ExperimentConfig(sources=(GEN_SPEC,), algorithm="batched",
                                  trials=3, with_benchmark=False)
        result = run_experiment(config)
        assert len(result.reports) == 3
        pfs = {r.pf_value for r in result.reports}
        assert len(pfs) == 1
        assert not result.failures

    def test_empty_source_list(self):
        config = ExperimentConfig(sources=(), algorithm="batched")
        result = run_experiment(config)
        assert result.reports == [] and result.failures == []

    def test_infeasible_cell_recorded_not_raised(self):
        spec = {"family": "random", "num_agents": 2, "batch_size": 1,
                "num_rounds": 15, "budget": 1.0, "distribution": "binary",
                "seed": 3, "p": 0.9}
        config = ExperimentConfig(sources=(spec,), algorithm="binary",
                                  alpha=0.3, with_benchmark=False)
        result = run_experiment(config)
        assert len(result.failures) == 1
        assert "exceeds 1/2" in result.failures[0]["error"]

    def test_file_source(self, tmp_path):
        path = str(tmp_path / "inst.json")
        save_instance(gen_random(**{k: v for k, v in GEN_SPEC.items() if k != "family"}), path)
        config = ExperimentConfig(sources=(path,), algorithm="batched",
                                  with_benchmark=False)
        result = run_experiment(config)
        assert result.reports[0].instance_id == "inst.json"

    def test_config_round_trips_through_json(self):
        config = ExperimentConfig(sources=(GEN_SPEC,), algorithm="single",
                                  alpha=9.0, prediction=PredictionSpec("worst_under", d=2.0))
        blob = json.dumps(config.to_dict())
        back = json.loads(blob)
        assert back["algorithm"] == "single"
        assert back["prediction"]["d"] == 2.0


class TestSweep:
    def test_alpha_monotone_in_d(self):
        inst = gen_random(3, 2, 40, 4.0, seed=8)
        reports = sweep_prediction_error(inst, [1.0, math.e, math.e**2])
        alphas = [r.alpha for r in reports]
        assert alphas == sorted(alphas)
        for r in reports:
            assert r.pf_value <= r.alpha + 1e-4
            assert r.sweep_value is not None


class TestSuites:
    def test_binary_suite_beats_harmonic_floor(self):
        report = lower_bound_suite("binary", n=4)
        assert report.floor == pytest.approx(harmonic(4) / 2)
        assert report.passed
        assert len(report.entries) == 3

    def test_geometric_suite(self):
        report = lower_bound_suite("geometric", t=4, b=1, m=100.0)
        assert report.floor == 2.0
        assert report.passed

    def test_prediction_hardness_suite(self):
        report = lower_bound_suite("prediction_hardness", b=1, t_prime=4)
        assert report.floor == pytest.approx(harmonic(4) / 2)
        assert report.passed

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            lower_bound_suite("mystery")

    def test_suite_report_serializes(self):
        report = lower_bound_suite("binary", n=3)
        blob = json.dumps(report.to_dict())
        assert "max_ratio" in blob


class TestEmitTables:
    def _reports(self, n=2):
        config = ExperimentConfig(sources=(GEN_SPEC,), algorithm="batched",
                                  trials=n, with_benchmark=True)
        return run_experiment(config).reports

    def test_empty_reports_header_only(self, tmp_path):
        path = str(tmp_path / "empty.csv")
        emit_tables([], "csv", path)
        with open(path) as fh:
            lines = fh.read().strip().splitlines()
        assert lines == [",".join(CSV_COLUMNS)]

    def test_csv_json_value_equal(self, tmp_path):
        reports = self._reports()
        csv_path, json_path = str(tmp_path / "r.csv"), str(tmp_path / "r.json")
        emit_tables(reports, "csv", csv_path)
        emit_tables(reports, "json", json_path)
        with open(csv_path) as fh:
            rows = list(csv.DictReader(fh))
        with open(json_path) as fh:
            blobs = json.load(fh)
        assert len(rows) == len(blobs) == len(reports)
        for row, blob in zip(rows, blobs):
            assert float(row["pf"]) == pytest.approx(blob["pf"])
            assert float(row["nsw"]) == pytest.approx(blob["nsw"])
            assert float(row["dual_bound"]) == pytest.approx(
                blob["residuals"]["dual_bound"])

    def test_sweep_emits_plot_companion(self, tmp_path):
        inst = gen_random(3, 2, 30, 4.0, seed=8)
        reports = sweep_prediction_error(inst, [1.0, math.e])
        out = str(tmp_path / "sweep.csv")
        written = emit_tables(reports, "csv", out)
        assert len(written) == 2
        with open(written[1]) as fh:
            rows = list(csv.DictReader(fh))
        assert [float(r["sweep"]) for r in rows] == [1.0, math.e]
        # the reference column carries the certified level
        assert float(rows[0]["certified_alpha"]) == pytest.approx(reports[0].alpha)

    def test_row_uses_stable_columns(self):
        row = report_row(self._reports(1)[0])
        assert list(row.keys()) == CSV_COLUMNS

    def test_emission_is_byte_identical_across_reruns(self, tmp_path):
        paths = []
        for i in range(2):
            config = ExperimentConfig(sources=(GEN_SPEC,), algorithm="batched",
                                      with_benchmark=True)
            reports = run_experiment(config).reports
            path = str(tmp_path / f"run{i}.json")
            emit_tables(reports, "json", path)
            paths.append(path)
        with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
            assert a.read() == b.read()


class TestResolveSource:
    def test_unknown_family(self):
        with pytest.raises(ValueError):
            resolve_source({"family": "nope"})

    def test_generator_label_deterministic(self):
        label1, _ = resolve_source(GEN_SPEC)
        label2, _ = resolve_source(GEN_SPEC)
        assert label1 == label2
        assert label1.startswith("random(")


class TestCli:
    def _gen(self, tmp_path, **over):
        path = str(tmp_path / "inst.json")
        params = {"num_agents": 3, "batch_size": 2, "num_rounds": 15,
                  "budget": 2.0, "seed": 4}
        params.update(over)
        code = cli_main(["gen", "--family", "random",
                         "--params", json.dumps(params), "--out", path])
        assert code == 0
        return path

    def test_gen_run_eval_round_trip(self, tmp_path):
        inst = self._gen(tmp_path)
        report = str(tmp_path / "report.json")
        assert cli_main(["run", "--instance", inst, "--algo", "batched",
                         "--out", report, "--no-benchmark"]) == 0
        rows = str(tmp_path / "rows.csv")
        assert cli_main(["eval", "--instance", inst, "--report", report,
                         "--out", rows]) == 0
        with open(rows) as fh:
            row = next(csv.DictReader(fh))
        with open(report) as fh:
            stored = json.load(fh)
        assert float(row["pf"]) == pytest.approx(stored["pf"])

    def test_run_with_prediction_spec(self, tmp_path):
        inst = self._gen(tmp_path)
        out = str(tmp_path / "run.csv")
        assert cli_main(["run", "--instance", inst, "--algo", "batched",
                         "--pred", "mode=worst_under,c=1,d=2.5",
                         "--format", "csv", "--out", out, "--no-benchmark"]) == 0
        with open(out) as fh:
            row = next(csv.DictReader(fh))
        assert row["algorithm"] == "batched"

    def test_suite_exit_code(self, tmp_path):
        out = str(tmp_path / "suite.json")
        assert cli_main(["suite", "--family", "binary",
                         "--params", '{"n": 4}', "--out", out]) == 0
        with open(out) as fh:
            assert json.load(fh)["passed"]

    def test_bench_self_check(self, tmp_path):
        inst = self._gen(tmp_path)
        out = str(tmp_path / "bench.json")
        assert cli_main(["bench", "--instance", inst, "--out", out]) == 0
        with open(out) as fh:
            payload = json.load(fh)
        assert payload["pf_self_check"] <= 1 + 1e-4

    def test_run_binary_instance(self, tmp_path):
        inst = self._gen(tmp_path, batch_size=1, budget=1.0,
                         distribution="binary", p=0.5)
        report = str(tmp_path / "rb.json")
        assert cli_main(["run", "--instance", inst, "--algo", "binary",
                         "--out", report, "--no-benchmark"]) == 0

    def test_gen_adversarial_families(self, tmp_path):
        cases = [
            ("binary_lower_bound", {"num_agents": 4, "k": 2}, 36),
            ("geometric", {"num_rounds": 5, "t_stop": 3, "m": 100.0}, 5),
            ("prediction_hardness", {"budget": 1, "t_prime": 3, "k": 1}, 5),
        ]
        from fairstream.model import load_instance
        for family, params, rounds in cases:
            out = str(tmp_path / f"{family}.json")
            assert cli_main(["gen", "--family", family,
                             "--params", json.dumps(params), "--out", out]) == 0
            assert load_instance(out).num_rounds == rounds
