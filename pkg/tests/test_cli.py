import json

import pytest

from cli import EXIT_ERROR, EXIT_HOLD, EXIT_UNKNOWN, EXIT_VIOLATED, exit_code, main
from models.network import load_network
from models.verification import Status


def scenario_data(**params):
    base = {"branches": 4, "precondition_attempts": 1, "v_y": 50.0, "a_y": 100.0}
    base.update(params)
    return {"kind": "domain_shift", "horizon": 3, "network": {"depth": 2, "width": 8}, "params": base}


@pytest.fixture
def steady_file(write_scenario):
    return write_scenario(scenario_data())


class TestExitCodes:
    @pytest.mark.parametrize("statuses, expected", [
        ([Status.HOLD, Status.HOLD], EXIT_HOLD),
        ([Status.HOLD, Status.UNKNOWN], EXIT_UNKNOWN),
        ([Status.UNKNOWN, Status.VIOLATED], EXIT_VIOLATED),
        ([], EXIT_HOLD),
    ])
    def test_worst_status_wins(self, statuses, expected):
        assert exit_code(statuses) == expected


class TestCommands:
    def test_gen_network(self, tmp_path, capsys):
        path = tmp_path / "net.json"
        code = main(["gen-network", "--depth", "2", "--width", "4", "--seed", "3", "--out", str(path)])
        assert code == EXIT_HOLD
        net = load_network(path)
        assert net.architecture == [(4, 9, "relu"), (9, 4, "linear")]
        assert json.loads(capsys.readouterr().out)["file"] == str(path)

    def test_verify_once(self, steady_file, tmp_path, capsys):
        dump = tmp_path / "branches.json"
        code = main(["verify-once", "--scenario", str(steady_file), "--dump-branches", str(dump)])
        summary = json.loads(capsys.readouterr().out)
        assert code == EXIT_HOLD
        assert summary["status"] == "hold" and summary["witness"] is None
        assert len(json.loads(dump.read_text())["branches"]) == summary["n_branches"]

    def test_verify_online_holds(self, steady_file, tmp_path):
        out = tmp_path / "steps.csv"
        code = main(["verify-online", "--scenario", str(steady_file), "--accel", "bmi", "--sync", "--out", str(out)])
        assert code == EXIT_HOLD
        lines = out.read_text().splitlines()
        assert lines[0] == "t,status,wall_ms,coverage,n_reused,n_lb,n_rsr,n_inn,n_ic,n_recomputed"
        assert len(lines) == 5

    def test_verify_online_reports_violation(self, write_scenario, capsys):
        path = write_scenario(scenario_data(v_y=1e-6))
        code = main(["verify-online", "--scenario", str(path), "--accel", "bmi", "--steps", "1"])
        assert code == EXIT_VIOLATED
        witnesses = [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.startswith("{")]
        assert witnesses and all("witness" in w for w in witnesses)

    def test_bench_ablation_writes_report(self, steady_file, tmp_path):
        out = tmp_path / "ablation.csv"
        code = main(["bench-ablation", "--scenario", str(steady_file), "--accel", "bmi;bmi,lb", "--out", str(out)])
        assert code == EXIT_HOLD
        lines = out.read_text().splitlines()
        assert lines[0] == "method,mean_time_ms,mean_coverage,steps_hold,steps_unknown,steps_violated"
        assert [line.split(",")[0] for line in lines[1:]] == ["None", "BMI", "BMI+LB"]
        assert (tmp_path / "ablation_steps.csv").exists()

    def test_bench_tradeoff(self, steady_file, tmp_path):
        out = tmp_path / "tradeoff.csv"
        code = main(["bench-tradeoff", "--scenario", str(steady_file), "--knob", "rsr_offset",
                     "--values", "0.001,0.01", "--steps", "2", "--out", str(out)])
        assert code == EXIT_HOLD
        assert out.read_text().splitlines()[0] == "knob,value,method,mean_time_ms,mean_coverage"


class TestErrors:
    def test_missing_scenario(self, tmp_path, capsys):
        code = main(["verify-online", "--scenario", str(tmp_path / "absent.json")])
        assert code == EXIT_ERROR
        assert "error:" in capsys.readouterr().err

    def test_malformed_scenario(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "kind": \n}', encoding="utf-8")
        assert main(["verify-once", "--scenario", str(path)]) == EXIT_ERROR
        assert f"{path}:3" in capsys.readouterr().err

    def test_unsorted_tradeoff_values(self, steady_file):
        code = main(["bench-tradeoff", "--scenario", str(steady_file), "--knob", "rsr_offset", "--values", "0.1,0.01"])
        assert code == EXIT_ERROR

    def test_bad_arguments(self):
        assert main(["verify-once"]) == EXIT_ERROR
        assert main(["verify-online", "--scenario", "x.json", "--accel", "warp"]) == EXIT_ERROR
