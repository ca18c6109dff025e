import json
import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner

from apps.cli.esclab import cli, main, parse_floats, parse_points
from packages.core.engine import ExperimentEngine
from packages.core.errors import ConfigError

EXPERIMENTS = Path(__file__).resolve().parent.parent / "experiments"

QUARTIC_AVERAGE = ["--algo", "gesc-average", "--cost", "quartic2d", "--rates", "1,3",
                   "--ramp", "12,1", "--a", "0.1"]


@pytest.fixture
def runner():
    return CliRunner()


def invoke_json(runner, args):
    result = runner.invoke(cli, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return json.loads(result.output)


def test_parsers():
    assert parse_floats("1, 2.5") == [1.0, 2.5]
    assert parse_points("1,1;2,0") == [[1.0, 1.0], [2.0, 0.0]]
    assert parse_floats(None) is None
    with pytest.raises(ConfigError):
        parse_points("1,1;2")


def test_list_algorithms(runner):
    data = invoke_json(runner, ["list-algorithms"])
    assert len(data["algorithms"]) == 9
    assert set(data["costs"]) == {"quartic2d", "quadratic", "sphere"}


def test_validate_dither(runner):
    data = invoke_json(runner, ["validate-dither", "--rates", "5,7,11", "--order", "second"])
    assert data["valid"]


def test_linearize_skewed_average(runner):
    data = invoke_json(runner, ["linearize", *QUARTIC_AVERAGE, "--at", "0,0"])
    assert data["unstable"]
    assert data["jacobian"][0][0] == pytest.approx(-0.01 * 834 / 145, rel=1e-4)


def test_spectrum_of_a_matrix(runner):
    data = invoke_json(runner, ["spectrum", "--matrix", "[[0, 1], [-2, -3]]"])
    assert [v["re"] for v in data["eigenvalues"]] == pytest.approx([-1.0, -2.0])
    assert not data["unstable"]


def test_simulate_streams_csv_without_output(runner):
    result = runner.invoke(cli, ["simulate", "--algo", "gesc-model-based", "--cost", "quartic2d",
                                 "--x0", "1,1", "--T", "0.5"], catch_exceptions=False)
    assert result.exit_code == 0
    lines = result.output.splitlines()
    assert lines[0] == "t,x1,x2"
    assert float(lines[-1].split(",")[0]) == pytest.approx(0.5)


def test_simulate_writes_csv_and_prints_summary(runner, tmp_path):
    target = tmp_path / "traj.csv"
    data = invoke_json(runner, ["simulate", "--algo", "gesc", "--cost", "quartic2d",
                                "--rates", "1,3", "--ramp", "1,1", "--a", "0.1", "--omega", "20",
                                "--x0", "0.5,0.5", "--T", "0.2", "-o", str(target)])
    assert target.read_text().startswith("t,x1,x2\n")
    assert data["t_end"] == pytest.approx(0.2)
    assert data["algorithm"] == "gesc"


def test_config_file_supplies_the_default_system(runner, tmp_path):
    config = tmp_path / "esclab.yaml"
    config.write_text("seed: 7\nsystem:\n  algo: gesc-model-based\n  cost: {id: sphere, dim: 3}\n")
    data = invoke_json(runner, ["--config", str(config), "growth-bounds"])
    assert data["degree"] == 2
    assert data["b1"] == pytest.approx(1.0, rel=1e-6)
    assert "gamma_per_unit_a" not in data


def test_plot_writes_svg(runner, tmp_path):
    target = tmp_path / "stream.svg"
    data = invoke_json(runner, ["plot", *QUARTIC_AVERAGE, "-o", str(target)])
    assert data["style"] == "stream"
    assert target.read_text().lstrip().startswith("<?xml")


def test_run_executes_an_experiment(tmp_path, capsys):
    target = tmp_path / "newton_quadratic.yaml"
    shutil.copy(EXPERIMENTS / "newton_quadratic.yaml", target)
    assert main(["run", str(target)]) == 0
    results = json.loads(capsys.readouterr().out)
    assert set(results) == {"direct", "log", "admissible"}
    assert (tmp_path / "out" / "nesc_log.csv").exists()


def test_main_maps_validation_errors_to_exit_code_1(capsys):
    assert main(["validate-dither", "--rates", "1,2"]) == 1
    error = json.loads(capsys.readouterr().err)
    assert error["error"] == "dither_error"


def test_main_maps_unknown_algorithms_to_exit_code_1(capsys):
    assert main(["linearize", "--algo", "nope", "--cost", "quartic2d"]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "config_error"


def test_main_maps_usage_errors_to_exit_code_1(capsys):
    assert main(["simulate", "--x0", "1,1"]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "usage_error"


def test_main_maps_divergence_to_exit_code_2(capsys):
    code = main(["simulate", "--algo", "gesc-model-based", "--cost", "quartic2d",
                 "--x0", "10,10", "--T", "5", "--step", "1.0"])
    assert code == 2
    error = json.loads(capsys.readouterr().err)
    assert error["error"] == "divergence"
    assert "time" in error["details"]


RAGGED_Q = ["average", "--algo", "gesc-average", "--cost", "quadratic", "--Q", "[[1, 0], [0]]",
            "--rates", "1,4", "--at", "0,0"]
RAGGED_X0 = ["sweep-a", *QUARTIC_AVERAGE, "--amplitudes", "0.1", "--x0", "1,1;2"]


@pytest.mark.parametrize("argv, code, error", [
    (["validate-dither", "--rates", "1,2"], 1, "dither_error"),
    (["linearize", "--algo", "nope", "--cost", "quartic2d"], 1, "config_error"),
    (["simulate", "--x0", "1,1"], 1, "usage_error"),
    (["run", "does-not-exist.yaml"], 1, "usage_error"),
    (RAGGED_Q, 1, "cost_error"),
    (RAGGED_X0, 1, "config_error"),
    (["spectrum", "--matrix", "[[1, 2], [3]]"], 1, "config_error"),
    (["spectrum", "--matrix", "not json"], 1, "config_error"),
    (["certify", *QUARTIC_AVERAGE, "--c1", "1", "--c2", "-1", "--amplitudes", "0.1",
      "--omegas", "1"], 1, "stability_error"),
    (["simulate", "--algo", "gesc-model-based", "--cost", "quartic2d", "--x0", "10,10",
      "--T", "5", "--step", "1.0"], 2, "divergence"),
])
def test_every_failure_prints_one_json_error(capsys, argv, code, error):
    assert main(argv) == code
    captured = capsys.readouterr()
    payload = json.loads(captured.err)
    assert set(payload) == {"error", "message", "details"}
    assert payload["error"] == error
    assert payload["message"]
    assert captured.out == ""


def test_ragged_experiment_inputs_are_config_errors(tmp_path, capsys):
    experiment = tmp_path / "ragged.yaml"
    experiment.write_text(
        "id: ragged\n"
        "system: {algo: gesc-average, cost: quartic2d, dither: {rates: [1, 3], a: 0.1}}\n"
        "steps:\n"
        "  - {id: sweep, action: sweep, inputs: {amplitudes: [0.1], x0: [[1.0, 1.0], [2.0]]}}\n"
    )
    assert main(["run", str(experiment)]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "config_error"


def test_unwritable_output_is_an_io_error(tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    code = main(["linearize", *QUARTIC_AVERAGE, "--at", "0,0", "-o", str(blocker / "lin.json")])
    assert code == 2
    assert json.loads(capsys.readouterr().err)["error"] == "io_error"


def test_unexpected_failures_still_print_json(monkeypatch, capsys):
    def explode(self, config):
        raise RuntimeError("boom")

    monkeypatch.setattr(ExperimentEngine, "execute", explode)
    assert main(["linearize", *QUARTIC_AVERAGE, "--at", "0,0"]) == 2
    payload = json.loads(capsys.readouterr().err)
    assert payload == {"error": "internal_error", "message": "boom", "details": {}}


def test_reruns_write_identical_bytes(runner, tmp_path):
    first_json, second_json = tmp_path / "a.json", tmp_path / "b.json"
    for target in (first_json, second_json):
        invoke_json(runner, ["sweep-a", *QUARTIC_AVERAGE, "--amplitudes", "1,0.5",
                             "--x0", "1,0;0,1", "--horizon", "2", "-o", str(target)])
    assert first_json.read_bytes() == second_json.read_bytes()

    first_csv, second_csv = tmp_path / "a.csv", tmp_path / "b.csv"
    for target in (first_csv, second_csv):
        invoke_json(runner, ["simulate", "--algo", "gesc", "--cost", "quartic2d",
                             "--rates", "1,3", "--ramp", "1,1", "--a", "0.1", "--omega", "20",
                             "--x0", "0.5,0.5", "--T", "0.2", "-o", str(target)])
    assert first_csv.read_bytes() == second_csv.read_bytes()

    streamed = [
        runner.invoke(cli, ["simulate", "--algo", "gesc-model-based", "--cost", "quartic2d",
                            "--x0", "1,1", "--T", "0.5"], catch_exceptions=False).output
        for _ in range(2)
    ]
    assert streamed[0] == streamed[1]


def test_jobs_flag_reaches_the_sweep(runner):
    args = ["sweep-a", *QUARTIC_AVERAGE, "--amplitudes", "1,0.5", "--x0", "1,0", "--horizon", "2"]
    serial = invoke_json(runner, args)
    parallel = invoke_json(runner, ["--jobs", "2", *args])
    assert parallel == serial
