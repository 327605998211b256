import json
import os

import pytest

from platoon.cli import EXIT_OK, EXIT_USAGE, build_parser, main


def _reports(out):
    return sorted(os.listdir(os.path.join(out, "reports")))


def test_bounds_writes_report(tmp_path):
    out = str(tmp_path)
    assert main(["bounds", "--out", out, "--scenario", "E1"]) == EXIT_OK
    assert _reports(out) == ["bounds_E1_seed0.json"]
    with open(os.path.join(out, "reports", "bounds_E1_seed0.json"), encoding="utf-8") as f:
        report = json.load(f)
    assert report["bounds"]["rho_t"] == 0
    assert report["bounds"]["rho_t_stated"] == 0
    assert report["config"]["global"]["delta1"] == "auto"
    if not report["bounds"]["bounded"]:
        assert report["blended_horizon"] is None


def test_mpc_with_newell_trajectory(tmp_path):
    out = str(tmp_path)
    argv = ["mpc", "--out", out, "--n", "1", "--horizon", "5", "--steps", "5", "--hdv-mode", "trajectory"]
    assert main(argv) == EXIT_OK
    with open(os.path.join(out, "reports", "mpc_EN_seed0.json"), encoding="utf-8") as f:
        report = json.load(f)
    assert report["scenario"]["hdv_mode"] == "trajectory"
    assert report["config"]["experiment"]["hdv_mode"] == "trajectory"
    assert report["horizon"] == 5


def test_plan_then_plot(tmp_path):
    out = str(tmp_path)
    assert main(["plan", "--out", out, "--strategy", "s1", "--scenario", "EE1"]) == EXIT_OK
    trace = os.path.join(out, "traces", "plan_s1_EE1_seed0.csv")
    assert os.path.exists(trace)
    assert main(["plot", trace, "--out", out]) == EXIT_OK
    assert any(name.startswith("plan_s1_EE1_seed0_") for name in os.listdir(os.path.join(out, "plots")))


def test_verify_lemma2(tmp_path):
    out = str(tmp_path)
    assert main(["verify", "lemma2", "--samples", "3", "--out", out]) == EXIT_OK
    assert _reports(out) == ["verify_lemma2_seed0.json"]


@pytest.mark.parametrize(
    "extra",
    [
        ["--config", "does-not-exist.json"],
        ["--delta2", "-1"],
    ],
)
def test_config_errors_exit_with_usage_code(tmp_path, extra):
    assert main(["bounds", "--out", str(tmp_path)] + extra) == EXIT_USAGE


def test_plot_rejects_trace_without_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("step,vehicle_id\n0,0\n")
    assert main(["plot", str(path), "--out", str(tmp_path)]) == EXIT_USAGE


def test_parser_rejects_bad_delta1():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["bounds", "--delta1", "wide"])
    args = build_parser().parse_args(["bounds", "--delta1", "auto"])
    assert args.delta1 == "auto"
    with pytest.raises(SystemExit):
        build_parser().parse_args(["mpc", "--hdv-mode", "sine"])
