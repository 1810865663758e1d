"""Tests for the command line front end"""
import pandas as pd
import pytest

from exitctrl.exceptions import ConfigError
from exitctrl.main import main, parse_vector
from exitctrl.utils.io import read_json

SMALL_SIM = {"dt": 0.01, "t_max": 10.0, "n_paths": 200, "master_seed": 3}


@pytest.fixture(autouse=True)
def in_memory_registry(monkeypatch):
    monkeypatch.setenv("EXITCTRL_DATABASE_URL", "sqlite://")


def run_doc(catalog="poisson1d", **sections):
    doc = {"problem": {"catalog": catalog}, "simulation": SMALL_SIM, "grid": {"nodes": [41]}}
    doc.update(sections)
    return doc


def test_parse_vector():
    """Test comma separated vectors"""
    assert parse_vector("0.1, -0.2,", "--x0") == [0.1, -0.2]
    with pytest.raises(ConfigError) as exc:
        parse_vector("a,b", "--x0")
    assert exc.value.path == "--x0"


def test_hjb_writes_artifacts(write_config, tmp_path):
    """Test the hjb command and its manifest"""
    out = tmp_path / "hjb"
    code = main(["hjb", "--config", str(write_config(run_doc())), "--out", str(out), "--grid", "21"])
    assert code == 0
    manifest = read_json(out / "manifest.json")
    assert manifest["command"] == "hjb"
    assert manifest["artifacts"] == ["value_field.csv", "summary.json", "metadata.json"]
    assert "hjb" in manifest["stage_seconds"]
    assert len(pd.read_csv(out / "value_field.csv")) == 21


def test_bare_problem_document(write_config, tmp_path):
    """Test that a problem document is accepted as a run configuration"""
    path = write_config({"catalog": "semilinear1d", "params": {"alpha": 1.0}})
    assert main(["hjb", "--config", str(path), "--out", str(tmp_path / "out"), "--grid", "21"]) == 0


def test_simulate_exports_exits(write_config, tmp_path):
    """Test one exit row per path"""
    out = tmp_path / "sim"
    code = main(["simulate", "--config", str(write_config(run_doc())), "--out", str(out), "--paths", "50"])
    assert code == 0
    frame = pd.read_csv(out / "exits.csv")
    assert len(frame) == 50
    assert list(frame.columns) == ["path_id", "exit_step", "tau", "censored", "exit_point_0"]
    assert read_json(out / "summary.json")


def test_identical_runs_share_digest(write_config, tmp_path):
    """Test reproducibility of the digest and the exported paths"""
    config = str(write_config(run_doc()))
    for name in ("first", "second"):
        assert main(["simulate", "--config", config, "--out", str(tmp_path / name), "--seed", "99"]) == 0
    first = read_json(tmp_path / "first" / "manifest.json")
    second = read_json(tmp_path / "second" / "manifest.json")
    assert first["digest"] == second["digest"]
    assert first["master_seed"] == 99
    assert (tmp_path / "first" / "exits.csv").read_bytes() == (tmp_path / "second" / "exits.csv").read_bytes()
    assert (tmp_path / "first" / "summary.json").read_bytes() == (tmp_path / "second" / "summary.json").read_bytes()


def test_cost_summary_ignores_thread_setting(write_config, tmp_path, monkeypatch):
    """Test byte-identical cost summaries under different worker caps"""
    config = str(write_config(run_doc()))
    for name, threads in (("serial", "1"), ("pooled", "4")):
        monkeypatch.setenv("EXITCTRL_THREADS", threads)
        assert main(["cost", "--config", config, "--out", str(tmp_path / name), "--paths", "1500"]) == 0
    serial = (tmp_path / "serial" / "summary.json").read_bytes()
    assert serial == (tmp_path / "pooled" / "summary.json").read_bytes()
    assert read_json(tmp_path / "serial" / "summary.json")["cost"]["n_paths"] == 1500


def test_seed_changes_digest(write_config, tmp_path):
    """Test that the master seed is part of the digest"""
    config = str(write_config(run_doc()))
    main(["hjb", "--config", config, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["hjb", "--config", config, "--out", str(tmp_path / "b"), "--seed", "2"])
    assert read_json(tmp_path / "a" / "manifest.json")["digest"] != read_json(tmp_path / "b" / "manifest.json")["digest"]


@pytest.mark.parametrize(
    "doc, extra",
    [
        ({"problem": {"catalog": "heat2d"}}, []),
        ({"problem": {"catalog": "poisson1d"}, "simulation": {"dt": 1.0, "t_max": 0.5}}, []),
        (run_doc(), ["--x0", "2.0"]),
        (run_doc(), ["--x0", "a,b"]),
        ({"problem": {"catalog": "poisson1d", "params": {"kappa": 1.0}}}, []),
    ],
)
def test_config_errors_exit_2(write_config, tmp_path, capsys, doc, extra):
    """Test exit code 2 and the error line on stderr"""
    code = main(["simulate", "--config", str(write_config(doc)), "--out", str(tmp_path / "out"), *extra])
    assert code == 2
    err = capsys.readouterr().err
    assert any(line.startswith("error: ") for line in err.splitlines())


def test_missing_config_file(tmp_path, capsys):
    """Test that a missing file is a configuration error"""
    assert main(["cost", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "out")]) == 2
    assert "file not found" in capsys.readouterr().err


def test_verify_failure_exit_1(write_config, tmp_path):
    """Test that a failed check gives exit code 1"""
    doc = run_doc(verify={"checks": ["comparison"], "invert_expectation": True, "comparison_pairs": 2})
    out = tmp_path / "verify"
    assert main(["verify", "--config", str(write_config(doc)), "--out", str(out)]) == 1
    reports = read_json(out / "report.json")
    assert [r["status"] for r in reports] == ["fail"]
    assert read_json(out / "summary.json")["failed"] is True
    assert "0 passed, 1 failed, 0 skipped" in (out / "report.txt").read_text()


def test_verify_skipped_check_exit_0(write_config, tmp_path):
    """Test that a refused check is reported as skipped"""
    out = tmp_path / "verify"
    code = main(["verify", "--config", str(write_config(run_doc("controlled1d"))), "--out", str(out),
                 "--suite", "moments"])
    assert code == 0
    (report,) = read_json(out / "report.json")
    assert report["name"] == "moments"
    assert report["status"] == "skipped"
    assert report["reason"]


def test_report_merges_runs(write_config, tmp_path):
    """Test the report command over two verify runs"""
    doc = run_doc(verify={"checks": ["comparison"], "comparison_pairs": 2})
    config = str(write_config(doc))
    assert main(["verify", "--config", config, "--out", str(tmp_path / "runs" / "one")]) == 0
    assert main(["verify", "--config", config, "--out", str(tmp_path / "runs" / "two")]) == 0

    assert main(["report", "--out", str(tmp_path / "runs")]) == 0
    merged = read_json(tmp_path / "runs" / "merged_report.json")
    assert [run["duplicate"] for run in merged["runs"]] == [False, True]
    assert [r["name"] for r in merged["reports"]] == ["comparison"]
