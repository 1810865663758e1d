"""Tests for report rendering and run merging"""
import pandas as pd
import pytest
from sqlmodel import select

from exitctrl.exceptions import ConfigError, SchemaError
from exitctrl.models import CheckRecord, RunRecord
from exitctrl.report import emit_report, ingest_manifest, render_text
from exitctrl.schemas import CheckReport
from exitctrl.utils.io import read_json, write_json

PASS = {"name": "dpp[theta=0]", "status": "pass", "measured": 0.01, "tolerance": 0.05}
FAIL = {"name": "comparison", "status": "fail", "measured": 0.2, "tolerance": 0.0, "margin": 0.2}
SKIP = {"name": "moments", "status": "skipped", "reason": "no closed form"}
SECTION5 = {
    "name": "section5", "status": "pass", "measured": 1.9, "tolerance": 1.4,
    "details": {"rows": [
        {"epsilon": 0.1, "gap12": 0.12, "gap34": 0.05, "stderr12": 0.001, "stderr34": 0.002, "y1": 0.3},
        {"epsilon": 0.05, "gap12": 0.03, "gap34": 0.012, "stderr12": 0.001, "stderr34": 0.001, "y1": 0.1},
    ]},
}
HOLDER = {
    "name": "holder", "status": "pass", "measured": 1.0, "tolerance": 0.4,
    "details": {"pairs": [{"separation": 0.01, "du": 0.009}, {"separation": 0.1, "du": 0.08}]},
}


def make_run(directory, digest, reports, command="verify"):
    """Write a manifest and report.json the way the CLI does"""
    write_json(directory / "manifest.json", {
        "command": command,
        "digest": digest,
        "master_seed": 18446744073709551615,
        "artifacts": ["report.json"],
        "version": "1.0.0",
    })
    write_json(directory / "report.json", reports)
    return directory / "manifest.json"


def test_render_text_counts():
    """Test the summary line and skipped reasons"""
    text = render_text([CheckReport(**PASS), CheckReport(**FAIL), CheckReport(**SKIP)], "suite")
    assert text.startswith("suite\n=====\n")
    assert "no closed form" in text
    assert text.rstrip().endswith("1 passed, 1 failed, 1 skipped")


def test_emit_report_orders_and_flags_duplicates(tmp_path):
    """Test digest ordering, duplicate runs and the merged documents"""
    make_run(tmp_path / "a", "bbbb", [PASS, SECTION5])
    make_run(tmp_path / "b", "aaaa", [FAIL, HOLDER])
    make_run(tmp_path / "c", "aaaa", [SKIP])

    written = emit_report(tmp_path, url="sqlite://")

    merged = read_json(written["merged_report.json"])
    assert [r["run"] for r in merged["runs"]] == ["b", "c", "a"]
    assert [r["duplicate"] for r in merged["runs"]] == [False, True, False]
    assert "reports" not in merged["runs"][1]
    assert [r["name"] for r in merged["reports"]] == ["comparison", "holder", "dpp[theta=0]", "section5"]

    section5 = pd.read_csv(written["section5_table.csv"])
    assert list(section5.columns) == ["epsilon", "gap12", "gap34", "stderr12", "stderr34", "run"]
    assert section5["epsilon"].tolist() == [0.1, 0.05]
    assert set(section5["run"]) == {"a"}

    holder = pd.read_csv(written["holder_table.csv"])
    assert holder["du"].tolist() == [0.009, 0.08]
    assert "3 passed, 1 failed, 0 skipped" in written["merged_report.txt"].read_text()


def test_emit_report_is_idempotent(tmp_path):
    """Test that re-merging rewrites identical bytes"""
    make_run(tmp_path / "one", "abcd", [PASS, SECTION5])
    first = {name: path.read_bytes() for name, path in emit_report(tmp_path, url="sqlite://").items()}
    second = {name: path.read_bytes() for name, path in emit_report(tmp_path, url="sqlite://").items()}
    assert first == second
    assert set(first) == {"merged_report.json", "merged_report.txt", "section5_table.csv"}


def test_emit_report_single_run_directory(tmp_path):
    """Test merging a run directory that holds its own manifest"""
    make_run(tmp_path, "ffff", [], command="hjb")
    written = emit_report(tmp_path, url="sqlite://")
    merged = read_json(written["merged_report.json"])
    assert merged["runs"][0]["run"] == "."
    assert merged["reports"] == []
    assert set(written) == {"merged_report.json"}


def test_emit_report_without_manifests(tmp_path):
    """Test that an empty directory is a configuration error"""
    with pytest.raises(ConfigError):
        emit_report(tmp_path, url="sqlite://")


def test_emit_report_rejects_invalid_reports(tmp_path):
    """Test that a failed report without margin is rejected"""
    make_run(tmp_path / "bad", "abcd", [{"name": "dpp", "status": "fail"}])
    with pytest.raises(SchemaError):
        emit_report(tmp_path, url="sqlite://")


def test_ingest_manifest(registry, tmp_path):
    """Test registry rows, relationships and duplicate links"""
    first = ingest_manifest(registry, make_run(tmp_path / "a", "abcd", [PASS, FAIL, SKIP]))
    second = ingest_manifest(registry, make_run(tmp_path / "b", "abcd", [PASS]))
    registry.commit()

    assert first.master_seed == "18446744073709551615"
    checks = sorted(first.checks, key=lambda c: c.position)
    assert [c.name for c in checks] == ["dpp[theta=0]", "comparison", "moments"]
    assert second.duplicate_of == first.id
    assert first.duplicate_of is None

    skipped = registry.get(CheckRecord, checks[2].id)
    assert skipped.run.id == first.id


def test_ingest_manifest_is_idempotent(registry, tmp_path):
    """Test that a manifest is ingested once"""
    path = make_run(tmp_path / "a", "abcd", [PASS])
    first = ingest_manifest(registry, path)
    again = ingest_manifest(registry, path)
    registry.commit()

    assert again.id == first.id
    assert len(registry.exec(select(RunRecord)).all()) == 1
