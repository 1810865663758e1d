"""Report rendering and merging of run directories"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd
from jinja2 import Environment, FileSystemLoader
from sqlmodel import select

from exitctrl.database import get_session, init_db, make_engine
from exitctrl.exceptions import ConfigError
from exitctrl.models import CheckRecord, RunRecord
from exitctrl.schemas import CheckReport, RunManifest, validate_document
from exitctrl.utils.io import read_json, write_frame, write_json

logger = logging.getLogger(__name__)

# Get base directory
BASE_DIR = Path(__file__).resolve().parent.parent
TEMPLATES_DIR = BASE_DIR / "templates"

SECTION5_COLUMNS = ["epsilon", "gap12", "gap34", "stderr12", "stderr34"]
HOLDER_COLUMNS = ["separation", "du"]


def render_text(reports: Sequence[Union[CheckReport, Dict[str, Any]]], title: str = "exitctrl report") -> str:
    """Human-readable table of check reports"""
    env = Environment(loader=FileSystemLoader(str(TEMPLATES_DIR)), trim_blocks=True, lstrip_blocks=True,
                      keep_trailing_newline=True)
    rows = [r.model_dump() if isinstance(r, CheckReport) else dict(r) for r in reports]
    counts = {status: sum(1 for r in rows if r["status"] == status) for status in ("pass", "fail", "skipped")}
    return env.get_template("report.txt.j2").render(title=title, reports=rows, counts=counts)


def find_manifests(run_dir: Path) -> List[Path]:
    found = sorted(run_dir.glob("*/manifest.json"))
    if (run_dir / "manifest.json").is_file():
        found.insert(0, run_dir / "manifest.json")
    if not found:
        raise ConfigError("no manifest.json in the directory or its subdirectories", str(run_dir))
    return found


def load_reports(directory: Path) -> List[Dict[str, Any]]:
    path = directory / "report.json"
    if not path.is_file():
        return []
    docs = read_json(path)
    for i, doc in enumerate(docs):
        validate_document(CheckReport, doc, f"{path}[{i}]")
    return docs


def ingest_manifest(session, path: Path) -> RunRecord:
    """Add one run (and its check rows) to the registry; existing manifests are returned unchanged"""
    key = str(path.resolve())
    existing = session.exec(select(RunRecord).where(RunRecord.manifest_path == key)).first()
    if existing:
        return existing
    manifest = validate_document(RunManifest, read_json(path), str(path))
    first = session.exec(
        select(RunRecord).where(RunRecord.digest == manifest.digest).order_by(RunRecord.id)
    ).first()
    record = RunRecord(
        manifest_path=key,
        run_dir=str(path.parent.resolve()),
        command=manifest.command,
        digest=manifest.digest,
        master_seed=str(manifest.master_seed),
        version=manifest.version,
        duplicate_of=first.id if first else None,
    )
    session.add(record)
    session.flush()
    for position, doc in enumerate(load_reports(path.parent)):
        report = CheckReport.model_validate(doc)
        session.add(CheckRecord(run_id=record.id, position=position, name=report.name, status=report.status,
                                measured=report.measured, tolerance=report.tolerance, margin=report.margin))
    return record


def _table(reports: List[Dict[str, Any]], name: str, key: str, columns: List[str], run: str) -> List[Dict[str, Any]]:
    rows = []
    for doc in reports:
        if doc["name"] != name:
            continue
        for row in doc.get("details", {}).get(key, []):
            rows.append({**{c: row.get(c) for c in columns}, "run": run})
    return rows


def emit_report(run_dir: Union[str, Path], url: Optional[str] = None) -> Dict[str, Path]:
    """
    Merge the reports of every run under `run_dir`.

    Runs are ordered by digest; a run whose digest was already merged is
    listed with duplicate set and contributes no reports. Rewriting is
    idempotent.

    Args:
        run_dir: Directory holding manifest.json and/or */manifest.json
        url: Registry database URL (default EXITCTRL_DATABASE_URL)

    Returns:
        Written artifact paths by name
    """
    run_dir = Path(run_dir)
    manifests = find_manifests(run_dir)
    engine = make_engine(url)
    init_db(engine)

    with get_session(engine) as session:
        for path in manifests:
            ingest_manifest(session, path)
        keys = [str(p.resolve()) for p in manifests]
        records = session.exec(
            select(RunRecord).where(RunRecord.manifest_path.in_(keys)).order_by(RunRecord.digest, RunRecord.manifest_path)
        ).all()
        runs = [(r.run_dir, r.command, r.digest, r.master_seed) for r in records]

    seen = set()
    entries, merged, section5, holder = [], [], [], []
    for directory, command, digest, seed in runs:
        rel = Path(directory).relative_to(run_dir.resolve()).as_posix() or "."
        duplicate = digest in seen
        seen.add(digest)
        entry = {"run": rel, "command": command, "digest": digest, "master_seed": seed, "duplicate": duplicate}
        if not duplicate:
            reports = load_reports(Path(directory))
            entry["reports"] = [doc["name"] for doc in reports]
            merged.extend(reports)
            section5.extend(_table(reports, "section5", "rows", SECTION5_COLUMNS, rel))
            holder.extend(_table(reports, "holder", "pairs", HOLDER_COLUMNS, rel))
        else:
            logger.info("run %s duplicates digest %s", rel, digest[:12])
        entries.append(entry)

    written = {"merged_report.json": write_json(run_dir / "merged_report.json", {"runs": entries, "reports": merged})}
    if merged:
        text = render_text([CheckReport.model_validate(doc) for doc in merged], "merged report")
        written["merged_report.txt"] = run_dir / "merged_report.txt"
        written["merged_report.txt"].write_text(text, encoding="utf-8")
    if section5:
        written["section5_table.csv"] = write_frame(run_dir / "section5_table.csv",
                                                    pd.DataFrame(section5, columns=SECTION5_COLUMNS + ["run"]))
    if holder:
        written["holder_table.csv"] = write_frame(run_dir / "holder_table.csv",
                                                  pd.DataFrame(holder, columns=HOLDER_COLUMNS + ["run"]))
    return written
