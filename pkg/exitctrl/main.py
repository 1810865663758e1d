"""Command line front end"""
import argparse
import logging
import sys
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from exitctrl import __version__
from exitctrl.bsde import estimate_value, solve_bsde
from exitctrl.exceptions import ConfigError, ExitCtrlError
from exitctrl.hjb import solve_hjb
from exitctrl.paths import Policy, simulate
from exitctrl.report import emit_report, render_text
from exitctrl.schemas import RunConfig, RunManifest, validate_document
from exitctrl.settings import log_level, thread_cap
from exitctrl.utils.io import content_digest, read_json, write_frame, write_json
from exitctrl.verify import CheckContext, run_suite, suite_failed

logger = logging.getLogger("exitctrl")

COMMANDS = ("simulate", "cost", "value", "hjb", "verify", "xval", "report")


def parse_vector(text: str, path: str) -> List[float]:
    """'0.1,-0.2' -> [0.1, -0.2]"""
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"not a comma separated number list: {text!r}", path) from exc


def _parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="exitctrl", description="Exit-time stochastic control toolkit")
    parser.add_argument("--version", action="version", version=f"exitctrl {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command)
        if command == "report":
            sub.add_argument("--out", type=Path, required=True, help="Run directory to merge")
            continue
        sub.add_argument("--config", type=Path, required=True, help="Run configuration or problem document")
        sub.add_argument("--out", type=Path, default=Path("runs") / command)
        sub.add_argument("--seed", type=int)
        sub.add_argument("--x0", help="Comma separated starting point")
        sub.add_argument("--paths", type=int)
        sub.add_argument("--dt", type=float)
        sub.add_argument("--grid", help="Nodes per axis, N or N,N")
        if command == "verify":
            sub.add_argument("--suite", help="'all' or comma separated check names")
    return parser.parse_args(argv)


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Read the configuration document and apply command line overrides"""
    doc = read_json(args.config)
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object", "$")
    if "catalog" in doc or "dimension" in doc:
        doc = {"problem": doc}
    doc = dict(doc)

    simulation = dict(doc.get("simulation") or {})
    if args.seed is not None:
        simulation["master_seed"] = args.seed
    if args.paths is not None:
        simulation["n_paths"] = args.paths
    if args.dt is not None:
        simulation["dt"] = args.dt
    doc["simulation"] = simulation
    if args.grid is not None:
        grid = dict(doc.get("grid") or {})
        grid["nodes"] = [int(n) for n in parse_vector(args.grid, "--grid")]
        doc["grid"] = grid
    if args.x0 is not None:
        doc["x0"] = parse_vector(args.x0, "--x0")
    return validate_document(RunConfig, doc)


class Run:
    """Output directory bookkeeping: artifacts and per-stage wall-clock"""

    def __init__(self, command: str, out: Path, config: RunConfig):
        self.command = command
        self.out = out
        self.config = config
        self.artifacts: List[str] = []
        self.stage_seconds: Dict[str, float] = {}
        self.started = datetime.now(timezone.utc)
        out.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stage_seconds[name] = time.perf_counter() - start
            logger.debug("stage %s took %.3fs", name, self.stage_seconds[name])

    def json(self, name: str, doc: Any) -> None:
        write_json(self.out / name, doc)
        self.artifacts.append(name)

    def frame(self, name: str, frame) -> None:
        write_frame(self.out / name, frame)
        self.artifacts.append(name)

    def text(self, name: str, text: str) -> None:
        (self.out / name).write_text(text, encoding="utf-8")
        self.artifacts.append(name)

    def finish(self) -> RunManifest:
        inputs = {"command": self.command, "config": self.config.model_dump(mode="json"), "version": __version__}
        self.json("metadata.json", {
            "started": self.started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
            "threads": thread_cap(),
        })
        manifest = RunManifest(
            command=self.command,
            digest=content_digest(inputs),
            master_seed=self.config.simulation.master_seed,
            artifacts=list(self.artifacts),
            stage_seconds=self.stage_seconds,
            version=__version__,
            inputs=inputs,
        )
        write_json(self.out / "manifest.json", manifest.model_dump(mode="json"))
        return manifest


def _simulate(run: Run, ctx: CheckContext) -> int:
    with run.stage("simulate"):
        bundle = simulate(ctx.problem, Policy.constant(ctx.problem.controls, 0), ctx.x0, ctx.sim)
    run.frame("exits.csv", bundle.exit_frame())
    run.json("summary.json", bundle.summary())
    return 0


def _cost(run: Run, ctx: CheckContext) -> int:
    policy = Policy.constant(ctx.problem.controls, 0)
    with run.stage("simulate"):
        bundle = simulate(ctx.problem, policy, ctx.x0, ctx.sim)
    with run.stage("bsde"):
        solution = solve_bsde(ctx.problem, bundle, config=ctx.regression)
    if ctx.config.output.detail:
        run.frame("solution.csv", solution.solution_frame())
    run.json("summary.json", {"cost": solution.estimate(policy.label).to_doc(), "bsde": solution.summary()})
    return 0


def _value(run: Run, ctx: CheckContext) -> int:
    field = None
    if ctx.problem.d <= 2:
        with run.stage("hjb"):
            field = solve_hjb(ctx.problem, ctx.grid)
    with run.stage("value"):
        estimate = estimate_value(ctx.problem, ctx.x0, sim=ctx.sim, config=ctx.regression, value_field=field)
    run.json("summary.json", {"x0": ctx.x0.tolist(), **estimate.to_doc()})
    return 0


def _hjb(run: Run, ctx: CheckContext) -> int:
    with run.stage("hjb"):
        field = solve_hjb(ctx.problem, ctx.grid)
    run.frame("value_field.csv", field.frame())
    run.json("summary.json", field.summary())
    return 0


def _checks(run: Run, ctx: CheckContext, names: Optional[List[str]]) -> int:
    with run.stage(run.command):
        reports = run_suite(ctx, names)
    docs = [r.model_dump(mode="json") for r in reports]
    run.json("report.json", docs)
    run.text("report.txt", render_text(reports, f"exitctrl {run.command}"))
    run.json("summary.json", {
        "checks": [{"name": r.name, "status": r.status, "measured": r.measured} for r in reports],
        "failed": suite_failed(reports),
    })
    return 1 if suite_failed(reports) else 0


def run_command(args: argparse.Namespace) -> int:
    if args.command == "report":
        written = emit_report(args.out)
        for path in written.values():
            logger.info("wrote %s", path)
        return 0

    config = load_run_config(args)
    ctx = CheckContext.from_config(config)
    run = Run(args.command, args.out, config)
    if args.command == "simulate":
        code = _simulate(run, ctx)
    elif args.command == "cost":
        code = _cost(run, ctx)
    elif args.command == "value":
        code = _value(run, ctx)
    elif args.command == "hjb":
        code = _hjb(run, ctx)
    elif args.command == "verify":
        suite = parse_suite(args.suite) if args.suite else config.verify.checks
        code = _checks(run, ctx, suite)
    else:
        code = _checks(run, ctx, ["xval"])
    run.finish()
    return code


def parse_suite(text: str) -> List[str]:
    return [name.strip() for name in text.split(",") if name.strip()]


def main(argv: Optional[List[str]] = None) -> int:
    """Console entry; returns the process exit code"""
    logging.basicConfig(level=log_level(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = _parse_args(argv)
    try:
        return run_command(args)
    except ExitCtrlError as exc:
        logger.error("%s", exc.detail)
        print(f"error: {exc.detail}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
