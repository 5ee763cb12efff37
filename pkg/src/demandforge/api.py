"""Command-line entry points and pipeline assembly.

Subcommands:
  count      lane counts from a tracked detection stream
  calibrate  scaling bounds from count overlaps
  solve      solve a day of counts into a route schedule and route XML
  refine     run the feedback loop on top of a solved day
  report     band-violation report for a stored solution
  serve      HTTP service for the review console

Every subcommand reads and writes the plain-file formats of its module;
failures print a machine-readable {"error", "detail"} line to stderr and
exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from demandforge import emit, flowcount, netgraph, qipsolve, refine
from demandforge.counts import (SEGMENTS_PER_DAY, CalibrationBounds, CountTable,
                                SourceKind, calibrate_bounds, calibration_report,
                                chain_bounds, ingest_all, make_bands,
                                overlap_ratios)
from demandforge.netgraph import RoadNetwork, load_network
from demandforge.qipsolve import SolveConfig, SegmentProblem, solve_day

DEFAULT_ALPHA_CV = (0.94, 1.12)
DEFAULT_ALPHA_LD = (0.02, 19.06)


class ConfigError(ValueError):
    """Bad pipeline configuration."""


@dataclass
class PipelineConfig:
    network: Path
    counts: Path
    detections: Optional[Path] = None
    geometry: Optional[Path] = None
    feedback: Optional[Path] = None
    mock_script: Optional[Path] = None
    solver: SolveConfig = field(default_factory=SolveConfig)
    class_dist: Dict[str, float] = field(default_factory=lambda: {"car": 1.0})
    alpha_cv: Tuple[float, float] = DEFAULT_ALPHA_CV
    alpha_ld: Tuple[float, float] = DEFAULT_ALPHA_LD
    calibrate_from_counts: bool = False
    port: int = 8008
    seed: int = 0

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        base = Path(path).parent
        doc = json.loads(Path(path).read_text())

        def _resolve(key) -> Optional[Path]:
            value = doc.get(key)
            return (base / value) if value else None

        network = _resolve("network")
        counts_path = _resolve("counts")
        if network is None or counts_path is None:
            raise ConfigError("pipeline config needs 'network' and 'counts'")
        config = cls(
            network=network,
            counts=counts_path,
            detections=_resolve("detections"),
            geometry=_resolve("geometry"),
            feedback=_resolve("feedback"),
            mock_script=_resolve("mock_script"),
            solver=SolveConfig.from_json(doc.get("solver", {})),
            class_dist=doc.get("class_dist", {"car": 1.0}),
            alpha_cv=tuple(doc.get("alpha_cv", DEFAULT_ALPHA_CV)),
            alpha_ld=tuple(doc.get("alpha_ld", DEFAULT_ALPHA_LD)),
            calibrate_from_counts=bool(doc.get("calibrate_from_counts", False)),
            port=int(doc.get("port", 8008)),
            seed=int(doc.get("seed", 0)),
        )
        for name in ("network", "counts", "detections", "geometry",
                     "feedback", "mock_script"):
            p = getattr(config, name)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{name} file not found: {p}")
        if not 0 < config.port < 65536:
            raise ConfigError(f"invalid port {config.port}")
        return config


def build_day(network: RoadNetwork, table: CountTable,
              alpha_cv: Tuple[float, float], alpha_ld: Tuple[float, float],
              config: SolveConfig):
    """Assemble routes, incidence, bands, and the 96 segment problems."""
    routes = netgraph.enumerate_routes(network)
    incidence = netgraph.build_incidence(routes, network.counting_locations)
    cv_bounds = CalibrationBounds(alpha_cv[0], alpha_cv[1], SourceKind.CV)
    ld_bounds = CalibrationBounds(alpha_ld[0], alpha_ld[1], SourceKind.LD)
    bands_cv = make_bands(table, cv_bounds, SourceKind.CV)
    bands_ld = make_bands(table, ld_bounds, SourceKind.LD)
    nonfringe = frozenset(r.id for r in routes if not r.fringe)
    problems = []
    for t in range(SEGMENTS_PER_DAY):
        problems.append(SegmentProblem(
            incidence=incidence,
            bands_cv={j: b for (j, tt), b in bands_cv.items() if tt == t},
            bands_ld={j: b for (j, tt), b in bands_ld.items() if tt == t},
            nonfringe_ids=nonfringe,
            lambda_nonfringe=config.lambda_nonfringe,
            lambda_temporal=config.lambda_temporal,
        ))
    return routes, incidence, bands_cv, bands_ld, problems


def _alphas(args, table: CountTable) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    alpha_cv = tuple(args.alpha_cv) if args.alpha_cv else DEFAULT_ALPHA_CV
    alpha_ld = tuple(args.alpha_ld) if args.alpha_ld else DEFAULT_ALPHA_LD
    if getattr(args, "calibrate", False):
        cv = calibrate_bounds(table)
        alpha_cv = (cv.alpha_lb, cv.alpha_ub)
        if table.locations(SourceKind.LD):
            ld = chain_bounds(cv, table)
            alpha_ld = (ld.alpha_lb, ld.alpha_ub)
    return alpha_cv, alpha_ld


def _cmd_count(args) -> int:
    geom = flowcount.load_geometry(args.geometry)
    stream = flowcount.read_stream(args.stream)
    classes = (set(args.classes.split(","))
               if args.classes else flowcount.DEFAULT_VEHICLE_CLASSES)
    counter = (flowcount.count_threshold if args.method == "threshold"
               else flowcount.count_crossings)
    result = counter(stream, geom, classes)
    doc = {"lanes": {str(k): v for k, v in sorted(result.per_lane.items())},
           "total": result.total}
    _write_or_print(args.out, json.dumps(doc, indent=2))
    return 0


def _cmd_calibrate(args) -> int:
    table = ingest_all(args.counts)
    cv = calibrate_bounds(table)
    ratios = overlap_ratios(table, SourceKind.M, SourceKind.CV)
    report = calibration_report(cv, ratios)
    print(f"alpha_lb={cv.alpha_lb:.6f} alpha_ub={cv.alpha_ub:.6f}")
    if args.chain:
        ld = chain_bounds(cv, table)
        ld_ratios = overlap_ratios(table, SourceKind.CV, SourceKind.LD)
        report = {"cv": report, "ld": calibration_report(ld, ld_ratios)}
        print(f"ld_alpha_lb={ld.alpha_lb:.6f} ld_alpha_ub={ld.alpha_ub:.6f}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    return 0


def _cmd_solve(args) -> int:
    network = load_network(args.network)
    table = ingest_all(args.counts,
                       [l.id for l in network.counting_locations])
    config = (SolveConfig.from_json(Path(args.config).read_text())
              if args.config else SolveConfig())
    alpha_cv, alpha_ld = _alphas(args, table)
    routes, incidence, bands_cv, bands_ld, problems = build_day(
        network, table, alpha_cv, alpha_ld, config)
    solutions = solve_day(problems, config)
    schedules = qipsolve.distribute_day(solutions)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    class_dist = json.loads(args.class_dist) if args.class_dist else {"car": 1.0}
    (out / "routes.rou.xml").write_text(
        emit.emit_routes(schedules, routes, class_dist, config.seed))
    (out / "solution.csv").write_text(qipsolve.solutions_to_csv(solutions))
    summary = [dict(segment=t, **qipsolve.segment_summary(s, problems[t]))
               for t, s in enumerate(solutions)]
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    report = emit.diff_report(solutions, incidence, bands_cv,
                              problems[0].nonfringe_ids)
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2))
    total = report.total_vehicles
    print(f"solved {len(solutions)} segments, {total} vehicles, "
          f"fringe share {report.fringe_share:.4f}")
    return 0


def _cmd_refine(args) -> int:
    network = load_network(args.network)
    table = ingest_all(args.counts,
                       [l.id for l in network.counting_locations])
    config = (SolveConfig.from_json(Path(args.config).read_text())
              if args.config else SolveConfig())
    alpha_cv, alpha_ld = _alphas(args, table)
    routes, incidence, bands_cv, bands_ld, problems = build_day(
        network, table, alpha_cv, alpha_ld, config)
    solutions = solve_day(problems, config)
    state = refine.RefinementState(problems=problems, solutions=solutions,
                                   network=network, incidence=incidence,
                                   config=config)
    client = _make_client(args.mock_script)
    items = refine.read_feedback(args.feedback)
    state = refine.refine_loop(items, state, client,
                               max_attempts=args.max_attempts)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schedules = qipsolve.distribute_day(state.solutions)
    class_dist = json.loads(args.class_dist) if args.class_dist else {"car": 1.0}
    (out / "routes.rou.xml").write_text(
        emit.emit_routes(schedules, routes, class_dist, config.seed))
    (out / "solution.csv").write_text(qipsolve.solutions_to_csv(state.solutions))
    (out / "refinement.json").write_text(json.dumps({
        "tally": state.tally,
        "accepted": [spec.to_json() for spec in state.accepted],
    }, indent=2))
    print(f"refined with {len(state.accepted)} accepted items; "
          f"tally {state.tally}")
    return 0


def _cmd_report(args) -> int:
    network = load_network(args.network)
    table = ingest_all(args.counts,
                       [l.id for l in network.counting_locations])
    config = SolveConfig()
    alpha_cv, alpha_ld = _alphas(args, table)
    routes, incidence, bands_cv, bands_ld, problems = build_day(
        network, table, alpha_cv, alpha_ld, config)
    usages = qipsolve.usages_from_csv(Path(args.solution).read_text(),
                                      incidence.n_routes)
    solutions = []
    prev = None
    for t in range(usages.shape[0]):
        problems[t].r_prev = prev
        solutions.append(qipsolve._finish(problems[t], usages[t], "stored", 0.0))
        prev = usages[t]
    bands = bands_cv if args.source.upper() == "CV" else bands_ld
    report = emit.diff_report(solutions, incidence, bands,
                              problems[0].nonfringe_ids)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2))
    (out / "report.csv").write_text(report.to_csv())
    print(f"report written: {len(report.cells)} cells, "
          f"total vehicles {report.total_vehicles}")
    return 0


def _make_client(mock_script) -> refine.LlmClient:
    if mock_script:
        return refine.MockLlmClient.from_script_file(mock_script)
    return refine.HttpLlmClient()


def build_engine(config: PipelineConfig):
    """Load a pipeline config, solve the initial day, and wrap it for the
    HTTP service."""
    from demandforge.service import Engine

    network = load_network(config.network)
    table = ingest_all(config.counts,
                       [l.id for l in network.counting_locations])
    alpha_cv, alpha_ld = config.alpha_cv, config.alpha_ld
    if config.calibrate_from_counts:
        cv = calibrate_bounds(table)
        alpha_cv = (cv.alpha_lb, cv.alpha_ub)
        if table.locations(SourceKind.LD):
            ld = chain_bounds(cv, table)
            alpha_ld = (ld.alpha_lb, ld.alpha_ub)
    routes, incidence, bands_cv, bands_ld, problems = build_day(
        network, table, alpha_cv, alpha_ld, config.solver)
    solutions = solve_day(problems, config.solver)
    state = refine.RefinementState(problems=problems, solutions=solutions,
                                   network=network, incidence=incidence,
                                   config=config.solver)
    client = _make_client(config.mock_script)
    return Engine(state=state, bands_cv=bands_cv, bands_ld=bands_ld,
                  client=client, routes=routes, class_dist=config.class_dist,
                  seed=config.seed)


def http_serve(config: PipelineConfig, host: str = "127.0.0.1"):
    """Solve the configured day and serve it over HTTP until interrupted."""
    import uvicorn

    from demandforge.service import create_app

    engine = build_engine(config)
    app = create_app(engine)
    uvicorn.run(app, host=host, port=config.port, log_level="warning")


def _cmd_serve(args) -> int:
    http_serve(PipelineConfig.load(args.config), host=args.host)
    return 0


def _write_or_print(out: Optional[str], text: str):
    if out and out != "-":
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demandforge",
        description="Traffic demand schedules from multimodal counts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", help="lane counts from a detection stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--geometry", required=True)
    p.add_argument("--method", choices=["tracked", "threshold"],
                   default="tracked")
    p.add_argument("--classes", help="comma-separated vehicle class labels")
    p.add_argument("--out", help="output path, '-' for stdout")
    p.set_defaults(func=_cmd_count)

    p = sub.add_parser("calibrate", help="scaling bounds from count overlaps")
    p.add_argument("--counts", required=True)
    p.add_argument("--chain", action="store_true",
                   help="also chain bounds for loop detectors")
    p.add_argument("--out", help="write the calibration report JSON here")
    p.set_defaults(func=_cmd_calibrate)

    def _solver_args(p):
        p.add_argument("--network", required=True)
        p.add_argument("--counts", required=True)
        p.add_argument("--config", help="solver config JSON path")
        p.add_argument("--alpha-cv", nargs=2, type=float, metavar=("LB", "UB"))
        p.add_argument("--alpha-ld", nargs=2, type=float, metavar=("LB", "UB"))
        p.add_argument("--calibrate", action="store_true",
                       help="derive alphas from the counts file overlaps")
        p.add_argument("--class-dist", help="JSON class distribution")
        p.add_argument("--out-dir", required=True)

    p = sub.add_parser("solve", help="solve a day and emit the route XML")
    _solver_args(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("refine", help="feedback loop over a solved day")
    _solver_args(p)
    p.add_argument("--feedback", required=True)
    p.add_argument("--mock-script",
                   help="JSON-lines mock completions (omit to use the HTTP "
                        "client from DEMANDFORGE_LLM_URL)")
    p.add_argument("--max-attempts", type=int, default=3)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("report", help="band-violation report for a solution")
    p.add_argument("--network", required=True)
    p.add_argument("--counts", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--source", choices=["CV", "LD", "cv", "ld"], default="CV")
    p.add_argument("--alpha-cv", nargs=2, type=float, metavar=("LB", "UB"))
    p.add_argument("--alpha-ld", nargs=2, type=float, metavar=("LB", "UB"))
    p.add_argument("--calibrate", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=_cmd_serve)

    return parser


def cli_run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments and dispatch; returns the process exit code."""
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}),
              file=sys.stderr)
        return 1


def main():
    sys.exit(cli_run())


if __name__ == "__main__":
    main()
