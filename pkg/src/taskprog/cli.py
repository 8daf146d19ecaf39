"""Command-line interface.

Subcommands: run one episode, run a suite from a config file, replay a
trajectory, re-format a suite report, parse a program file, and export a
dynamic-token growth curve.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cfg import build_cfg
from .harness import (
    Trajectory,
    export_growth_curve,
    growth_curve_rows,
    make_backend,
    replay,
    run_episode,
    run_suite,
)
from .interpreter import EpisodeConfig
from .lang import canonical_print, parse_program
from .scenarios import default_registry


def _cmd_run(args) -> int:
    backend = make_backend(_backend_spec(args))
    config = EpisodeConfig(belief_enabled=args.belief == "on", max_steps=args.max_steps)
    trajectory = run_episode(
        args.scenario,
        args.strategy,
        backend,
        args.seed,
        config=config,
        out_path=args.out,
    )
    print(f"scenario:  {trajectory.scenario_id} (seed {trajectory.seed}, {trajectory.strategy})")
    print(f"success:   {trajectory.success} ({trajectory.evaluation['score']})")
    print(f"steps:     {trajectory.step_count} cycles, {trajectory.ag_calls} generations")
    totals = trajectory.ledger.totals()
    print(
        "tokens:    static {static_prefix_tokens}, dynamic {dynamic_tokens}, "
        "output {output_tokens} over {calls} calls".format(**totals)
    )
    if trajectory.failure:
        print(f"failure:   {trajectory.failure}")
    if args.out:
        print(f"saved:     {args.out}")
    return 0 if trajectory.success else 1


def _cmd_suite(args) -> int:
    config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    report = run_suite(config, out_dir=args.out_dir, workers=args.workers)
    out_dir = Path(args.out_dir or config.get("out_dir", "runs"))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    for group, stats in report.aggregates().items():
        print(
            f"{group}: {stats['success_rate']}% of {stats['episodes']}, "
            f"avg steps {stats['avg_steps_all']} (successful {stats['avg_steps_successful']})"
        )
    print(f"reports in {out_dir}/report.json and {out_dir}/report.csv")
    return 0


def _cmd_replay(args) -> int:
    result = replay(args.trajectory)
    print(f"checked {result['checked']} observations: {'ok' if result['ok'] else 'MISMATCH'}")
    for mismatch in result["mismatches"][:10]:
        print(f"  {mismatch}")
    return 0 if result["ok"] else 1


def _cmd_report(args) -> int:
    data = json.loads(Path(args.infile).read_text(encoding="utf-8"))
    if args.format == "json":
        print(json.dumps(data, indent=2, ensure_ascii=False))
    else:
        import csv as _csv

        cells = data["cells"] if isinstance(data, dict) else data
        writer = _csv.DictWriter(sys.stdout, fieldnames=list(cells[0].keys()))
        writer.writeheader()
        for cell in cells:
            writer.writerow(cell)
    return 0


def _cmd_parse(args) -> int:
    source = Path(args.stp).read_text(encoding="utf-8")
    program = parse_program(source)
    print("# statements")
    for stmt in program.walk():
        reads = f" reads={','.join(stmt.var_reads)}" if stmt.var_reads else ""
        writes = f" writes={','.join(stmt.var_writes)}" if stmt.var_writes else ""
        print(f"{stmt.step_id:<8} {stmt.kind.value:<16} {stmt.text}{reads}{writes}")
    print("\n# canonical form")
    print(canonical_print(program))
    print("\n# control flow")
    graph = build_cfg(program)
    for node in graph.nodes:
        moves = ", ".join(f"{e.kind.value}->{e.target or 'end'}" for e in graph.moves_from(node))
        print(f"{node:<8} {moves}")
    return 0


def _cmd_curve(args) -> int:
    trajectories = []
    for path in args.infiles:
        trajectories.append(_trajectory_from_file(path))
    if args.out:
        export_growth_curve(trajectories, args.out)
        print(f"wrote {args.out}")
    else:
        for row in growth_curve_rows(trajectories):
            print(row)
    return 0


def _trajectory_from_file(path: str) -> Trajectory:
    from .tokens import TokenLedger

    header = None
    ledger = TokenLedger()
    final: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            record = json.loads(line)
            if record["type"] == "header":
                header = record
            elif record["type"] == "ledger":
                for entry in record["entries"]:
                    ledger.record(
                        entry["step_index"], entry["purpose"],
                        entry["static_prefix_tokens"], entry["dynamic_tokens"],
                        entry["output_tokens"],
                    )
            elif record["type"] == "final":
                final = record
    if header is None:
        raise ValueError(f"{path} has no header record")
    return Trajectory(
        scenario_id=header["scenario"],
        seed=header["seed"],
        strategy=header["strategy"],
        backend_id=header["backend"],
        program_source=header.get("program_source", ""),
        records=[],
        ledger=ledger,
        evaluation=final.get("evaluation", {}),
        answers=final.get("answers", []),
        done_status=final.get("done_status"),
        failure=final.get("failure"),
        step_count=final.get("step_count", 0),
        ag_calls=final.get("ag_calls", 0),
        final_state_digest=final.get("final_state_digest", ""),
    )


def _backend_spec(args):
    if args.backend == "scripted":
        return "scripted"
    if args.backend == "http":
        if not args.backend_config:
            raise SystemExit("--backend http needs --backend-config FILE")
        return {"http": json.loads(Path(args.backend_config).read_text(encoding="utf-8"))}
    raise SystemExit(f"unknown backend {args.backend!r}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="taskprog", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a single episode")
    p.add_argument("--scenario", required=True, choices=default_registry().ids())
    p.add_argument("--strategy", default="ProgramGuided")
    p.add_argument("--backend", default="scripted")
    p.add_argument("--backend-config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--belief", choices=["on", "off"], default="on")
    p.add_argument("--max-steps", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("suite", help="run a suite from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int)
    p.set_defaults(fn=_cmd_suite)

    p = sub.add_parser("replay", help="replay a recorded trajectory")
    p.add_argument("--trajectory", required=True)
    p.set_defaults(fn=_cmd_replay)

    p = sub.add_parser("report", help="re-format a suite report")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("parse", help="parse a program file; print AST and CFG")
    p.add_argument("--stp", required=True)
    p.set_defaults(fn=_cmd_parse)

    p = sub.add_parser("curve", help="export a dynamic-token growth curve")
    p.add_argument("--in", dest="infiles", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_curve)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
