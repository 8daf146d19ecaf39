"""Episode and suite runner with trajectory persistence and token reporting.

A trajectory is a line-delimited JSON file: a header record, one record per
interpreter phase, a ledger record, and a final record with the evaluation.
Re-running the recorded commands against a fresh simulator reproduces every
observation digest (replay fidelity).  Wall-clock timings are collected into
the run report only, never into trajectory bytes, so two identical runs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .actions import parse_command
from .backends.base import Backend, BackendRequest, Purpose, static_prefix
from .backends.scripted import ScriptedBackend
from .device import DeviceError
from .exectree import digest
from .interpreter import EpisodeConfig, init_episode, run_to_completion
from .lang import StpSyntaxError, parse_program
from .scenarios import ScenarioRegistry, TaskScenario, default_registry
from .strategies import make_strategy
from .tokens import TokenLedger, count_tokens

GROUND = Purpose.GROUND_INSTRUCTION.value


class MixedScenarioFamilies(ValueError):
    """Growth curves need trajectories from one scenario family."""


@dataclass
class Trajectory:
    scenario_id: str
    seed: int
    strategy: str
    backend_id: str
    program_source: str
    records: list[dict]
    ledger: TokenLedger
    evaluation: dict
    answers: list[str]
    done_status: str | None
    failure: str | None
    step_count: int
    ag_calls: int
    final_state_digest: str
    wall_ms: list[float] = field(default_factory=list)  # per phase; report-only

    @property
    def success(self) -> bool:
        return bool(self.evaluation.get("success")) and self.failure is None

    def dynamic_series(self) -> list[tuple[int, int]]:
        return self.ledger.dynamic_series(GROUND)

    def header(self) -> dict:
        return {
            "type": "header",
            "scenario": self.scenario_id,
            "seed": self.seed,
            "strategy": self.strategy,
            "backend": self.backend_id,
            "program_source": self.program_source,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), ensure_ascii=False)]
        for record in self.records:
            lines.append(json.dumps({"type": "step", **record}, ensure_ascii=False))
        lines.append(
            json.dumps(
                {
                    "type": "ledger",
                    "entries": [
                        {
                            "step_index": e.step_index,
                            "purpose": e.purpose,
                            "static_prefix_tokens": e.static_prefix_tokens,
                            "dynamic_tokens": e.dynamic_tokens,
                            "output_tokens": e.output_tokens,
                        }
                        for e in self.ledger.entries
                    ],
                    "totals": self.ledger.totals(),
                },
                ensure_ascii=False,
            )
        )
        lines.append(
            json.dumps(
                {
                    "type": "final",
                    "evaluation": self.evaluation,
                    "answers": self.answers,
                    "done_status": self.done_status,
                    "failure": self.failure,
                    "step_count": self.step_count,
                    "ag_calls": self.ag_calls,
                    "final_state_digest": self.final_state_digest,
                },
                ensure_ascii=False,
            )
        )
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path


def generate_program_source(
    backend: Backend, scenario: TaskScenario, ledger: TokenLedger, device_profile: str,
    attempts: int = 3,
) -> str:
    """Ask the backend for the program and insist that it parses."""
    from .backends.base import UnparseableProgram

    structured = {"task": scenario.instruction, "device_profile": device_profile}
    request = BackendRequest(
        purpose=Purpose.GENERATE_PROGRAM,
        static_prefix=static_prefix(Purpose.GENERATE_PROGRAM),
        dynamic_payload=f"task: {scenario.instruction}\n\ndevice: {device_profile}",
        structured=structured,
    )
    last_error: Exception | None = None
    for _ in range(attempts):
        source, usage = backend.generate_program(request)
        static_tokens = count_tokens(request.static_prefix)
        ledger.record(
            step_index=0,
            purpose=Purpose.GENERATE_PROGRAM.value,
            static_prefix_tokens=static_tokens,
            dynamic_tokens=(
                max(usage.prompt_tokens - static_tokens, 0)
                if usage is not None
                else count_tokens(request.dynamic_payload)
            ),
            output_tokens=usage.output_tokens if usage is not None else count_tokens(source),
        )
        try:
            parse_program(source)
            return source
        except StpSyntaxError as e:
            last_error = e
    raise UnparseableProgram(f"program source never parsed: {last_error}")


def run_episode(
    scenario: TaskScenario | str,
    strategy: str,
    backend: Backend,
    seed: int,
    *,
    config: EpisodeConfig | None = None,
    registry: ScenarioRegistry | None = None,
    out_path: str | Path | None = None,
) -> Trajectory:
    """One full episode: program generation, interpretation, evaluation.

    Episode-level failures are recorded in the trajectory, never raised.
    """
    from .device import DEVICE_PROFILE

    if isinstance(scenario, str):
        scenario = (registry or default_registry()).get(scenario)
    config = config or EpisodeConfig()
    device = scenario.build_device(seed)
    ledger = TokenLedger()
    strategy_obj = make_strategy(strategy)

    wall: list[float] = []
    failure = None
    state = None
    source = ""
    try:
        source = generate_program_source(backend, scenario, ledger, DEVICE_PROFILE)
        program = parse_program(source)
        state = init_episode(program, device, backend, strategy_obj, config)
        state.ledger = ledger
        from .interpreter import Mode, step

        while state.mode != Mode.TERMINATED:
            t0 = time.perf_counter()
            try:
                step(state)
            finally:
                wall.append((time.perf_counter() - t0) * 1000.0)
    except Exception as e:  # recorded, never thrown past the runner
        failure = f"{type(e).__name__}: {e}"
        if state is not None:
            state.records.append({"phase": "Failure", "error": failure})

    if state is not None and state.failure and failure is None:
        failure = state.failure
    evaluation_result = scenario.evaluate(device)
    evaluation = {
        "success": evaluation_result.success and failure is None,
        "score": evaluation_result.score,
        "breakdown": [{"check": d, "ok": ok} for d, ok in evaluation_result.breakdown],
    }
    trajectory = Trajectory(
        scenario_id=scenario.id,
        seed=seed,
        strategy=strategy_obj.name,
        backend_id=backend.name,
        program_source=source,
        records=state.records if state is not None else [],
        ledger=ledger,
        evaluation=evaluation,
        answers=state.answers if state is not None else [],
        done_status=state.done_status if state is not None else None,
        failure=failure,
        step_count=state.step_count if state is not None else 0,
        ag_calls=state.ag_calls if state is not None else 0,
        final_state_digest=digest(json.dumps(device.snapshot(), sort_keys=True), cap=10_000),
        wall_ms=wall,
    )
    if out_path is not None:
        trajectory.save(out_path)
    return trajectory


# --------------------------------------------------------------------------
# Replay
# --------------------------------------------------------------------------


def load_trajectory_records(path: str | Path) -> tuple[dict, list[dict]]:
    header = None
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            record = json.loads(line)
            if record["type"] == "header":
                header = record
            elif record["type"] == "step":
                records.append(record)
    if header is None:
        raise ValueError(f"{path} has no header record")
    return header, records


def replay(path: str | Path, registry: ScenarioRegistry | None = None) -> dict:
    """Re-run a trajectory's recorded commands on a fresh simulator.

    Device commands are re-executed in order; every recorded per-command
    observation digest must match the fresh one.
    """
    header, records = load_trajectory_records(path)
    registry = registry or default_registry()
    scenario = registry.get(header["scenario"])
    device = scenario.build_device(header["seed"])
    checked = 0
    mismatches: list[dict] = []
    for record in records:
        for result in record.get("results", []):
            cmd = parse_command(result["command"])
            if cmd.is_device:
                error = None
                try:
                    device.execute(cmd)
                except DeviceError as e:
                    error = str(e)
                if result["ok"] == (error is not None):
                    mismatches.append(
                        {"command": result["command"], "expected_ok": result["ok"], "error": error}
                    )
                    continue
            fresh = digest(device.observe().render())
            checked += 1
            if fresh != result["observation_digest"]:
                mismatches.append(
                    {"command": result["command"], "expected": result["observation_digest"],
                     "got": fresh}
                )
    return {"ok": not mismatches, "checked": checked, "mismatches": mismatches}


# --------------------------------------------------------------------------
# Suite running and reports
# --------------------------------------------------------------------------


@dataclass
class SuiteReport:
    cells: list[dict]
    trajectories: list[Trajectory]

    def aggregates(self) -> dict:
        by_group: dict[tuple[str, str], list[dict]] = {}
        for cell in self.cells:
            by_group.setdefault((cell["strategy"], cell["category"]), []).append(cell)
            by_group.setdefault((cell["strategy"], "overall"), []).append(cell)
        groups = {}
        for (strategy, category), cells in sorted(by_group.items()):
            successes = [c for c in cells if c["success"]]
            groups[f"{strategy}/{category}"] = {
                "episodes": len(cells),
                "success_rate": round(100.0 * len(successes) / len(cells), 1) if cells else 0.0,
                "avg_steps_all": _mean([c["steps"] for c in cells]),
                "avg_steps_successful": _mean([c["steps"] for c in successes]),
                "static_prefix_tokens": sum(c["static_prefix_tokens"] for c in cells),
                "dynamic_tokens": sum(c["dynamic_tokens"] for c in cells),
                "output_tokens": sum(c["output_tokens"] for c in cells),
                "avg_wall_ms_per_step": _mean(
                    [c["wall_ms_total"] / c["steps"] for c in cells if c["steps"]]
                ),
            }
        return groups

    def totals(self) -> dict:
        return {
            "static_prefix_tokens": sum(c["static_prefix_tokens"] for c in self.cells),
            "dynamic_tokens": sum(c["dynamic_tokens"] for c in self.cells),
            "output_tokens": sum(c["output_tokens"] for c in self.cells),
            "episodes": len(self.cells),
        }

    def to_json(self) -> str:
        return json.dumps(
            {"cells": self.cells, "aggregates": self.aggregates(), "totals": self.totals()},
            indent=2,
            ensure_ascii=False,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.cells:
            return ""
        writer = csv.DictWriter(buf, fieldnames=list(self.cells[0].keys()))
        writer.writeheader()
        for cell in self.cells:
            writer.writerow(cell)
        return buf.getvalue()


def _mean(xs) -> float:
    xs = list(xs)
    return round(sum(xs) / len(xs), 2) if xs else 0.0


def _cell(scenario: TaskScenario, trajectory: Trajectory) -> dict:
    totals = trajectory.ledger.totals()
    return {
        "scenario": scenario.id,
        "category": scenario.category,
        "n": scenario.n,
        "strategy": trajectory.strategy,
        "seed": trajectory.seed,
        "success": trajectory.success,
        "score": trajectory.evaluation["score"],
        "steps": trajectory.step_count,
        "ag_calls": trajectory.ag_calls,
        "static_prefix_tokens": totals["static_prefix_tokens"],
        "dynamic_tokens": totals["dynamic_tokens"],
        "output_tokens": totals["output_tokens"],
        "calls": totals["calls"],
        "failure": trajectory.failure or "",
        "wall_ms_total": round(sum(trajectory.wall_ms), 3),
    }


def make_backend(spec: str | dict) -> Backend:
    """Backend from a config spec: "scripted" or {"http": {...}}."""
    if spec == "scripted":
        return ScriptedBackend()
    if isinstance(spec, dict) and "http" in spec:
        from .backends.http import HttpBackend, HttpBackendConfig

        return HttpBackend(HttpBackendConfig(**spec["http"]))
    raise ValueError(f"unknown backend spec {spec!r}")


def run_suite(
    config: dict,
    *,
    registry: ScenarioRegistry | None = None,
    backend: Backend | None = None,
    out_dir: str | Path | None = None,
    workers: int | None = None,
) -> SuiteReport:
    """Run scenarios x strategies x seeds; per-cell failures never stop the suite."""
    registry = registry or default_registry()
    scenario_ids = config.get("scenarios", "all")
    if scenario_ids == "all":
        scenario_ids = registry.ids()
    strategies = config.get("strategies", ["ProgramGuided"])
    seeds = config.get("seeds", [0])
    belief_enabled = bool(config.get("belief", True))
    episode_config = EpisodeConfig(
        belief_enabled=belief_enabled,
        max_steps=int(config.get("max_steps", 200)),
        retrieval_k=int(config.get("retrieval_k", 3)),
    )
    backend = backend or make_backend(config.get("backend", "scripted"))
    out_dir = Path(out_dir or config.get("out_dir", "runs"))

    jobs = [
        (registry.get(sid), strategy, seed)
        for sid in scenario_ids
        for strategy in strategies
        for seed in seeds
    ]

    def run_job(job):
        scenario, strategy, seed = job
        safe_strategy = strategy.replace("(", "_").replace(")", "")
        path = out_dir / f"{scenario.id}__{safe_strategy}__{seed}.jsonl"
        return run_episode(
            scenario, strategy, backend, seed, config=episode_config, out_path=path
        )

    max_workers = workers or max(1, len(scenario_ids))
    results: list[Trajectory] = []
    if max_workers == 1:
        results = [run_job(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run_job, jobs))

    cells = [_cell(job[0], trajectory) for job, trajectory in zip(jobs, results)]
    return SuiteReport(cells=cells, trajectories=results)


# --------------------------------------------------------------------------
# Growth curves
# --------------------------------------------------------------------------

_FAMILY_RE = re.compile(r"_n\d+(_\w+)?$")


def scenario_family(scenario_id: str) -> str:
    return _FAMILY_RE.sub("", scenario_id)


def growth_curve_rows(trajectories: list[Trajectory]) -> list[dict]:
    """Per-step dynamic-token stats across trajectories, grouped by strategy."""
    families = {scenario_family(t.scenario_id) for t in trajectories}
    if len(families) > 1:
        raise MixedScenarioFamilies(f"got {sorted(families)}")
    by_strategy: dict[str, dict[int, list[int]]] = {}
    for t in trajectories:
        steps = by_strategy.setdefault(t.strategy, {})
        for step_index, tokens in t.dynamic_series():
            steps.setdefault(step_index, []).append(tokens)
    rows = []
    for strategy in sorted(by_strategy):
        for step_index in sorted(by_strategy[strategy]):
            values = by_strategy[strategy][step_index]
            rows.append(
                {
                    "step": step_index,
                    "strategy": strategy,
                    "mean": round(sum(values) / len(values), 1),
                    "min": min(values),
                    "max": max(values),
                }
            )
    return rows


def export_growth_curve(trajectories: list[Trajectory], path: str | Path) -> Path:
    rows = growth_curve_rows(trajectories)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["step", "strategy", "mean", "min", "max"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path
