"""Simulation-in-the-loop action planning.

:func:`plan` draws ``K`` proposals from the sampler and rolls each out; these first
rollouts only build context. It then alternates optimize, roll out and evaluate
until the evaluator reports success or ``K_max`` rollouts have been spent.
"""

from __future__ import annotations

import json
import logging
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .actions import ActionSequence, action_to_pose, interpolate_waypoints
from .backends.base import Backends, Verdict
from .backends.evaluate import has_programmatic, programmatic_evaluate
from .errors import BackendError, MalformedAfterRetries, NumericalDivergence, WorkspaceViolation
from .render import frame_name, render_state, save_frame
from .scene import SceneDescription
from .sim.simulator import DEFAULT_DT, SimSnapshot, Simulator

log = logging.getLogger(__name__)

TERMINATIONS = ("success", "budget_exhausted", "backend_error")


@dataclass
class RolloutTrace:
    action_sequence: ActionSequence
    per_primitive_states: list[tuple[int, SimSnapshot]] = field(default_factory=list)
    frames: list[str] = field(default_factory=list)
    final_state: SimSnapshot | None = None
    initial_state: SimSnapshot | None = None
    diverged: bool = False
    failure: str | None = None
    steps: int = 0

    @property
    def failed(self) -> bool:
        return self.diverged or self.failure is not None

    def to_dict(self, frame_root: Path | None = None) -> dict[str, Any]:
        frames = [str(Path(f).relative_to(frame_root)) if frame_root else str(f) for f in self.frames]
        return {
            "action_sequence": self.action_sequence.to_json(),
            "per_primitive_states": [{"primitive": i, "state": s.to_dict()} for i, s in self.per_primitive_states],
            "frames": frames,
            "final_state": self.final_state.to_dict() if self.final_state is not None else None,
            "diverged": self.diverged,
            "failure": self.failure,
            "steps": self.steps,
        }


def sim_rollout(scene: SceneDescription, seq: ActionSequence, frame_dir: str | Path | None = None,
                settle_time: float = 1.0, dt: float = DEFAULT_DT, seed: int = 0) -> RolloutTrace:
    """Simulate ``seq`` from the scene's initial state.

    Frames (when ``frame_dir`` is given) are the initial state, the end of every
    primitive and the settled final state. The simulation itself is deterministic;
    ``seed`` is accepted for interface symmetry with stochastic rollouts.
    """
    del seed
    trace = RolloutTrace(seq)
    g = scene.gripper
    try:
        waypoints = action_to_pose(seq, g.pose, g.width, scene.workspace_bounds)
    except WorkspaceViolation as exc:
        trace.failure = f"WorkspaceViolation: {exc}"
        return trace
    stream = interpolate_waypoints(waypoints, 1.0 / dt, start_pose=g.pose, start_width=g.width)
    sim = Simulator(scene, dt=dt)
    fdir = Path(frame_dir) if frame_dir is not None else None

    def snap_frame(state: SimSnapshot) -> None:
        if fdir is not None:
            path = fdir / frame_name(len(trace.frames))
            save_frame(render_state(state, scene), path)
            trace.frames.append(str(path))

    trace.initial_state = sim.snapshot()
    snap_frame(trace.initial_state)
    ends = {e: k for k, e in enumerate(stream.segment_ends)}
    last = trace.initial_state
    try:
        for i in range(len(stream)):
            sim.step(stream.pose(i), float(stream.widths[i]))
            if i in ends:
                last = sim.snapshot()
                trace.per_primitive_states.append((waypoints[ends[i]].action_index, last))
                snap_frame(last)
        sim.settle(settle_time)
        trace.final_state = sim.snapshot()
    except NumericalDivergence as exc:
        log.info("rollout diverged after %d steps: %s", sim.steps, exc)
        trace.diverged = True
        trace.failure = f"NumericalDivergence: {exc}"
        trace.final_state = last
    trace.steps = sim.steps
    if trace.final_state is not None and not trace.diverged:
        snap_frame(trace.final_state)
    return trace


# ---------------------------------------------------------------------------
# optimization context


@dataclass
class ContextRecord:
    index: int
    actions: list[dict]
    states: list[dict]
    figures: list[str]
    frame_paths: list[str]
    verdict: Verdict | None
    failure: str | None

    def to_dict(self) -> dict[str, Any]:
        return {"index": self.index, "actions": self.actions, "states": self.states, "figures": self.figures,
                "verdict": self.verdict.to_dict() if self.verdict else None, "failure": self.failure}


@dataclass
class OptimizationContext:
    records: list[ContextRecord]
    traces: list[RolloutTrace]
    scene: SceneDescription | None = None

    def __len__(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict[str, Any]:
        return {"rollouts": [r.to_dict() for r in self.records]}

    def frame_paths(self) -> list[str]:
        return [p for r in self.records for p in r.frame_paths]


def build_context(traces: list[RolloutTrace], verdicts: list[Verdict | None],
                  scene: SceneDescription | None = None) -> OptimizationContext:
    """Serialize rollouts for the optimizer; figures are numbered globally in rollout order."""
    if not traces:
        raise ValueError("build_context needs at least one trace")
    records = []
    fig = 0
    for i, tr in enumerate(traces):
        states = [{"primitive": k, **s.to_dict(keypoints=True)} for k, s in tr.per_primitive_states]
        figures = []
        for _ in tr.frames:
            figures.append(frame_name(fig))
            fig += 1
        v = verdicts[i] if i < len(verdicts) else None
        records.append(ContextRecord(i, [a.to_json() for a in tr.action_sequence.actions], states, figures,
                                     list(tr.frames), v, tr.failure))
    return OptimizationContext(records, list(traces), scene)


# ---------------------------------------------------------------------------
# planning loop


@dataclass
class PlannerConfig:
    K: int = 10
    K_max: int = 15
    seed: int = 0
    settle_time: float = 1.0
    dt: float = DEFAULT_DT
    render: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.K_max < self.K + 1:
            raise ValueError("K_max must be at least K + 1")


@dataclass
class PlanResult:
    selected: ActionSequence | None
    iterations_used: int
    traces: list[RolloutTrace]
    verdicts: list[dict]
    termination: str
    error: str | None = None
    calls: dict[str, int] = field(default_factory=lambda: {"sampler": 0, "optimizer": 0, "evaluator": 0})

    @property
    def success(self) -> bool:
        return self.termination == "success"

    def to_dict(self, frame_root: Path | None = None) -> dict[str, Any]:
        return {
            "selected": self.selected.to_json() if self.selected else None,
            "iterations_used": self.iterations_used,
            "termination": self.termination,
            "error": self.error,
            "calls": dict(self.calls),
            "verdicts": self.verdicts,
            "traces": [t.to_dict(frame_root) for t in self.traces],
        }


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


RolloutFn = Callable[..., RolloutTrace]


def plan(scene: SceneDescription, backends: Backends, config: PlannerConfig | None = None,
         run_dir: str | Path | None = None, rollout_fn: RolloutFn = sim_rollout) -> PlanResult:
    """Sample ``K`` proposals, then optimize until success or ``K_max`` rollouts."""
    cfg = config or PlannerConfig()
    run_dir = Path(run_dir) if run_dir is not None else None
    wants_frames = cfg.render or run_dir is not None or getattr(backends.optimizer, "needs_frames", False) \
        or getattr(backends.evaluator, "needs_frames", False)
    tmp = None
    frame_root = run_dir
    if wants_frames and frame_root is None:
        tmp = tempfile.TemporaryDirectory(prefix="simpact-frames-")
        frame_root = Path(tmp.name)
    traces: list[RolloutTrace] = []
    verdicts: list[dict] = []
    context_verdicts: list[Verdict | None] = []
    result = PlanResult(None, 0, traces, verdicts, "budget_exhausted")

    def rollout(seq: ActionSequence) -> RolloutTrace:
        k = len(traces)
        fdir = None
        if wants_frames:
            fdir = frame_root / "traces" / str(k)
            fdir.mkdir(parents=True, exist_ok=True)
        tr = rollout_fn(scene, seq, frame_dir=fdir, settle_time=cfg.settle_time, dt=cfg.dt, seed=cfg.seed + k)
        traces.append(tr)
        return tr

    def context_verdict(tr: RolloutTrace) -> Verdict | None:
        if not has_programmatic(scene.task.task_id):
            return None
        if tr.final_state is None:
            return Verdict(False, tr.failure or "no state", score=math.inf)
        v = programmatic_evaluate(scene.task.task_id, tr.final_state, scene.task.criterion_params, scene)
        if tr.diverged:
            v = Verdict(False, f"diverged: {v.rationale}", score=math.inf)
        return v

    try:
        initial_frame = None
        if wants_frames:
            (frame_root / "traces").mkdir(parents=True, exist_ok=True)
            initial_frame = str(frame_root / "initial.png")
            snap = Simulator(scene, dt=cfg.dt).snapshot()
            save_frame(render_state(snap, scene), initial_frame)
        result.calls["sampler"] += 1
        try:
            proposals = backends.sampler.sample(scene, cfg.K, frame=initial_frame, seed=cfg.seed)
        except MalformedAfterRetries as exc:
            proposals = list(exc.partial or [])
            backends.record("sampler", error=str(exc), salvaged=len(proposals))
        proposals = list(proposals)[: cfg.K]
        backends.record("sampler", n=len(proposals), proposals=[p.to_json() for p in proposals])
        for seq in proposals:
            tr = rollout(seq)
            v = context_verdict(tr)
            context_verdicts.append(v)
            verdicts.append({"index": len(traces) - 1, "role": "context",
                             "verdict": v.to_dict() if v else None})
        if not proposals:
            log.warning("sampler returned no valid proposals")
        result.iterations_used = len(traces)
        for k in range(len(traces) + 1, cfg.K_max + 1):
            result.iterations_used = k
            if not traces:
                # nothing to optimize from; spend the remaining budget on fresh samples
                result.calls["sampler"] += 1
                fresh = backends.sampler.sample(scene, 1, frame=initial_frame, seed=cfg.seed + 1000 + len(verdicts))
                if not fresh:
                    continue
                tr = rollout(fresh[0])
                v = context_verdict(tr)
                context_verdicts.append(v)
                verdicts.append({"index": len(traces) - 1, "role": "context", "verdict": v.to_dict() if v else None})
                continue
            ctx = build_context(traces, context_verdicts, scene)
            result.calls["optimizer"] += 1
            try:
                seq = backends.optimizer.optimize(ctx)
            except MalformedAfterRetries as exc:
                backends.record("optimizer", error=str(exc))
                verdicts.append({"index": None, "role": "optimizer_error", "verdict": None, "error": str(exc)})
                continue
            backends.record("optimizer", proposal=seq.to_json())
            tr = rollout(seq)
            result.calls["evaluator"] += 1
            v = backends.evaluator.evaluate(scene, tr)
            backends.record("evaluator", index=len(traces) - 1, verdict=v.to_dict())
            context_verdicts.append(v)
            verdicts.append({"index": len(traces) - 1, "role": "evaluator", "verdict": v.to_dict()})
            if v.success:
                result.selected = seq
                result.termination = "success"
                break
    except BackendError as exc:
        log.error("backend failure: %s", exc)
        result.termination = "backend_error"
        result.error = f"{type(exc).__name__}: {exc}"
    finally:
        if run_dir is not None:
            save_run(result, run_dir, backends)
        if tmp is not None:
            tmp.cleanup()
    return result


def save_run(result: PlanResult, run_dir: str | Path, backends: Backends | None = None) -> None:
    """Persist ``plan.json``, per-trace ``states.jsonl`` and ``backend_log.jsonl``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "plan.json").write_text(canonical_json(result.to_dict(run_dir)) + "\n", encoding="utf-8")
    for k, tr in enumerate(result.traces):
        tdir = run_dir / "traces" / str(k)
        tdir.mkdir(parents=True, exist_ok=True)
        with open(tdir / "states.jsonl", "w", encoding="utf-8") as fh:
            for i, s in tr.per_primitive_states:
                fh.write(canonical_json({"primitive": i, **s.to_dict()}) + "\n")
    if backends is not None:
        with open(run_dir / "backend_log.jsonl", "w", encoding="utf-8") as fh:
            for entry in backends.log:
                fh.write(json.dumps({"timestamp": time.time(), **entry}, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


# ---------------------------------------------------------------------------
# ablation loops


def plan_best_of_n(scene: SceneDescription, backends: Backends, config: PlannerConfig | None = None,
                   rollout_fn: RolloutFn = sim_rollout) -> PlanResult:
    """Roll out ``K`` samples and keep the first success, else the lowest-cost one."""
    cfg = config or PlannerConfig()
    proposals = list(backends.sampler.sample(scene, cfg.K, seed=cfg.seed))[: cfg.K]
    traces, verdicts = [], []
    best, best_cost = None, math.inf
    for k, seq in enumerate(proposals):
        tr = rollout_fn(scene, seq, frame_dir=None, settle_time=cfg.settle_time, dt=cfg.dt, seed=cfg.seed + k)
        traces.append(tr)
        v = backends.evaluator.evaluate(scene, tr)
        verdicts.append({"index": k, "role": "evaluator", "verdict": v.to_dict()})
        if v.success:
            return PlanResult(seq, len(traces), traces, verdicts, "success",
                              calls={"sampler": 1, "optimizer": 0, "evaluator": len(traces)})
        cost = v.score if v.score is not None else math.inf
        if best is None or cost < best_cost:
            best, best_cost = seq, cost
    return PlanResult(best, len(traces), traces, verdicts, "budget_exhausted",
                      calls={"sampler": 1, "optimizer": 0, "evaluator": len(traces)})


def plan_without_rollout(scene: SceneDescription, backends: Backends, config: PlannerConfig | None = None) -> PlanResult:
    """Judge proposals without simulating them; the first one the judge accepts is selected."""
    cfg = config or PlannerConfig()
    proposals = list(backends.sampler.sample(scene, cfg.K, seed=cfg.seed))[: cfg.K]
    verdicts = []
    for k, seq in enumerate(proposals):
        v = backends.evaluator.judge_plan(scene, seq)
        verdicts.append({"index": k, "role": "judge", "verdict": v.to_dict()})
        if v.success:
            return PlanResult(seq, 0, [], verdicts, "success",
                              calls={"sampler": 1, "optimizer": 0, "evaluator": k + 1})
    return PlanResult(proposals[0] if proposals else None, 0, [], verdicts, "budget_exhausted",
                      calls={"sampler": 1, "optimizer": 0, "evaluator": len(proposals)})
