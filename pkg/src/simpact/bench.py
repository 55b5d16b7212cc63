"""Benchmark harness: seeded scene perturbation, the ablation matrix, trials and reports.

Every trial perturbs the authored scene with its own seed, runs one planner
combo, then scores the selected plan with the programmatic evaluator so that
reports never depend on which evaluator ran inside the loop.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .backends.base import Backends, Verdict
from .backends.evaluate import ProgrammaticEvaluator, programmatic_evaluate
from .backends.scripted import CEMOptimizer, GaussianSampler, KinematicJudge, ScriptedSampler
from .errors import IoError
from .planner import PlannerConfig, PlanResult, RolloutTrace, plan, plan_best_of_n, plan_without_rollout, sim_rollout
from .scene import SceneDescription, load_scene
from .transforms import Pose, quat_from_yaw, quat_mul

log = logging.getLogger(__name__)

TASKS = ("non_toppling_push", "bowl_stacking", "pivoting", "shape_rope", "shape_dough")
COMBOS = ("full", "wo_sampler", "wo_rollout", "wo_optimizer", "cem_variant")
GAUSSIAN_INFLATION = 5
OPTIMIZER_BUDGET = 5
JITTER_XY = 0.03
JITTER_YAW_DEG = 15.0


def scene_path(task_id: str) -> Path:
    return Path(str(resources.files("simpact") / "data" / "scenes" / f"{task_id}.json"))


def load_task_scene(task_id: str) -> SceneDescription:
    return load_scene(scene_path(task_id))


# ---------------------------------------------------------------------------
# scene perturbation


def _rotate_about(p, pivot, yaw: float, shift) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    rel = np.asarray(p, dtype=float) - pivot
    x = c * rel[..., 0] - s * rel[..., 1]
    y = s * rel[..., 0] + c * rel[..., 1]
    out = np.array(p, dtype=float, copy=True)
    out[..., 0] = pivot[0] + x + shift[0]
    out[..., 1] = pivot[1] + y + shift[1]
    return out


def perturb_scene(scene: SceneDescription, seed: int, xy: float = JITTER_XY,
                  yaw_deg: float = JITTER_YAW_DEG) -> SceneDescription:
    """Move every perturbation group rigidly by a uniform xy shift and yaw about its centroid.

    Objects outside any group keep their authored pose. ``xy=0`` and ``yaw_deg=0``
    return an equal scene.
    """
    rng = np.random.default_rng(seed)
    rigid = {o.name: o for o in scene.rigid_objects}
    deform = {o.name: o for o in scene.deformable_objects}
    for group in scene.perturbation_groups:
        shift = rng.uniform(-xy, xy, size=2)
        yaw = math.radians(float(rng.uniform(-yaw_deg, yaw_deg)))
        centres = []
        for name in group:
            if name in rigid:
                centres.append(np.asarray(rigid[name].pose.position, dtype=float))
            else:
                centres.append(np.asarray(deform[name].particles, dtype=float).mean(axis=0))
        pivot = np.mean(centres, axis=0)
        qz = quat_from_yaw(yaw)
        for name in group:
            if name in rigid:
                o = rigid[name]
                p = _rotate_about(o.pose.position, pivot, yaw, shift)
                rigid[name] = replace(o, pose=Pose(tuple(p), tuple(quat_mul(qz, o.pose.orientation))))
            else:
                o = deform[name]
                deform[name] = replace(o, particles=_rotate_about(o.particles, pivot, yaw, shift))
    return replace(scene, rigid_objects=[rigid[o.name] for o in scene.rigid_objects],
                   deformable_objects=[deform[o.name] for o in scene.deformable_objects])


# ---------------------------------------------------------------------------
# configuration and report types


@dataclass
class BenchConfig:
    tasks: list[str] = field(default_factory=lambda: list(TASKS))
    trials: int = 10
    seeds: list[int] | None = None
    backend_matrix: list[str] = field(default_factory=lambda: ["full"])
    K_values: list[int] = field(default_factory=lambda: [10])
    jitter_xy: float = JITTER_XY
    jitter_yaw_deg: float = JITTER_YAW_DEG

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for t in self.tasks:
            if t not in TASKS:
                raise ValueError(f"unknown task {t!r}")
        for c in self.backend_matrix:
            if c not in COMBOS:
                raise ValueError(f"unknown combo {c!r}; expected one of {COMBOS}")
        for k in self.K_values:
            if int(k) < 1:
                raise ValueError("K values must be >= 1")
        if self.seeds is not None and len(self.seeds) < self.trials:
            raise ValueError("need at least one seed per trial")

    def trial_seeds(self) -> list[int]:
        return list(self.seeds[: self.trials]) if self.seeds is not None else list(range(self.trials))

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown bench config keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def load_bench_config(path: str | Path) -> BenchConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read bench config {path}: {exc}") from exc
    return BenchConfig.from_dict(data)


def default_bench_config_path() -> Path:
    return Path(str(resources.files("simpact") / "data" / "bench.json"))


@dataclass
class TrialResult:
    trial: int
    seed: int
    success: bool
    iterations_used: int
    diverged: int
    termination: str
    provenance: str
    rationale: str
    error: str | None = None


@dataclass
class CellResult:
    task: str
    combo: str
    K: int
    trials: list[TrialResult] = field(default_factory=list)

    @property
    def successes(self) -> int:
        return sum(t.success for t in self.trials)

    @property
    def success_rate(self) -> float:
        return self.successes / len(self.trials) if self.trials else 0.0

    @property
    def mean_iterations(self) -> float:
        return float(np.mean([t.iterations_used for t in self.trials])) if self.trials else 0.0

    @property
    def divergences(self) -> int:
        return sum(t.diverged for t in self.trials)

    def to_dict(self) -> dict:
        return {"task": self.task, "combo": self.combo, "K": self.K, "success_rate": self.success_rate,
                "successes": self.successes, "mean_iterations": self.mean_iterations,
                "divergences": self.divergences, "trials": [asdict(t) for t in self.trials]}

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        return cls(d["task"], d["combo"], int(d["K"]), [TrialResult(**t) for t in d["trials"]])


@dataclass
class BenchReport:
    config: dict
    cells: list[CellResult] = field(default_factory=list)

    def cell(self, task: str, combo: str, K: int | None = None) -> CellResult:
        for c in self.cells:
            if c.task == task and c.combo == combo and (K is None or c.K == K):
                return c
        raise KeyError((task, combo, K))

    def total_successes(self, combo: str, K: int | None = None) -> int:
        return sum(c.successes for c in self.cells if c.combo == combo and (K is None or c.K == K))

    def to_dict(self) -> dict:
        return {"config": self.config, "cells": [c.to_dict() for c in self.cells]}

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        return cls(d["config"], [CellResult.from_dict(c) for c in d["cells"]])

    def table(self) -> str:
        """Rows are combos (one per K), columns are tasks; entries are successes/trials."""
        tasks = list(dict.fromkeys(c.task for c in self.cells))
        rows = list(dict.fromkeys((c.combo, c.K) for c in self.cells))
        head = ["method"] + tasks
        lines = [head]
        for combo, k in rows:
            line = [f"{combo} (K={k})"]
            for t in tasks:
                try:
                    c = self.cell(t, combo, k)
                    line.append(f"{c.successes}/{len(c.trials)}")
                except KeyError:
                    line.append("-")
            lines.append(line)
        widths = [max(len(r[i]) for r in lines) for i in range(len(head))]
        fmt = lambda r: "  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip()  # noqa: E731
        out = [fmt(lines[0]), "  ".join("-" * w for w in widths)]
        out += [fmt(r) for r in lines[1:]]
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# trials


def combo_backends(combo: str, seed: int) -> Backends:
    if combo == "full":
        return Backends(ScriptedSampler(seed), CEMOptimizer(seed=seed), ProgrammaticEvaluator())
    if combo in ("wo_sampler", "cem_variant"):
        # both draw from one seed stream, so the cem_variant samples are a prefix of wo_sampler's
        return Backends(GaussianSampler(inflation=1, seed=seed), CEMOptimizer(seed=seed), ProgrammaticEvaluator())
    if combo == "wo_optimizer":
        return Backends(ScriptedSampler(seed), None, ProgrammaticEvaluator())
    if combo == "wo_rollout":
        return Backends(ScriptedSampler(seed), None, KinematicJudge())
    raise ValueError(f"unknown combo {combo!r}")


def combo_config(combo: str, K: int, seed: int) -> PlannerConfig:
    k = K * GAUSSIAN_INFLATION if combo == "wo_sampler" else K
    return PlannerConfig(K=k, K_max=k + OPTIMIZER_BUDGET, seed=seed)


def run_combo(scene: SceneDescription, combo: str, K: int, seed: int) -> PlanResult:
    backends = combo_backends(combo, seed)
    cfg = combo_config(combo, K, seed)
    if combo == "wo_optimizer":
        return plan_best_of_n(scene, backends, cfg)
    if combo == "wo_rollout":
        return plan_without_rollout(scene, backends, cfg)
    return plan(scene, backends, cfg)


def _score_selected(scene: SceneDescription, result: PlanResult) -> tuple[Verdict, int]:
    """Programmatic verdict for the plan the combo settled on, plus the divergence count."""
    diverged = sum(t.diverged for t in result.traces)
    seq = result.selected
    if seq is None:
        return Verdict(False, result.error or "no plan selected"), diverged
    trace: RolloutTrace | None = None
    for tr in reversed(result.traces):
        if tr.action_sequence == seq:
            trace = tr
            break
    if trace is None:
        trace = sim_rollout(scene, seq)
        diverged += int(trace.diverged)
    if trace.final_state is None or trace.diverged:
        return Verdict(False, trace.failure or "no final state"), diverged
    v = programmatic_evaluate(scene.task.task_id, trace.final_state, scene.task.criterion_params, scene)
    return v, diverged


def _provenance(result: PlanResult) -> str:
    sources = {d["verdict"]["source"] for d in result.verdicts
               if d.get("role") in ("evaluator", "judge") and d.get("verdict")}
    if not sources:
        return "none"
    return "+".join(sorted(sources))


def run_trial(task: str, combo: str, K: int, trial: int, seed: int, jitter_xy: float = JITTER_XY,
              jitter_yaw_deg: float = JITTER_YAW_DEG) -> TrialResult:
    scene = perturb_scene(load_task_scene(task), seed, jitter_xy, jitter_yaw_deg)
    try:
        result = run_combo(scene, combo, K, seed)
    except Exception as exc:  # recorded per trial; one bad trial never aborts a bench
        log.exception("trial %s/%s/K=%d/%d failed", task, combo, K, trial)
        return TrialResult(trial, seed, False, 0, 0, "error", "none", "", f"{type(exc).__name__}: {exc}")
    verdict, diverged = _score_selected(scene, result)
    # plan_without_rollout never simulates, so its iteration count stays zero
    return TrialResult(trial, seed, bool(verdict.success), int(result.iterations_used), int(diverged),
                       result.termination, _provenance(result), verdict.rationale, result.error)


def _run_job(job: tuple) -> TrialResult:
    return run_trial(*job)


def run_bench(config: BenchConfig, workers: int = 1) -> BenchReport:
    """Run every (task, combo, K) cell; results do not depend on ``workers``."""
    seeds = config.trial_seeds()
    keys, jobs = [], []
    for task in config.tasks:
        for combo in config.backend_matrix:
            for K in config.K_values:
                for i, s in enumerate(seeds):
                    keys.append((task, combo, int(K)))
                    jobs.append((task, combo, int(K), i, int(s), config.jitter_xy, config.jitter_yaw_deg))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1, len(jobs))) as ex:
            results = list(ex.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    cells: dict[tuple, CellResult] = {}
    for key, res in zip(keys, results):
        cells.setdefault(key, CellResult(*key)).trials.append(res)
        log.info("%s %s K=%d trial %d: %s", *key, res.trial, "success" if res.success else "failure")
    return BenchReport(config.to_dict(), list(cells.values()))


def emit_report(report: BenchReport, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``report.json`` (reloadable) and ``report.txt`` (table) into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        jpath, tpath = out / "report.json", out / "report.txt"
        jpath.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        tpath.write_text(report.table(), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    return jpath, tpath


def load_report(path: str | Path) -> BenchReport:
    return BenchReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def report_summary(report: BenchReport) -> dict[str, Any]:
    return {f"{c.task}/{c.combo}/K={c.K}": c.success_rate for c in report.cells}
