"""Deterministic success checks and scalar costs for the five benchmark tasks.

Every check reads only the final simulator snapshot (plus the scene for object
roles). Alongside the boolean verdict each check reports a cost, lower is better,
that sampling optimizers use to rank rollouts.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import MissingCriterionParam
from ..scene import TASK_CRITERIA, TASK_ROLES, SceneDescription
from ..sim.mpm import squeeze_bbox
from ..transforms import quat_to_matrix
from .base import Verdict

# relative slack so that a ratio sitting exactly on a published bound passes despite rounding
BOUND_RTOL = 1e-9
TOPPLE_PENALTY = 1.0


def _params(task_id: str, criterion_params: dict) -> dict[str, float]:
    out = {}
    for key, default in TASK_CRITERIA[task_id].items():
        if key in criterion_params:
            out[key] = float(criterion_params[key])
        elif default is None:
            raise MissingCriterionParam(f"{task_id} requires criterion parameter {key!r}")
        else:
            out[key] = float(default)
    return out


def _roles(task_id: str, state, scene: SceneDescription | None) -> dict[str, str]:
    if scene is not None and scene.task.objects:
        return dict(scene.task.objects)
    names = list(state.rigid) + list(state.deformable)
    if task_id == "bowl_stacking":
        return {"upper": names[0], "lower": names[1]}
    return {"target": names[0]}


def _tilt_deg(q) -> float:
    up = quat_to_matrix(q)[:, 2]
    return math.degrees(math.acos(max(-1.0, min(1.0, abs(float(up[2]))))))


def opening_ratio(points) -> float:
    """Endpoint gap divided by the largest distance of any point from the endpoint chord (xy plane)."""
    xy = np.asarray(points, dtype=float).reshape(-1, 3)[:, :2]
    a, b = xy[0], xy[-1]
    chord = b - a
    gap = float(np.linalg.norm(chord))
    if gap < 1e-12:
        depth = float(np.max(np.linalg.norm(xy - a, axis=1)))
    else:
        rel = xy - a
        depth = float(np.max(np.abs(rel[:, 0] * chord[1] - rel[:, 1] * chord[0]) / gap))
    if depth < 1e-12:
        return math.inf
    return gap / depth


def _in_band(x: float, lo: float, hi: float) -> bool:
    return lo * (1 - BOUND_RTOL) <= x <= hi * (1 + BOUND_RTOL)


def evaluate_push(state, p, roles) -> Verdict:
    s = state.rigid[roles["target"]]
    tilt = _tilt_deg(s.pose.q)
    err = abs(float(s.pose.p[0]) - p["target_x"])
    toppled = tilt >= p["tilt_threshold_deg"]
    ok = not toppled and err < p["align_tol"]
    cost = err + tilt / 90.0 + (TOPPLE_PENALTY if toppled else 0.0)
    why = f"tilt {tilt:.1f} deg ({'toppled' if toppled else 'upright'}), x error {err * 1000:.1f} mm"
    return Verdict(ok, why, score=cost)


def evaluate_bowls(state, p, roles) -> Verdict:
    up = state.rigid[roles["upper"]]
    lo = state.rigid[roles["lower"]]
    upper_c = np.asarray(up.pose.p)
    lower_c = np.asarray(lo.pose.p)
    horiz = float(np.linalg.norm(upper_c[:2] - lower_c[:2]))
    speed = float(np.linalg.norm(up.linear_velocity))
    floor = float(lower_c[2]) + p["floor_offset"]
    height = float(upper_c[2]) - floor
    inside = horiz <= p["rim_radius"]
    resting = speed < p["rest_speed"]
    above = height >= -1e-3
    ok = inside and resting and above
    cost = max(0.0, horiz - 0.5 * p["rim_radius"]) + (0.0 if above else 0.05 - min(height, 0.0))
    cost += 0.0 if resting else 0.05
    why = (f"upper bowl {horiz * 1000:.1f} mm from lower axis (limit {p['rim_radius'] * 1000:.0f} mm), "
           f"base {height * 1000:+.1f} mm above floor, speed {speed:.2e} m/s")
    return Verdict(ok, why, score=cost)


def evaluate_pivot(state, p, roles, scene=None) -> Verdict:
    s = state.rigid[roles["target"]]
    axis = np.array([0.0, 0.0, 1.0])
    if scene is not None:
        ext = np.ptp(scene.rigid(roles["target"]).mesh.vertices, axis=0)
        axis = np.eye(3)[int(np.argmax(ext))]
    d = quat_to_matrix(s.pose.q) @ axis
    ang = math.degrees(math.acos(max(-1.0, min(1.0, abs(float(d[2]))))))
    ok = ang < p["vertical_tol_deg"]
    return Verdict(ok, f"long axis {ang:.1f} deg from vertical (limit {p['vertical_tol_deg']:.0f})",
                   score=math.radians(ang))


def evaluate_rope(state, p, roles) -> Verdict:
    r = opening_ratio(state.deformable[roles["target"]])
    ok = _in_band(r, p["ratio_min"], p["ratio_max"])
    centre = math.sqrt(p["ratio_min"] * p["ratio_max"])
    cost = abs(math.log(r / centre)) if math.isfinite(r) else 10.0
    return Verdict(ok, f"opening ratio {r:.3f} (band [{p['ratio_min']}, {p['ratio_max']}])", score=cost)


def evaluate_dough(state, p, roles) -> Verdict:
    major, minor = squeeze_bbox(state.deformable[roles["target"]])
    r = major / minor if minor > 0 else math.inf
    ok = r <= p["ratio_max"] * (1 + BOUND_RTOL)
    return Verdict(ok, f"footprint {major * 1000:.1f} x {minor * 1000:.1f} mm, ratio {r:.3f} (max {p['ratio_max']})",
                   score=r - 1.0)


def programmatic_evaluate(task_id: str, final_state, criterion_params: dict,
                          scene: SceneDescription | None = None) -> Verdict:
    """Geometric success check of ``final_state`` (a SimSnapshot) for ``task_id``."""
    if task_id == "custom" or task_id not in TASK_CRITERIA:
        raise ValueError(f"no programmatic evaluator for task {task_id!r}")
    p = _params(task_id, criterion_params)
    roles = _roles(task_id, final_state, scene)
    if task_id == "non_toppling_push":
        return evaluate_push(final_state, p, roles)
    if task_id == "bowl_stacking":
        return evaluate_bowls(final_state, p, roles)
    if task_id == "pivoting":
        return evaluate_pivot(final_state, p, roles, scene)
    if task_id == "shape_rope":
        return evaluate_rope(final_state, p, roles)
    return evaluate_dough(final_state, p, roles)


def has_programmatic(task_id: str) -> bool:
    return task_id in TASK_ROLES and task_id != "custom"


class ProgrammaticEvaluator:
    """Evaluator backend wrapping :func:`programmatic_evaluate`; diverged rollouts fail."""

    def evaluate(self, scene: SceneDescription, trace) -> Verdict:
        if trace.final_state is None:
            return Verdict(False, trace.failure or "rollout produced no state", score=math.inf)
        v = programmatic_evaluate(scene.task.task_id, trace.final_state, scene.task.criterion_params, scene)
        if trace.diverged:
            return Verdict(False, f"simulation diverged; {v.rationale}", score=math.inf)
        return v


class ConstantEvaluator:
    """Always returns the same verdict; used to exercise the planning loop."""

    def __init__(self, success: bool):
        self.success = bool(success)

    def evaluate(self, scene, trace) -> Verdict:
        return Verdict(self.success, "constant verdict", source="programmatic", score=0.0 if self.success else 1.0)
