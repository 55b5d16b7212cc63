"""Deterministic stand-ins for the language-model roles.

The task-aware sampler writes plans the way a physics-unaware planner would: its
first proposal uses a nominal guess (push at mid height, squeeze to the short
side, ...) and the rest jitter the parameters that physics decides. CEM refines
the continuous parameters of the best rollout seen so far using programmatic costs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..actions import MAX_GRIPPER_WIDTH, ActionSequence, SymbolicAction
from ..errors import InvalidParameter
from ..scene import SceneDescription
from ..transforms import Pose, quat_to_matrix
from .base import Verdict
from .evaluate import programmatic_evaluate

log = logging.getLogger(__name__)

A = SymbolicAction


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def _yaw_of_axis(d) -> float:
    return math.atan2(float(d[1]), float(d[0]))


def _principal_axis(points) -> np.ndarray:
    xy = np.asarray(points)[:, :2]
    c = xy - xy.mean(axis=0)
    _, vecs = np.linalg.eigh(c.T @ c)
    return vecs[:, -1]


def _align_rotation(current_yaw: float, axis_yaw: float) -> float:
    """Smallest yaw change putting the tool y-axis along ``axis_yaw`` (sign-agnostic)."""
    d = _wrap(axis_yaw - (current_yaw + math.pi / 2))
    if d > math.pi / 2:
        d -= math.pi
    elif d < -math.pi / 2:
        d += math.pi
    return d


def _maybe_rotate(dyaw: float) -> list[SymbolicAction]:
    return [A.rotate(dyaw, "align the jaws with the object")] if abs(dyaw) > 1e-3 else []


# ---------------------------------------------------------------------------
# task templates: each maps a parameter dict to a plan; ``nominal`` and ``jitter`` define the prior


def _push_plan(scene: SceneDescription, p: dict) -> ActionSequence:
    g = scene.gripper
    obj = scene.rigid(scene.task.objects["target"])
    hx = scene.gripper.finger_half_extents[0]
    half = 0.5 * float(np.ptp(obj.mesh.vertices[:, 0]))
    bx, by = obj.pose.p[0], obj.pose.p[1]
    gap = 0.015
    ax = bx - half - hx - gap
    target = scene.task.criterion_params["target_x"]
    dist = target - bx + gap + p["overshoot"]
    return ActionSequence("slide the carton along +x with the closed jaws", (
        A.grasp(0.0, "close the jaws to form a pusher"),
        A.move(ax - g.pose.p[0], by - g.pose.p[1], 0.0, "move behind the carton"),
        A.descend(g.pose.p[2] - p["height"], "lower the pusher to the contact height"),
        A.push(dist, 0.0, "push the carton to the line of the others"),
        A.lift(0.05, "retract upward"),
    ))


def _bowl_plan(scene: SceneDescription, p: dict) -> ActionSequence:
    g = scene.gripper
    up = scene.rigid(scene.task.objects["upper"])
    lo = scene.rigid(scene.task.objects["lower"])
    grasp_z = 0.018
    lift = 0.08
    sx, sy = up.pose.p[:2]
    lx, ly = lo.pose.p[0] + p["offset_x"], lo.pose.p[1] + p["offset_y"]
    return ActionSequence("pick the small bowl by its outer wall and drop it into the large bowl", (
        A.move(sx - g.pose.p[0], sy - g.pose.p[1], 0.0, "hover over the small bowl"),
        A.descend(g.pose.p[2] - grasp_z, "bring the open jaws around the bowl"),
        A.grasp(p["grip"], "close on the bowl wall"),
        A.lift(lift, "raise the bowl above the rims"),
        A.move(lx - sx, ly - sy, 0.0, "carry it over the large bowl"),
        A.descend(p["lower"], "lower it toward the large bowl"),
        A.release("let go"),
        A.lift(0.05, "retract"),
    ))


def _pivot_plan(scene: SceneDescription, p: dict) -> ActionSequence:
    g = scene.gripper
    obj = scene.rigid(scene.task.objects["target"])
    hx = scene.gripper.finger_half_extents[0]
    corners = obj.pose.apply(obj.mesh.vertices)
    low = corners[np.argsort(corners[:, 2])[:4]]
    foot = low.mean(axis=0)
    # push direction: horizontal projection of the long axis (towards the support)
    axis = quat_to_matrix(obj.pose.q)[:, 2]
    d = axis[:2] / max(np.linalg.norm(axis[:2]), 1e-9)
    back = float(np.min((corners[:, :2] - foot[:2]) @ d))
    start = foot[:2] + d * (back - hx - 0.015)
    yaw_push = _yaw_of_axis(d)
    dyaw = _wrap(yaw_push - g.pose.yaw)
    return ActionSequence("push the foot of the snack box toward the brown box until it stands", tuple(
        [A.grasp(0.0, "close the jaws")]
        + [A.move(start[0] - g.pose.p[0], start[1] - g.pose.p[1], 0.0, "move behind the foot")]
        + _maybe_rotate(dyaw)
        + [A.descend(g.pose.p[2] - p["height"], "lower to the foot"),
           A.push(d[0] * p["distance"], d[1] * p["distance"], "slide the foot toward the support"),
           A.lift(0.05, "retract")]))


def _rope_plan(scene: SceneDescription, p: dict) -> ActionSequence:
    g = scene.gripper
    rope = scene.deformable(scene.task.objects["target"])
    pts = np.asarray(rope.particles)
    axis = _principal_axis(pts)
    centre = pts.mean(axis=0)[:2] + axis * p["along"]
    normal = np.array([-axis[1], axis[0]])
    if normal @ (np.array(g.pose.p[:2]) - centre) > 0:
        normal = -normal
    dyaw = _align_rotation(g.pose.yaw, _yaw_of_axis(normal))
    grasp_z = scene.workspace_bounds.lo[2] + 0.001
    pull = normal * p["pull"]
    return ActionSequence("grab the middle of the rope and drag it sideways into a U", tuple(
        [A.move(centre[0] - g.pose.p[0], centre[1] - g.pose.p[1], 0.0, "hover over the rope middle")]
        + _maybe_rotate(dyaw)
        + [A.descend(g.pose.p[2] - grasp_z, "straddle the rope"),
           A.grasp(0.0, "pinch the rope"),
           A.move(pull[0], pull[1], 0.0, "drag the middle sideways"),
           A.release("let go"),
           A.lift(0.05, "retract")]))


def _dough_plan(scene: SceneDescription, p: dict) -> ActionSequence:
    g = scene.gripper
    dough = scene.deformable(scene.task.objects["target"])
    pts = np.asarray(dough.particles)
    centre = pts.mean(axis=0)
    dyaw = _align_rotation(g.pose.yaw, _yaw_of_axis(_principal_axis(pts)))
    squeeze_z = scene.workspace_bounds.lo[2] + 0.002
    return ActionSequence("squeeze the dough along its long side", tuple(
        [A.move(centre[0] - g.pose.p[0], centre[1] - g.pose.p[1], 0.0, "hover over the dough")]
        + _maybe_rotate(dyaw)
        + [A.descend(g.pose.p[2] - squeeze_z, "place the plates at both ends"),
           A.grasp(p["width"], "press the ends together"),
           A.release("open the plates"),
           A.lift(0.05, "retract")]))


def _minor_extent(scene):
    pts = np.asarray(scene.deformable(scene.task.objects["target"]).particles)
    axis = _principal_axis(pts)
    other = np.array([-axis[1], axis[0]])
    proj = pts[:, :2] @ other
    return float(np.ptp(proj))


@dataclass(frozen=True)
class TaskTemplate:
    build: Callable[[SceneDescription, dict], ActionSequence]
    nominal: Callable[[SceneDescription], dict]
    jitter: Callable[[SceneDescription, np.random.Generator], dict]


TEMPLATES: dict[str, TaskTemplate] = {
    "non_toppling_push": TaskTemplate(
        _push_plan,
        lambda s: {"height": 0.06, "overshoot": 0.0},
        lambda s, r: {"height": float(r.uniform(0.015, 0.11)), "overshoot": float(r.normal(0.0, 0.01))},
    ),
    "bowl_stacking": TaskTemplate(
        _bowl_plan,
        lambda s: {"offset_x": 0.0, "offset_y": 0.0, "lower": 0.06, "grip": 0.055},
        lambda s, r: {"offset_x": float(r.normal(0.0, 0.02)), "offset_y": float(r.normal(0.0, 0.02)),
                      "lower": float(r.uniform(0.02, 0.065)), "grip": float(r.uniform(0.04, 0.065))},
    ),
    "pivoting": TaskTemplate(
        _pivot_plan,
        lambda s: {"height": 0.03, "distance": 0.06},
        lambda s, r: {"height": float(r.uniform(0.011, 0.05)), "distance": float(r.uniform(0.04, 0.14))},
    ),
    "shape_rope": TaskTemplate(
        _rope_plan,
        lambda s: {"along": 0.0, "pull": 0.08},
        lambda s, r: {"along": float(r.normal(0.0, 0.02)), "pull": float(r.uniform(0.04, 0.16))},
    ),
    "shape_dough": TaskTemplate(
        _dough_plan,
        lambda s: {"width": _minor_extent(s)},
        lambda s, r: {"width": float(r.uniform(0.035, 0.075))},
    ),
}


class ScriptedSampler:
    """Task-aware proposals: the nominal plan first, then ``n - 1`` jittered variants."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def sample(self, scene: SceneDescription, n: int, frame=None, seed: int = 0) -> list[ActionSequence]:
        tmpl = TEMPLATES.get(scene.task.task_id)
        if tmpl is None:
            raise ValueError(f"no scripted template for task {scene.task.task_id!r}")
        rng = np.random.default_rng([self.seed, seed])
        out = []
        for i in range(n):
            params = tmpl.nominal(scene) if i == 0 else tmpl.jitter(scene, rng)
            try:
                out.append(tmpl.build(scene, params))
            except InvalidParameter as exc:
                log.debug("skipping invalid scripted proposal: %s", exc)
        return out


# ---------------------------------------------------------------------------
# Gaussian sampling over gripper deltas


GAUSSIAN_PATTERN = ("MOVE", "ROTATE", "MOVE", "GRASP")


def gaussian_sample(start: Pose, n: int, sigma_xyz: float = 0.05, sigma_yaw: float = 0.3, seed: int = 0,
                    length: int = 4, bounds=None, start_width: float = MAX_GRIPPER_WIDTH,
                    sigma_width: float | None = None) -> list[ActionSequence]:
    """Uninformed plans: zero-mean Gaussian deltas truncated at 4 sigma, kept inside ``bounds``.

    The width delta uses ``sigma_width`` (defaults to ``sigma_xyz``).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo = np.asarray(bounds.lo) if bounds is not None else None
    hi = np.asarray(bounds.hi) if bounds is not None else None

    def draw(sigma, size=None):
        return np.clip(rng.normal(0.0, 1.0, size), -4.0, 4.0) * sigma

    out = []
    for _ in range(n):
        pos = np.array(start.p, dtype=float)
        width = float(start_width)
        actions = []
        for k in range(length):
            kind = GAUSSIAN_PATTERN[k % len(GAUSSIAN_PATTERN)]
            if kind == "MOVE":
                d = draw(sigma_xyz, 3)
                if lo is not None:
                    d = np.clip(pos + d, lo, hi) - pos
                pos = pos + d
                actions.append(A.move(*(float(x) for x in d)))
            elif kind == "ROTATE":
                actions.append(A.rotate(float(draw(sigma_yaw))))
            else:
                sw = sigma_xyz if sigma_width is None else sigma_width
                width = float(np.clip(width + draw(sw), 0.0, MAX_GRIPPER_WIDTH))
                actions.append(A.grasp(width))
        out.append(ActionSequence("random gripper motion", tuple(actions)))
    return out


class GaussianSampler:
    def __init__(self, sigma_xyz: float = 0.05, sigma_yaw: float = 0.3, length: int = 4, inflation: int = 5,
                 seed: int = 0):
        self.sigma_xyz = sigma_xyz
        self.sigma_yaw = sigma_yaw
        self.length = length
        self.inflation = inflation
        self.seed = seed

    def sample(self, scene: SceneDescription, n: int, frame=None, seed: int = 0) -> list[ActionSequence]:
        g = scene.gripper
        return gaussian_sample(g.pose, n * self.inflation, self.sigma_xyz, self.sigma_yaw,
                               seed=int(np.random.SeedSequence([self.seed, seed]).generate_state(1)[0]),
                               length=self.length, bounds=scene.workspace_bounds, start_width=g.width)


# ---------------------------------------------------------------------------
# cross-entropy method


_PARAM_SIGMA = {"delta_x": 0.01, "delta_y": 0.01, "delta_z": 0.01, "delta_yaw": 0.1, "width": 0.008}


def sequence_params(seq: ActionSequence) -> tuple[np.ndarray, list[tuple[int, str]]]:
    """Flatten the continuous parameters of ``seq`` with (action index, field) labels."""
    vals, labels = [], []
    for i, a in enumerate(seq.actions):
        for k, v in a.params().items():
            vals.append(v)
            labels.append((i, k))
    return np.array(vals, dtype=float), labels


def with_params(seq: ActionSequence, x: np.ndarray, labels) -> ActionSequence:
    per: dict[int, dict[str, float]] = {}
    for v, (i, k) in zip(x, labels):
        if k == "width":
            v = min(max(v, 0.0), MAX_GRIPPER_WIDTH)
        elif k == "delta_z" and seq.actions[i].type in ("LIFT", "DESCEND"):
            v = max(v, 0.0)
        per.setdefault(i, {})[k] = float(v)
    acts = tuple(a.with_params(**per[i]) if i in per else a for i, a in enumerate(seq.actions))
    return ActionSequence(seq.description, acts)


@dataclass
class CEMResult:
    best: np.ndarray
    best_cost: float
    means: list[np.ndarray]
    elites: list[np.ndarray]
    evaluations: int


def cem_minimize(cost: Callable[[np.ndarray], float], mean, std, population: int = 8, elite_frac: float = 0.25,
                 iterations: int = 3, seed: int = 0, stop: Callable[[np.ndarray, float], bool] | None = None,
                 min_std: float = 0.0) -> CEMResult:
    """Cross-entropy minimization with a diagonal Gaussian refit to the elite set each iteration."""
    if population < 1 or iterations < 1:
        raise ValueError("population and iterations must be >= 1")
    if not 0.0 < elite_frac <= 1.0:
        raise ValueError("elite_frac must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    mu = np.array(mean, dtype=float)
    sd = np.broadcast_to(np.asarray(std, dtype=float), mu.shape).copy()
    n_elite = max(1, int(math.ceil(elite_frac * population)))
    best, best_cost = mu.copy(), math.inf
    means, elites_hist = [mu.copy()], []
    evals = 0
    for _ in range(iterations):
        xs = mu + sd * rng.standard_normal((population, mu.size))
        costs = np.empty(population)
        for j, x in enumerate(xs):
            costs[j] = cost(x)
            evals += 1
            if costs[j] < best_cost:
                best, best_cost = x.copy(), float(costs[j])
            if stop is not None and stop(x, costs[j]):
                return CEMResult(x.copy(), float(costs[j]), means, elites_hist, evals)
        order = np.argsort(costs, kind="stable")[:n_elite]
        elite = xs[order]
        elites_hist.append(elite)
        mu = elite.mean(axis=0)
        sd = np.maximum(elite.std(axis=0), min_std)
        means.append(mu.copy())
    return CEMResult(best, best_cost, means, elites_hist, evals)


class CEMOptimizer:
    """Refines the lowest-cost rollout in the context with simulated CEM.

    Returns the context's best plan untouched when it already succeeds, so a good
    initial sample costs no extra rollouts.
    """

    def __init__(self, population: int = 8, elite_frac: float = 0.25, iterations: int = 2, seed: int = 0,
                 rollout=None, sigma_scale: float = 1.0):
        self.population = population
        self.elite_frac = elite_frac
        self.iterations = iterations
        self.seed = seed
        self.rollout = rollout
        self.sigma_scale = sigma_scale
        self.rollouts_used = 0

    def _cost(self, scene, seq) -> tuple[float, bool]:
        from ..planner import sim_rollout

        tr = (self.rollout or sim_rollout)(scene, seq)
        self.rollouts_used += 1
        if tr.final_state is None or tr.diverged:
            return math.inf, False
        v = programmatic_evaluate(scene.task.task_id, tr.final_state, scene.task.criterion_params, scene)
        return float(v.score), v.success

    def optimize(self, context) -> ActionSequence:
        scene = context.scene
        if scene is None:
            raise ValueError("CEM needs the scene to roll out candidates")
        scored = [(r.verdict.score if r.verdict is not None and r.verdict.score is not None else math.inf, i)
                  for i, r in enumerate(context.records)]
        cost0, i0 = min(scored)
        base = context.traces[i0].action_sequence
        v0 = context.records[i0].verdict
        if v0 is not None and v0.success:
            return base
        x0, labels = sequence_params(base)
        if x0.size == 0:
            return base
        std = np.array([_PARAM_SIGMA[k] for _, k in labels]) * self.sigma_scale
        found: dict[str, ActionSequence] = {}

        def cost(x):
            seq = with_params(base, x, labels)
            c, ok = self._cost(scene, seq)
            if ok:
                found["seq"] = seq
            return c

        res = cem_minimize(cost, x0, std, self.population, self.elite_frac, self.iterations,
                           seed=int(np.random.SeedSequence([self.seed, len(context)]).generate_state(1)[0]),
                           stop=lambda x, c: "seq" in found)
        if "seq" in found:
            return found["seq"]
        if res.best_cost < cost0:
            return with_params(base, res.best, labels)
        return base


# ---------------------------------------------------------------------------
# judging plans without simulation


class KinematicJudge:
    """Accepts any plan that lowers inside the workspace and moves the gripper.

    It stands in for judging proposals by reasoning alone: it cannot anticipate
    toppling, slipping or material response, so it keeps the sampler's first
    feasible proposal.
    """

    def judge_plan(self, scene: SceneDescription, seq: ActionSequence) -> Verdict:
        from ..actions import action_to_pose
        from ..errors import WorkspaceViolation

        try:
            wps = action_to_pose(seq, scene.gripper.pose, scene.gripper.width, scene.workspace_bounds)
        except WorkspaceViolation as exc:
            return Verdict(False, f"infeasible: {exc}")
        moved = any(np.linalg.norm(w.pose.p - scene.gripper.pose.p) > 1e-6 for w in wps)
        return Verdict(moved, "plan is kinematically feasible" if moved else "plan does not move")

    def evaluate(self, scene, trace) -> Verdict:
        return self.judge_plan(scene, trace.action_sequence)
