import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenes import box_scene
from simpact.actions import ActionSequence, SymbolicAction as A
from simpact.backends.evaluate import ProgrammaticEvaluator, opening_ratio, programmatic_evaluate
from simpact.errors import MissingCriterionParam
from simpact.planner import RolloutTrace
from simpact.sim.rigid import RigidState
from simpact.sim.simulator import SimSnapshot
from simpact.transforms import Pose, quat_from_axis_angle


def snap(rigid=None, deformable=None):
    return SimSnapshot(0.0, Pose(), 0.1, rigid or {}, deformable or {})


def body(p, q=(1.0, 0.0, 0.0, 0.0), v=(0.0, 0.0, 0.0)):
    return RigidState(Pose(p, q), np.asarray(v, float))


def tilted(deg):
    return tuple(quat_from_axis_angle([1.0, 0.0, 0.0], math.radians(deg)))


PUSH = {"target_x": 0.1}


def push_verdict(x, tilt=0.0):
    return programmatic_evaluate("non_toppling_push", snap({"box": body((x, 0, 0), tilted(tilt))}), PUSH)


def test_push_examples():
    assert push_verdict(0.1).success
    assert push_verdict(0.105).success
    assert not push_verdict(0.12).success
    v = push_verdict(0.1, tilt=20.0)
    assert not v.success and "toppled" in v.rationale
    assert push_verdict(0.1).score < push_verdict(0.12).score < push_verdict(0.1, 20.0).score


def test_push_needs_target():
    with pytest.raises(MissingCriterionParam):
        programmatic_evaluate("non_toppling_push", snap({"box": body((0, 0, 0))}), {})


def bowls(dx, speed=0.0, dz=0.01):
    s = snap({"top": body((dx, 0, dz), v=(speed, 0, 0)), "bottom": body((0, 0, 0))})
    return programmatic_evaluate("bowl_stacking", s, {"rim_radius": 0.05})


def test_bowl_examples():
    assert bowls(0.0).success
    assert bowls(0.049).success
    assert not bowls(0.06).success
    assert not bowls(0.0, speed=0.01).success
    assert not bowls(0.0, dz=-0.01).success


@pytest.mark.parametrize("deg,ok", [(0.0, True), (9.0, True), (11.0, False), (90.0, False)])
def test_pivot_examples(deg, ok):
    s = snap({"bar": body((0, 0, 0), tilted(deg))})
    assert programmatic_evaluate("pivoting", s, {}).success is ok


def arc(n=41, radius=0.05, sweep=math.pi):
    t = np.linspace(0.0, sweep, n)
    return np.column_stack([radius * np.cos(t), radius * np.sin(t), np.full(n, 0.004)])


def test_opening_ratio_shapes():
    assert opening_ratio(arc()) == pytest.approx(2.0, rel=1e-3)
    straight = np.column_stack([np.linspace(0, 0.2, 21), np.zeros(21), np.zeros(21)])
    assert opening_ratio(straight) == math.inf
    closed = arc(sweep=2 * math.pi)
    assert opening_ratio(closed) == pytest.approx(0.0, abs=1e-9)


def test_rope_band():
    rope = lambda pts: programmatic_evaluate("shape_rope", snap(deformable={"rope": pts}), {})
    assert rope(arc()).success
    assert not rope(np.column_stack([np.linspace(0, 0.2, 21), np.zeros(21), np.zeros(21)])).success


def test_dough_square_footprint_passes():
    g = np.stack(np.meshgrid(np.linspace(0, 0.04, 5), np.linspace(0, 0.04, 5), [0.0]), -1).reshape(-1, 3)
    assert programmatic_evaluate("shape_dough", snap(deformable={"dough": g}), {}).success
    long = g * [2.0, 1.0, 1.0]
    assert not programmatic_evaluate("shape_dough", snap(deformable={"dough": long}), {}).success


def test_custom_task_has_no_evaluator():
    with pytest.raises(ValueError):
        programmatic_evaluate("custom", snap(), {})


def test_evaluator_fails_empty_or_diverged_trace():
    scene = box_scene()
    trace = RolloutTrace(ActionSequence("x", (A.lift(0.01),)), failure="WorkspaceViolation: out")
    assert not ProgrammaticEvaluator().evaluate(scene, trace).success
    trace = RolloutTrace(ActionSequence("x", (A.lift(0.01),)), final_state=snap({"box": body((0.1, 0, 0))}),
                         diverged=True)
    assert not ProgrammaticEvaluator().evaluate(scene, trace).success


@given(st.floats(0, 2 * math.pi), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(0.2, 1.8))
@settings(max_examples=50)
def test_shape_metrics_invariant_to_planar_motion(theta, tx, ty, sweep_frac):
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    pts = arc(sweep=sweep_frac * math.pi)
    moved = pts @ rot.T + [tx, ty, 0.0]
    assert opening_ratio(moved) == pytest.approx(opening_ratio(pts), rel=1e-6)
    a = programmatic_evaluate("shape_dough", snap(deformable={"d": pts}), {})
    b = programmatic_evaluate("shape_dough", snap(deformable={"d": moved}), {})
    assert a.score == pytest.approx(b.score, rel=1e-6, abs=1e-9)
