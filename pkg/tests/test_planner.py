import json

import numpy as np
import pytest

from scenes import box_scene, custom_box_scene, push_sequence, rope_scene
from simpact.actions import ActionSequence, SymbolicAction as A
from simpact.backends.base import Backends
from simpact.backends.evaluate import ConstantEvaluator
from simpact.errors import BackendError, MalformedAfterRetries
from simpact.planner import PlannerConfig, RolloutTrace, build_context, plan, plan_best_of_n, sim_rollout
from simpact.sim.simulator import MAX_KEYPOINTS


def test_motionless_rollout_keeps_box():
    scene = box_scene()
    trace = sim_rollout(scene, ActionSequence("idle", (A.grasp(scene.gripper.width),)), settle_time=0.5)
    assert not trace.failed and trace.steps > 0
    p0 = scene.rigid_objects[0].pose.p
    assert np.linalg.norm(trace.final_state.rigid["box"].pose.p - p0) < 1e-4
    assert [i for i, _ in trace.per_primitive_states] == [0]


def test_low_push_moves_box_by_commanded_distance():
    scene = box_scene()
    trace = sim_rollout(scene, push_sequence(scene, 0.02, 0.10), settle_time=0.5)
    dx = trace.final_state.rigid["box"].pose.p[0] - scene.rigid_objects[0].pose.p[0]
    gap = 0.01  # push_sequence stops this far short of the box
    assert dx == pytest.approx(0.10 - gap, rel=0.2)


def test_workspace_violation_is_not_simulated():
    scene = box_scene()
    trace = sim_rollout(scene, ActionSequence("too far", (A.move(2.0, 0.0, 0.0),)))
    assert trace.steps == 0 and trace.final_state is None
    assert trace.failure.startswith("WorkspaceViolation")


def test_rollout_frames(tmp_path):
    scene = box_scene()
    seq = ActionSequence("two", (A.lift(0.01), A.descend(0.01)))
    trace = sim_rollout(scene, seq, frame_dir=tmp_path, settle_time=0.2)
    # initial, one per primitive, settled final
    assert [p.rsplit("/", 1)[-1] for p in trace.frames] == [f"fig_{i}.png" for i in range(4)]


def fake_trace(n_frames, n_prims=2, scene=None):
    scene = scene or rope_scene()
    tr = sim_rollout(scene, ActionSequence("lift", tuple(A.lift(0.01) for _ in range(n_prims))), settle_time=0.1)
    tr.frames = [f"/tmp/x/fig_{i}.png" for i in range(n_frames)]
    return tr


def test_build_context_numbers_figures_globally():
    ctx = build_context([fake_trace(2), fake_trace(3)], [None, None])
    assert [r.figures for r in ctx.records] == [["fig_0.png", "fig_1.png"], ["fig_2.png", "fig_3.png", "fig_4.png"]]
    assert [r.index for r in ctx.records] == [0, 1]
    assert [s["primitive"] for s in ctx.records[0].states] == [0, 1]
    for r in ctx.records:
        for s in r.states:
            assert len(s["deformable"]["rope"]["keypoints"]) <= MAX_KEYPOINTS
    json.dumps(ctx.to_dict())
    with pytest.raises(ValueError):
        build_context([], [])


class _Sampler:
    def __init__(self, n_valid=None, error=None):
        self.n_valid, self.error = n_valid, error

    def sample(self, scene, n, frame=None, seed=0):
        if self.error:
            raise self.error
        return [ActionSequence(f"s{i}", (A.lift(0.01),)) for i in range(n)]


class _Optimizer:
    def __init__(self, fail_first=0):
        self.fail_first, self.calls = fail_first, 0

    def optimize(self, ctx):
        self.calls += 1
        if self.calls <= self.fail_first:
            raise MalformedAfterRetries("bad reply")
        return ActionSequence("opt", (A.lift(0.02),))


def stub_rollout(scene, seq, frame_dir=None, settle_time=1.0, dt=2e-3, seed=0):
    return RolloutTrace(seq, steps=1)


def test_malformed_optimizer_reply_consumes_iteration():
    opt = _Optimizer(fail_first=1)
    r = plan(custom_box_scene(), Backends(_Sampler(), opt, ConstantEvaluator(True)), PlannerConfig(K=2, K_max=4),
             rollout_fn=stub_rollout)
    assert r.success and opt.calls == 2 and r.iterations_used == 4 and len(r.traces) == 3
    assert [v["role"] for v in r.verdicts] == ["context", "context", "optimizer_error", "evaluator"]


def test_backend_error_stops_planning():
    r = plan(custom_box_scene(), Backends(_Sampler(error=BackendError("down")), _Optimizer(), ConstantEvaluator(True)),
             PlannerConfig(K=2, K_max=3), rollout_fn=stub_rollout)
    assert r.termination == "backend_error" and "down" in r.error and not r.traces


def test_run_dir_written(tmp_path):
    r = plan(custom_box_scene(), Backends(_Sampler(), _Optimizer(), ConstantEvaluator(False)),
             PlannerConfig(K=1, K_max=2), run_dir=tmp_path, rollout_fn=stub_rollout)
    assert r.termination == "budget_exhausted"
    saved = json.loads((tmp_path / "plan.json").read_text())
    assert saved["iterations_used"] == 2 and len(saved["traces"]) == 2
    assert (tmp_path / "traces" / "1" / "states.jsonl").exists()
    assert (tmp_path / "backend_log.jsonl").exists()


def test_best_of_n_stops_at_first_success():
    r = plan_best_of_n(custom_box_scene(), Backends(_Sampler(), None, ConstantEvaluator(True)),
                       PlannerConfig(K=4, K_max=5), rollout_fn=stub_rollout)
    assert r.success and len(r.traces) == 1 and r.selected.description == "s0"


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(K=0)
    with pytest.raises(ValueError):
        PlannerConfig(K=3, K_max=3)
