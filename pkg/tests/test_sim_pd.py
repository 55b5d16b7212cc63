import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenes import base_dict, rope_scene
from simpact.errors import TooFewParticles
from simpact.scene import scene_from_dict
from simpact.sim.pd import PDState, RopeBody, build_rope_constraints, grasp_test, pd_step
from simpact.transforms import Pose

HALF = (0.01, 0.005, 0.02)


def straight(n, spacing=0.01):
    return np.stack([np.arange(n) * spacing, np.zeros(n), np.zeros(n)], axis=1)


@pytest.mark.parametrize("n,stretch,bend", [(10, 9, 8), (3, 2, 1)])
def test_constraint_counts_and_rest_residual(n, stretch, bend):
    q = straight(n)
    c = build_rope_constraints(q, 2e5, 0.01)
    assert len(c.stretch) == stretch and len(c.bending) == bend
    lengths = np.linalg.norm(q[c.stretch_idx[:, 1]] - q[c.stretch_idx[:, 0]], axis=1)
    assert np.allclose(lengths - c.stretch_rest, 0.0)
    lap = q[c.bend_idx[:, 0]] - 2 * q[c.bend_idx[:, 1]] + q[c.bend_idx[:, 2]]
    assert np.allclose(np.linalg.norm(lap, axis=1) - c.bend_rest, 0.0)
    assert np.allclose(c.bend_angle, 0.0)


def test_rope_needs_three_particles():
    with pytest.raises(TooFewParticles):
        build_rope_constraints(straight(2), 2e5, 0.01)


@given(st.floats(0.05, 1.5))
@settings(max_examples=20, deadline=None)
def test_bent_rest_angle_recorded(angle):
    q = np.array([[0.0, 0, 0], [0.01, 0, 0], [0.01 + 0.01 * np.cos(angle), 0.01 * np.sin(angle), 0]])
    c = build_rope_constraints(q, 2e5, 0.01)
    assert c.bend_angle[0] == pytest.approx(angle, abs=1e-9)
    assert c.bend_rest[0] == pytest.approx(2 * 0.01 * np.sin(angle / 2), rel=1e-9)


def test_rope_rests_on_table():
    scene = rope_scene()
    body = RopeBody(scene.deformable_objects[0], gravity=scene.gravity)
    x0 = body.state.positions.copy()
    for _ in range(1000):
        body.step(None, None, None, 2e-3)
    assert np.abs(body.state.positions - x0).max() < 1e-3


def hanging_rope(iterations):
    d = base_dict()
    n = 11
    pts = np.stack([np.arange(n) * 0.01, np.zeros(n), np.full(n, 0.3)], axis=1)
    d["deformable_objects"] = [{"name": "rope", "engine": "PD", "particles": pts.tolist(), "particle_spacing": 0.01,
                                "radius": 0.004, "youngs_modulus": 2e5, "density": 1100.0, "pinned": [0]}]
    spec = scene_from_dict(d).deformable_objects[0]
    body = RopeBody(spec, use_table=False, iterations=iterations)
    for _ in range(1500):
        body.step(None, None, None, 2e-3)
    return body.state.positions


def test_pinned_rope_hangs_like_converged_solve():
    q = hanging_rope(10)
    ref = hanging_rope(100)
    assert np.allclose(q[0], [0.0, 0.0, 0.3])
    # the free end ends up (nearly) straight below the pin
    drop = 0.3 - q[-1, 2]
    assert drop == pytest.approx(0.3 - ref[-1, 2], rel=0.02)
    assert drop == pytest.approx(0.1, rel=0.05)


def test_grasp_test_selects_particles_between_pads():
    scene = rope_scene()
    st0 = PDState(np.array(scene.deformable_objects[0].particles), np.zeros((21, 3)))
    r = scene.deformable_objects[0].radius
    inside = grasp_test(st0, Pose((0.0, 0.0, r)), 0.01, HALF, r)
    assert inside and all(abs(st0.positions[i, 0]) <= HALF[0] + r for i in inside)
    assert 10 in inside
    assert grasp_test(st0, Pose((0.0, 0.1, r)), 0.01, HALF, r) == set()
    assert grasp_test(st0, Pose((0.0, 0.0, 0.1)), 0.01, HALF, r) == set()


def test_grasped_particles_follow_gripper():
    scene = rope_scene()
    body = RopeBody(scene.deformable_objects[0], gravity=scene.gravity)
    r = body.radius
    body.step(Pose((0.0, 0.0, r)), 0.04, HALF, 2e-3)
    body.step(Pose((0.0, 0.0, r)), 0.005, HALF, 2e-3, prev_width=0.04)
    grabbed = sorted(body.state.attached)
    assert 10 in grabbed
    start = body.state.positions[grabbed].copy()
    for k in range(1, 251):
        body.step(Pose((0.0, 0.0, r + 0.1 * k / 250)), 0.005, HALF, 2e-3, prev_width=0.005)
    assert np.allclose(body.state.positions[grabbed] - start, [0.0, 0.0, 0.1], atol=1e-9)
    assert body.state.positions[[0, -1], 2].max() < 0.1
    body.step(Pose((0.0, 0.0, r + 0.1)), 0.04, HALF, 2e-3, prev_width=0.005)
    assert not body.state.attached


def test_functional_step_leaves_input_untouched():
    scene = rope_scene()
    body = RopeBody(scene.deformable_objects[0], gravity=scene.gravity, use_table=False)
    s0 = PDState(body.state.positions.copy(), body.state.velocities.copy())
    s1 = pd_step(body, s0)
    assert np.all(s0.velocities == 0.0)
    assert np.all(s1.positions[:, 2] < s0.positions[:, 2])


def test_step_rejects_large_dt():
    body = RopeBody(rope_scene().deformable_objects[0])
    with pytest.raises(ValueError):
        body.step(None, None, None, 0.02)
