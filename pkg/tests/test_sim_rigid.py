import math

import numpy as np
import pytest
from scipy.spatial import Delaunay

from scenes import box_scene
from simpact.errors import DegenerateMesh
from simpact.scene import TriMesh, box_mesh
from simpact.sim.rigid import RigidWorld, compute_inertia, rigid_step


def test_unit_cube_inertia():
    inertia = compute_inertia(box_mesh((0.5, 0.5, 0.5), (0.0, 0.0, 0.0)), 1.0)
    assert np.allclose(inertia, np.eye(3) / 6.0, atol=1e-12)


def test_inertia_scales_with_size_squared():
    inertia = compute_inertia(box_mesh((1.0, 1.0, 1.0), (0.0, 0.0, 0.0)), 1.0)
    assert np.allclose(inertia, np.eye(3) * 2.0 / 3.0, atol=1e-12)


def test_inertia_matches_monte_carlo():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(12, 3)) * [0.03, 0.02, 0.05]
    mass = 0.7
    inertia = compute_inertia(TriMesh(pts, [[0, 1, 2]]), mass)
    # oracle: uniform samples inside the hull, second moments about their mean
    hull = Delaunay(pts)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    cand = rng.uniform(lo, hi, size=(400_000, 3))
    inside = cand[hull.find_simplex(cand) >= 0]
    r = inside - inside.mean(axis=0)
    ref = mass * (np.eye(3) * np.mean(np.sum(r * r, axis=1)) - r.T @ r / len(r))
    assert np.abs(inertia - ref).max() < 0.02 * np.abs(ref).max()


def test_inertia_needs_four_vertices():
    with pytest.raises(DegenerateMesh):
        compute_inertia(TriMesh(np.eye(3), [[0, 1, 2]]), 1.0)


def cube_world():
    scene = box_scene(half=(0.02, 0.02, 0.02))
    return RigidWorld(scene.rigid_objects, table_friction=scene.table_friction)


def test_separated_cube_has_no_contacts():
    w = cube_world()
    w.pos[0, 2] += 0.05
    assert w.contacts() == []


def test_flush_cube_has_four_table_contacts():
    cs = cube_world().contacts()
    assert len(cs) == 4
    for c in cs:
        assert np.allclose(c.normal, [0, 0, 1]) and c.depth == pytest.approx(0.0, abs=1e-12)
        assert c.bodies == (-1, 0)
    corners = sorted((round(c.point[0], 6), round(c.point[1], 6)) for c in cs)
    assert corners == [(-0.02, -0.02), (-0.02, 0.02), (0.02, -0.02), (0.02, 0.02)]


def test_sunk_cube_reports_depth():
    w = cube_world()
    w.pos[0, 2] -= 0.01
    assert [c.depth for c in w.contacts()] == pytest.approx([0.01] * 4, abs=1e-9)


def test_resting_box_stays_put():
    w = RigidWorld(box_scene().rigid_objects)
    s0 = w.get_states()[0]
    for _ in range(1000):
        w.step(dt=2e-3)
    s1 = w.get_states()[0]
    assert np.linalg.norm(s1.pose.p - s0.pose.p) < 1e-4
    assert abs(np.dot(s1.pose.q, s0.pose.q)) > math.cos(math.radians(0.1) / 2)


def test_sliding_box_stops_at_coulomb_distance():
    mu, v0 = 0.5, 0.5
    scene = box_scene(half=(0.02, 0.02, 0.02), friction=mu)
    w = RigidWorld(scene.rigid_objects, table_friction=1.0)
    states = w.get_states()
    states[0].linear_velocity = np.array([v0, 0.0, 0.0])
    x0 = states[0].pose.p[0]
    for _ in range(500):
        states = rigid_step(w, states, dt=2e-3)
    expected = v0 ** 2 / (2 * mu * 9.81)
    assert states[0].pose.p[0] - x0 == pytest.approx(expected, rel=0.1)
    assert np.linalg.norm(states[0].linear_velocity) < 1e-3


def test_dropped_box_lands_on_table():
    scene = box_scene(half=(0.02, 0.02, 0.02))
    w = RigidWorld(scene.rigid_objects)
    w.pos[0, 2] += 0.1
    for _ in range(1000):
        w.step(dt=2e-3)
    z = w.get_states()[0].pose.p[2]
    assert abs(z) < 2e-3
