"""Projective-dynamics particle chain for ropes.

Each step minimises the implicit-Euler objective

    g(q) = 1/(2 h^2) |q - s|_M^2 + sum_c w_c / 2 * |A_c q - p_c|^2

by alternating a local step (project every constraint onto its rest manifold) with
a global step (one linear solve against the constant matrix M/h^2 + sum w A^T A,
Cholesky-factored once per set of fixed particles). Both steps can only lower g,
which is what the monotonicity tests check.

Constraints on the chain:

* stretch, consecutive pairs: A q = q_j - q_i projected to length ``rest``;
  weight E*A/l (axial spring stiffness of a rod segment of length l).
* bending, consecutive triples: A q = q_i - 2 q_j + q_k projected to the rest
  magnitude 2 l sin(angle/2) along its current direction; weight E*I/l^3, the
  discrete rod bending stiffness expressed per unit Laplacian length.

Poisson's ratio is accepted but unused for a one-dimensional chain.
Table contact is a post-solve projection to z >= table + radius with
position-level static/kinetic friction; finger boxes push particles out the same way.
Grasping welds the particles inside the closed-finger volume to the gripper frame
while the commanded width is below the grasp threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.linalg import cholesky

from ..errors import NumericalDivergence, TooFewParticles
from ..scene import DeformableObjectSpec
from ..transforms import Pose, quat_to_matrix
from .gripper import closed_volume, finger_boxes

GRASP_THRESHOLD = 0.02
DEFAULT_ITERATIONS = 10
STATIC_FRICTION = 0.8
KINETIC_FRICTION = 0.6


@dataclass
class PDConstraints:
    stretch_idx: np.ndarray  # (S, 2)
    stretch_rest: np.ndarray
    stretch_w: np.ndarray
    bend_idx: np.ndarray  # (B, 3)
    bend_angle: np.ndarray  # rest turning angle (rad)
    bend_rest: np.ndarray  # rest Laplacian magnitude (m)
    bend_w: np.ndarray

    @property
    def stretch(self) -> list[tuple[int, int, float, float]]:
        return [(int(i), int(j), float(r), float(w)) for (i, j), r, w in
                zip(self.stretch_idx, self.stretch_rest, self.stretch_w)]

    @property
    def bending(self) -> list[tuple[int, int, int, float, float]]:
        return [(int(i), int(j), int(k), float(a), float(w)) for (i, j, k), a, w in
                zip(self.bend_idx, self.bend_angle, self.bend_w)]


@dataclass
class PDState:
    positions: np.ndarray
    velocities: np.ndarray
    attached: frozenset = field(default_factory=frozenset)


def build_rope_constraints(particles, youngs_modulus: float, spacing: float,
                           radius: float | None = None) -> PDConstraints:
    """Stretch and bending constraints along an ordered chain of particles."""
    q = np.asarray(particles, dtype=float).reshape(-1, 3)
    n = len(q)
    if n < 3:
        raise TooFewParticles(f"a rope needs at least 3 particles, got {n}")
    r = radius if radius is not None else 0.5 * spacing
    area = math.pi * r * r
    inertia = math.pi * r ** 4 / 4.0
    sidx = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    rest = np.linalg.norm(q[1:] - q[:-1], axis=1)
    if np.any(rest <= 0):
        raise ValueError("coincident consecutive rope particles")
    sw = youngs_modulus * area / rest
    bidx = np.stack([np.arange(n - 2), np.arange(1, n - 1), np.arange(2, n)], axis=1)
    lap = q[:-2] - 2 * q[1:-1] + q[2:]
    e1 = q[1:-1] - q[:-2]
    e2 = q[2:] - q[1:-1]
    cosang = np.einsum("ij,ij->i", e1, e2) / (np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1))
    angle = np.arccos(np.clip(cosang, -1.0, 1.0))
    lbar = 0.5 * (rest[:-1] + rest[1:])
    bw = youngs_modulus * inertia / lbar ** 3
    return PDConstraints(sidx, rest, sw, bidx, angle, np.linalg.norm(lap, axis=1), bw)


def system_matrix(masses: np.ndarray, cons: PDConstraints, h: float) -> np.ndarray:
    n = len(masses)
    s = np.diag(masses / (h * h))
    for (i, j), w in zip(cons.stretch_idx, cons.stretch_w):
        s[i, i] += w
        s[j, j] += w
        s[i, j] -= w
        s[j, i] -= w
    coef = np.array([1.0, -2.0, 1.0])
    for idx, w in zip(cons.bend_idx, cons.bend_w):
        s[np.ix_(idx, idx)] += w * np.outer(coef, coef)
    assert s.shape == (n, n)
    return s


@njit(cache=True)
def _local(q, st_idx, st_rest, bd_idx, bd_rest, ps, pb):
    for c in range(st_idx.shape[0]):
        i = st_idx[c, 0]
        j = st_idx[c, 1]
        d = q[j] - q[i]
        ln = np.sqrt(np.dot(d, d))
        if ln > 1e-15:
            ps[c] = d * (st_rest[c] / ln)
        else:
            ps[c] = 0.0
            ps[c, 0] = st_rest[c]
    for c in range(bd_idx.shape[0]):
        lap = q[bd_idx[c, 0]] - 2.0 * q[bd_idx[c, 1]] + q[bd_idx[c, 2]]
        ln = np.sqrt(np.dot(lap, lap))
        if bd_rest[c] == 0.0:
            pb[c] = 0.0
        elif ln > 1e-15:
            pb[c] = lap * (bd_rest[c] / ln)
        else:
            pb[c] = 0.0
            pb[c, 2] = bd_rest[c]


@njit(cache=True)
def objective(q, s, mass, h, st_idx, st_rest, st_w, bd_idx, bd_rest, bd_w):
    """Implicit-Euler PD objective with optimal projections for ``q``."""
    n = q.shape[0]
    ps = np.zeros((st_idx.shape[0], 3))
    pb = np.zeros((bd_idx.shape[0], 3))
    _local(q, st_idx, st_rest, bd_idx, bd_rest, ps, pb)
    return _objective_given(q, s, mass, h, st_idx, st_w, bd_idx, bd_w, ps, pb)


@njit(cache=True)
def _objective_given(q, s, mass, h, st_idx, st_w, bd_idx, bd_w, ps, pb):
    n = q.shape[0]
    g = 0.0
    for i in range(n):
        d = q[i] - s[i]
        g += 0.5 * mass[i] * np.dot(d, d) / (h * h)
    for c in range(st_idx.shape[0]):
        d = q[st_idx[c, 1]] - q[st_idx[c, 0]] - ps[c]
        g += 0.5 * st_w[c] * np.dot(d, d)
    for c in range(bd_idx.shape[0]):
        d = q[bd_idx[c, 0]] - 2.0 * q[bd_idx[c, 1]] + q[bd_idx[c, 2]] - pb[c]
        g += 0.5 * bd_w[c] * np.dot(d, d)
    return g


@njit(cache=True)
def pd_iterations(q, s, mass, h, st_idx, st_rest, st_w, bd_idx, bd_rest, bd_w,
                  sysmat, free, fixed, chol, iters, obj_out):
    """Local-global iterations in place on ``q`` (fixed rows keep their values).

    ``obj_out`` (length ``2 * iters``) receives g after every local and every global step.
    """
    n = q.shape[0]
    nf = free.shape[0]
    ps = np.zeros((st_idx.shape[0], 3))
    pb = np.zeros((bd_idx.shape[0], 3))
    rhs = np.zeros((n, 3))
    y = np.zeros((nf, 3))
    record = obj_out.shape[0] >= 2 * iters
    for it in range(iters):
        _local(q, st_idx, st_rest, bd_idx, bd_rest, ps, pb)
        if record:
            obj_out[2 * it] = _objective_given(q, s, mass, h, st_idx, st_w, bd_idx, bd_w, ps, pb)
        for i in range(n):
            rhs[i] = mass[i] / (h * h) * s[i]
        for c in range(st_idx.shape[0]):
            i = st_idx[c, 0]
            j = st_idx[c, 1]
            rhs[j] += st_w[c] * ps[c]
            rhs[i] -= st_w[c] * ps[c]
        for c in range(bd_idx.shape[0]):
            rhs[bd_idx[c, 0]] += bd_w[c] * pb[c]
            rhs[bd_idx[c, 1]] -= 2.0 * bd_w[c] * pb[c]
            rhs[bd_idx[c, 2]] += bd_w[c] * pb[c]
        # reduced right-hand side for the free rows
        for a in range(nf):
            r = free[a]
            for k in range(3):
                acc = rhs[r, k]
                for b in range(fixed.shape[0]):
                    acc -= sysmat[r, fixed[b]] * q[fixed[b], k]
                y[a, k] = acc
        # forward then backward substitution with the lower factor
        for a in range(nf):
            for k in range(3):
                acc = y[a, k]
                for b in range(a):
                    acc -= chol[a, b] * y[b, k]
                y[a, k] = acc / chol[a, a]
        for a in range(nf - 1, -1, -1):
            for k in range(3):
                acc = y[a, k]
                for b in range(a + 1, nf):
                    acc -= chol[b, a] * y[b, k]
                y[a, k] = acc / chol[a, a]
        for a in range(nf):
            q[free[a]] = y[a]
        if record:
            obj_out[2 * it + 1] = _objective_given(q, s, mass, h, st_idx, st_w, bd_idx, bd_w, ps, pb)


@njit(cache=True)
def _collide(q, q_prev, is_fixed, radius, use_table, table_z, mu_s, mu_k, box_c, box_r, box_h):
    n = q.shape[0]
    for i in range(n):
        if is_fixed[i]:
            continue
        # finger boxes: push out along the axis of least penetration
        for b in range(box_c.shape[0]):
            d = q[i] - box_c[b]
            loc = box_r[b].T @ d
            best = 1e30
            ax = -1
            for k in range(3):
                pen = box_h[b, k] + radius - abs(loc[k])
                if pen <= 0.0:
                    ax = -2
                    break
                if pen < best:
                    best = pen
                    ax = k
            if ax >= 0:
                loc[ax] = (box_h[b, ax] + radius) * (1.0 if loc[ax] >= 0 else -1.0)
                q[i] = box_c[b] + box_r[b] @ loc
        if use_table:
            floor = table_z + radius
            pen = floor - q[i, 2]
            if pen > 0.0:
                q[i, 2] = floor
                dx = q[i, 0] - q_prev[i, 0]
                dy = q[i, 1] - q_prev[i, 1]
                dt = np.sqrt(dx * dx + dy * dy)
                if dt < mu_s * pen:
                    q[i, 0] = q_prev[i, 0]
                    q[i, 1] = q_prev[i, 1]
                elif dt > 0.0:
                    f = min(mu_k * pen / dt, 1.0)
                    q[i, 0] -= f * dx
                    q[i, 1] -= f * dy


class RopeBody:
    """Runtime state of one PD object."""

    def __init__(self, spec: DeformableObjectSpec, gravity=(0.0, 0.0, -9.81), table_height: float = 0.0,
                 use_table: bool = True, iterations: int = DEFAULT_ITERATIONS, dt: float = 2e-3):
        self.spec = spec
        self.name = spec.name
        q = np.array(spec.particles, dtype=float)
        self.cons = build_rope_constraints(q, spec.youngs_modulus, spec.particle_spacing, spec.radius)
        self.radius = spec.collision_radius
        area = math.pi * self.radius ** 2
        seg = np.zeros(len(q))
        seg[:-1] += 0.5 * self.cons.stretch_rest
        seg[1:] += 0.5 * self.cons.stretch_rest
        self.mass = spec.density * area * seg
        self.gravity = np.asarray(gravity, dtype=float)
        self.table_height = float(table_height)
        self.use_table = use_table
        self.iterations = iterations
        self.pinned = {int(i): q[int(i)].copy() for i in spec.pinned}
        self.state = PDState(q.copy(), np.zeros_like(q))
        self.attach_local: dict[int, np.ndarray] = {}
        self._h = None
        self._sysmat = None
        self._factors: dict[frozenset, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self.quiet_time = 0.0
        self.asleep = False

    @property
    def n(self) -> int:
        return len(self.mass)

    def _factor(self, fixed: frozenset, h: float):
        if self._h != h:
            self._h = h
            self._sysmat = system_matrix(self.mass, self.cons, h)
            self._factors = {}
        if fixed not in self._factors:
            free = np.array([i for i in range(self.n) if i not in fixed], dtype=np.int64)
            fix = np.array(sorted(fixed), dtype=np.int64)
            sub = self._sysmat[np.ix_(free, free)]
            self._factors[fixed] = (free, fix, cholesky(sub, lower=True))
        return self._factors[fixed]

    def total_mass(self) -> float:
        return float(self.mass.sum())

    def grasp_test(self, grip_pose: Pose, width: float, half_extents) -> set[int]:
        return grasp_test(self.state, grip_pose, width, half_extents, self.radius)

    def step(self, grip_pose: Pose | None, width: float | None, half_extents, dt: float,
             prev_width: float | None = None, obj_out: np.ndarray | None = None) -> None:
        if not 0.0 < dt <= 0.01:
            raise ValueError("dt must lie in (0, 0.01]")
        st = self.state
        if grip_pose is not None:
            if width < GRASP_THRESHOLD and (prev_width is None or prev_width >= GRASP_THRESHOLD) and not self.attach_local:
                idx = self.grasp_test(grip_pose, width, half_extents)
                if idx:
                    r = quat_to_matrix(grip_pose.orientation)
                    self.attach_local = {i: r.T @ (st.positions[i] - grip_pose.p) for i in sorted(idx)}
                    st.attached = frozenset(idx)
            elif width >= GRASP_THRESHOLD and self.attach_local:
                self.attach_local = {}
                st.attached = frozenset()
        near = grip_pose is not None and self._gripper_near(grip_pose, width, half_extents)
        if self.asleep:
            if near or self.attach_local:
                self.asleep = False
                self.quiet_time = 0.0
            else:
                return
        q_n = st.positions
        v_n = st.velocities
        s = q_n + dt * v_n + dt * dt * self.gravity
        q = s.copy()
        fixed = set(self.pinned) | set(self.attach_local)
        for i, p in self.pinned.items():
            q[i] = p
        if self.attach_local:
            r = quat_to_matrix(grip_pose.orientation)
            for i, loc in self.attach_local.items():
                q[i] = grip_pose.p + r @ loc
        free, fix, chol = self._factor(frozenset(fixed), dt)
        c = self.cons
        if obj_out is None:
            obj_out = np.zeros(0)
        pd_iterations(q, s, self.mass, dt, c.stretch_idx, c.stretch_rest, c.stretch_w, c.bend_idx, c.bend_rest,
                      c.bend_w, self._sysmat, free, fix, chol, self.iterations, obj_out)
        is_fixed = np.zeros(self.n, dtype=np.bool_)
        is_fixed[list(fixed)] = True
        if grip_pose is not None:
            boxes = finger_boxes(grip_pose, width, half_extents)
            bc = np.array([b.center for b in boxes])
            br = np.array([b.rotation for b in boxes])
            bh = np.array([b.half_extents for b in boxes])
        else:
            bc = np.zeros((0, 3))
            br = np.zeros((0, 3, 3))
            bh = np.zeros((0, 3))
        _collide(q, q_n, is_fixed, self.radius, self.use_table, self.table_height, STATIC_FRICTION,
                 KINETIC_FRICTION, bc, br, bh)
        if not np.all(np.isfinite(q)):
            raise NumericalDivergence(f"{self.name}: non-finite particle positions")
        v = (q - q_n) / dt
        st.positions = q
        st.velocities = v
        if not self.attach_local and float(np.abs(v).max()) < 1e-3 and not near:
            self.quiet_time += dt
            if self.quiet_time > 0.25:
                self.asleep = True
                st.velocities = np.zeros_like(v)
        else:
            self.quiet_time = 0.0

    def _gripper_near(self, pose: Pose, width: float, half_extents, pad: float = 0.01) -> bool:
        for b in finger_boxes(pose, width, half_extents):
            if np.any(b.contains(self.state.positions, pad + self.radius)):
                return True
        return False


def grasp_test(state: PDState, grip_pose: Pose, width: float, half_extents, radius: float = 0.0) -> set[int]:
    """Indices of particles inside the volume between the finger pads."""
    vol = closed_volume(grip_pose, width, half_extents)
    inside = vol.contains(state.positions, radius)
    return {int(i) for i in np.nonzero(inside)[0]}


def pd_step(body: RopeBody, state: PDState, grip_pose: Pose | None = None, width: float | None = None,
            half_extents=(0.01, 0.005, 0.02), dt: float = 2e-3) -> PDState:
    """Functional wrapper around :meth:`RopeBody.step`."""
    body.state = PDState(state.positions.copy(), state.velocities.copy(), state.attached)
    body.asleep = False
    body.step(grip_pose, width, half_extents, dt)
    out = body.state
    return PDState(out.positions.copy(), out.velocities.copy(), out.attached)
