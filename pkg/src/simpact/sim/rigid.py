"""Rigid-body engine: convex hulls, sequential impulses, kinematic gripper fingers.

Bodies are integrated with semi-implicit Euler at the centre of mass. Contacts are
generated with a separating-axis test (faces, then edge pairs) and polygon
clipping, reduced to at most four points per pair, and resolved with sequential
impulses: Coulomb friction with the pairwise-minimum coefficient, restitution
zero, speculative contacts inside a small margin, warm starting, and split-impulse
positional correction (Baumgarte factor on pseudo velocities that are discarded
after the position update, so correction never injects kinetic energy).

Grasping rigid bodies uses a kinematic weld: while the commanded width is
closing and both fingers touch the same body, that body is attached to the
gripper frame. Like a force-limited gripper the fingers then stall at the contact
width; the weld releases once the commanded width opens past it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateMesh, NumericalDivergence
from ..scene import RigidObjectSpec, TriMesh
from ..transforms import Pose, quat_conj, quat_mul, quat_normalize, quat_to_matrix
from . import rigid_kernels as K
from .gripper import finger_boxes
from .hull import HullShape, hulls_inertia, hulls_mass_properties, pack_hulls

log = logging.getLogger(__name__)

GRIPPER_FRICTION = 1.0
TABLE_BODY = -1


@dataclass
class RigidConfig:
    iterations: int = 10
    baumgarte: float = 0.2
    slop: float = 1e-4
    margin: float = 3e-3
    warm_start: bool = True
    sleep: bool = True
    sleep_linear: float = 1e-3
    sleep_angular: float = 1e-2
    sleep_time: float = 0.25
    wake_distance: float = 0.01
    max_contacts: int = 1024


@dataclass
class RigidState:
    """Pose of the body mesh frame plus world-frame twist."""

    pose: Pose
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class ContactPoint:
    point: np.ndarray
    normal: np.ndarray
    depth: float
    bodies: tuple[int, int]


def compute_inertia(mesh: TriMesh, mass: float, com_offset=None) -> np.ndarray:
    """Inertia tensor (body frame, about the centre of mass) of the mesh's convex hull."""
    if len(mesh.vertices) < 4:
        raise DegenerateMesh("need at least 4 vertices")
    hulls = [mesh.vertices]
    if com_offset is None:
        _, com_offset = hulls_mass_properties(hulls)
    return hulls_inertia(hulls, mass, com_offset)


class RigidWorld:
    """Owns the state of every rigid body and the two gripper fingers."""

    def __init__(self, objects: list[RigidObjectSpec], gravity=(0.0, 0.0, -9.81), table_height: float = 0.0,
                 table_friction: float = 1.0, gripper=None, use_table: bool = True,
                 config: RigidConfig | None = None):
        self.cfg = config or RigidConfig()
        self.names = [o.name for o in objects]
        self.n_objects = len(objects)
        self.gravity = np.asarray(gravity, dtype=float)
        self.table_height = float(table_height)
        self.table_friction = float(table_friction)
        self.use_table = use_table
        self.gripper = gripper
        self.com = []
        shapes: list[HullShape] = []
        hull_body: list[int] = []
        nb = self.n_objects + (2 if gripper is not None else 0)
        self.inv_mass = np.zeros(nb)
        self.inv_inertia = np.zeros((nb, 3, 3))
        self.friction = np.zeros(nb)
        self.static = np.zeros(nb, dtype=bool)
        self.pos = np.zeros((nb, 3))
        self.quat = np.zeros((nb, 4))
        self.quat[:, 0] = 1.0
        self.vel = np.zeros((nb, 3))
        self.omg = np.zeros((nb, 3))
        for i, o in enumerate(objects):
            hulls = o.collision_hulls()
            com = np.asarray(o.com_offset, dtype=float)
            self.com.append(com)
            for h in hulls:
                shapes.append(HullShape.from_points(np.asarray(h) - com))
                hull_body.append(i)
            self.friction[i] = o.friction
            if o.static:
                self.static[i] = True
            else:
                self.inv_mass[i] = 1.0 / o.mass
                self.inv_inertia[i] = np.linalg.inv(hulls_inertia(hulls, o.mass, com))
            self.pos[i] = o.pose.apply(com)
            self.quat[i] = o.pose.q
        if gripper is not None:
            hx, hy, hz = gripper.finger_half_extents
            box = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
            for j in range(2):
                shapes.append(HullShape.from_points(box))
                hull_body.append(self.n_objects + j)
                self.friction[self.n_objects + j] = GRIPPER_FRICTION
                self.static[self.n_objects + j] = True
            self.grip_pose = gripper.pose
            self.grip_width = gripper.width
            self._place_fingers(self.grip_pose, self.grip_width)
        self.pk = pack_hulls(shapes, hull_body)
        nh = len(shapes)
        self._wv = np.zeros_like(self.pk.v)
        self._wfn = np.zeros_like(self.pk.fn)
        self._wfd = np.zeros_like(self.pk.fd)
        self._wed = np.zeros_like(self.pk.ed)
        self._aabb = np.zeros((nh, 6))
        self._centroid = np.zeros((nh, 3))
        m = self.cfg.max_contacts
        self._ca = np.zeros(m, dtype=np.int64)
        self._cb = np.zeros(m, dtype=np.int64)
        self._cp = np.zeros((m, 3))
        self._cn = np.zeros((m, 3))
        self._cs = np.zeros(m)
        self._lam_n = np.zeros(m)
        self._lam_t = np.zeros((m, 2))
        self._prev = (0, self._ca.copy(), self._cb.copy(), self._cp.copy(), self._cn.copy(),
                      self._lam_n.copy(), self._lam_t.copy())
        self._iinv_w = np.zeros((nb, 3, 3))
        self._pvel = np.zeros((nb, 3))
        self._pomg = np.zeros((nb, 3))
        self._skip_pair = np.zeros((nb, nb), dtype=np.bool_)
        self._skip_table = np.zeros(nb, dtype=np.bool_)
        if gripper is not None:
            self._skip_table[self.n_objects:] = True
        self.welded: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.stall_width: float | None = None
        self.quiet_time = 0.0
        self.asleep = False
        self.last_contact_count = 0
        self.time = 0.0

    # -- state access ---------------------------------------------------

    def body_pose(self, i: int) -> Pose:
        q = quat_normalize(self.quat[i])
        return Pose(self.pos[i] - quat_to_matrix(q) @ self.com[i], q)

    def get_states(self) -> list[RigidState]:
        return [RigidState(self.body_pose(i), self.vel[i].copy(), self.omg[i].copy()) for i in range(self.n_objects)]

    def set_states(self, states: list[RigidState]) -> None:
        for i, s in enumerate(states):
            self.quat[i] = s.pose.q
            self.pos[i] = s.pose.apply(self.com[i])
            self.vel[i] = s.linear_velocity
            self.omg[i] = s.angular_velocity
        self.asleep = False
        self.quiet_time = 0.0

    def kinetic_energy(self) -> float:
        ke = 0.0
        for i in range(self.n_objects):
            if self.inv_mass[i] == 0.0:
                continue
            r = quat_to_matrix(self.quat[i])
            inertia = r @ np.linalg.inv(self.inv_inertia[i]) @ r.T
            ke += 0.5 * np.dot(self.vel[i], self.vel[i]) / self.inv_mass[i]
            ke += 0.5 * self.omg[i] @ inertia @ self.omg[i]
        return float(ke)

    def linear_momentum(self) -> np.ndarray:
        p = np.zeros(3)
        for i in range(self.n_objects):
            if self.inv_mass[i] > 0:
                p += self.vel[i] / self.inv_mass[i]
        return p

    # -- gripper ----------------------------------------------------------

    def _finger_targets(self, pose: Pose, width: float):
        boxes = finger_boxes(pose, width, self.gripper.finger_half_extents)
        return [b.center for b in boxes], pose.q

    def _place_fingers(self, pose: Pose, width: float) -> None:
        centers, q = self._finger_targets(pose, width)
        for j in range(2):
            self.pos[self.n_objects + j] = centers[j]
            self.quat[self.n_objects + j] = q

    def _gripper_near_bodies(self) -> bool:
        if self.gripper is None:
            return False
        K.world_geometry(self.pk.body, self.pk.v, self.pk.v_start, self.pk.v_count, self.pk.fn, self.pk.fd,
                         self.pk.f_start, self.pk.f_count, self.pk.ed, self.pk.ed_start, self.pk.ed_count,
                         self.pos, self.quat, self._wv, self._wfn, self._wfd, self._wed, self._aabb, self._centroid)
        fing = self.pk.body >= self.n_objects
        movable = (self.pk.body < self.n_objects) & ~self.static[np.minimum(self.pk.body, len(self.static) - 1)]
        if not movable.any():
            return False
        fa = self._aabb[fing]
        ba = self._aabb[movable]
        d = self.cfg.wake_distance
        lo = np.maximum(fa[:, None, :3], ba[None, :, :3])
        hi = np.minimum(fa[:, None, 3:], ba[None, :, 3:])
        return bool(np.any(np.all(lo <= hi + d, axis=-1)))

    # -- stepping ---------------------------------------------------------

    def step(self, grip_pose: Pose | None = None, width: float | None = None, dt: float = 2e-3) -> None:
        if not 0.0 < dt <= 0.01:
            raise ValueError("dt must lie in (0, 0.01]")
        n = self.n_objects
        closing = False
        if self.gripper is not None:
            grip_pose = grip_pose if grip_pose is not None else self.grip_pose
            width = self.grip_width if width is None else float(width)
            if self.stall_width is not None:
                if width > self.stall_width + 1e-12:
                    self._release_all(dt)
                else:
                    width = self.stall_width
            closing = width < self.grip_width - 1e-12
            centers, q = self._finger_targets(grip_pose, width)
            for j in range(2):
                b = n + j
                self.vel[b] = (centers[j] - self.pos[b]) / dt
                self.omg[b] = _angular_velocity(self.quat[b], q, dt)
            targets = [(centers[j], q) for j in range(2)]
        else:
            targets = []

        dynamic = (self.inv_mass > 0)
        if self.asleep and self.cfg.sleep:
            if self._gripper_near_bodies() or self.welded:
                self.asleep = False
                self.quiet_time = 0.0
            else:
                for j, (c, q) in enumerate(targets):
                    self.pos[n + j] = c
                    self.quat[n + j] = q
                    self.vel[n + j] = 0.0
                    self.omg[n + j] = 0.0
                self._commit_gripper(grip_pose, width)
                self.time += dt
                return

        # welded bodies ride along as kinematic bodies
        weld_targets = {}
        for b, (rel_p, rel_q) in self.welded.items():
            gq = grip_pose.q
            tp = grip_pose.p + quat_to_matrix(gq) @ rel_p
            tq = quat_normalize(quat_mul(gq, rel_q))
            self.vel[b] = (tp - self.pos[b]) / dt
            self.omg[b] = _angular_velocity(self.quat[b], tq, dt)
            weld_targets[b] = (tp, tq)
        inv_mass = self.inv_mass.copy()
        inv_inertia = self.inv_inertia.copy()
        for b in self.welded:
            inv_mass[b] = 0.0
            inv_inertia[b] = 0.0
            dynamic[b] = False

        self.vel[dynamic] += self.gravity * dt

        pk = self.pk
        K.world_geometry(pk.body, pk.v, pk.v_start, pk.v_count, pk.fn, pk.fd, pk.f_start, pk.f_count,
                         pk.ed, pk.ed_start, pk.ed_count, self.pos, self.quat, self._wv, self._wfn, self._wfd,
                         self._wed, self._aabb, self._centroid)
        skip_table = self._skip_table.copy()
        for b in self.welded:
            skip_table[b] = True
        nc = K.all_contacts(pk.body, pk.v_start, pk.v_count, pk.f_start, pk.f_count, pk.fv, pk.fv_start,
                            pk.fv_count, pk.ed_start, pk.ed_count, pk.eg, pk.eg_start, pk.eg_count, self._wv,
                            self._wfn, self._wfd, self._wed, self._aabb, self._centroid, inv_mass, self.use_table,
                            self.table_height, self.cfg.margin, skip_table, self._skip_pair,
                            self._ca, self._cb, self._cp, self._cn, self._cs)
        self.last_contact_count = nc
        if nc >= self.cfg.max_contacts:
            log.warning("contact buffer full (%d); extra contacts dropped", nc)
        cfric = np.empty(nc)
        for c in range(nc):
            a, b = self._ca[c], self._cb[c]
            fa = self.table_friction if a < 0 else self.friction[a]
            cfric[c] = min(fa, self.friction[b])
        if self.cfg.warm_start:
            pc, pa, pb, pp, pn, pln, plt = self._prev
            K.match_warm_start(nc, self._ca, self._cb, self._cp, self._cn, pc, pa, pb, pp, pn, pln, plt,
                               self._lam_n, self._lam_t, 2e-3)
        else:
            self._lam_n[:nc] = 0.0
            self._lam_t[:nc] = 0.0
        K.world_inv_inertia(self.quat, inv_inertia, self._iinv_w)
        K.solve_contacts(nc, self._ca, self._cb, self._cp, self._cn, self._cs, cfric, self.pos, self.vel, self.omg,
                         inv_mass, self._iinv_w, self._lam_n, self._lam_t, dt, self.cfg.iterations,
                         self.cfg.baumgarte, self.cfg.slop, self._pvel, self._pomg)
        self._prev = (nc, self._ca[:nc].copy(), self._cb[:nc].copy(), self._cp[:nc].copy(), self._cn[:nc].copy(),
                      self._lam_n[:nc].copy(), self._lam_t[:nc].copy())
        K.integrate(self.pos, self.quat, self.vel, self.omg, self._pvel, self._pomg, dynamic, dt)
        for j, (c, q) in enumerate(targets):
            self.pos[n + j] = c
            self.quat[n + j] = q
        for b, (tp, tq) in weld_targets.items():
            self.pos[b] = tp
            self.quat[b] = tq

        if not (np.all(np.isfinite(self.pos)) and np.all(np.isfinite(self.vel)) and np.all(np.isfinite(self.quat))):
            raise NumericalDivergence("rigid state became non-finite")

        if self.gripper is not None:
            if closing:
                self._try_weld(grip_pose, nc, width)
            self._commit_gripper(grip_pose, width)
        self.time += dt
        self._update_sleep(dt)

    def _commit_gripper(self, pose, width) -> None:
        if self.gripper is not None:
            self.grip_pose = pose
            self.grip_width = width

    def _try_weld(self, grip_pose: Pose, nc: int, width: float) -> None:
        n = self.n_objects
        touching: dict[int, set] = {}
        for c in range(nc):
            a, b, s = int(self._ca[c]), int(self._cb[c]), self._cs[c]
            if s > 1e-4:
                continue
            for f, o in ((a, b), (b, a)):
                if f >= n and 0 <= o < n and not self.static[o]:
                    touching.setdefault(o, set()).add(f)
        for body, fingers in sorted(touching.items()):
            if len(fingers) == 2 and body not in self.welded:
                gq = grip_pose.q
                ginv = quat_to_matrix(gq).T
                rel_p = ginv @ (self.pos[body] - grip_pose.p)
                rel_q = quat_normalize(quat_mul(quat_conj(gq), self.quat[body]))
                self.welded[body] = (rel_p, rel_q)
                self.stall_width = width
                self._skip_pair[body, n:] = True
                self._skip_pair[n:, body] = True
                log.debug("welded %s to gripper", self.names[body])

    def _release_all(self, dt: float) -> None:
        n = self.n_objects
        for body in list(self.welded):
            self._skip_pair[body, n:] = False
            self._skip_pair[n:, body] = False
            del self.welded[body]
        self.stall_width = None
        self.asleep = False
        self.quiet_time = 0.0

    def _update_sleep(self, dt: float) -> None:
        if not self.cfg.sleep:
            return
        dyn = self.inv_mass[: self.n_objects] > 0
        if not dyn.any():
            quiet = True
        else:
            lin = np.linalg.norm(self.vel[: self.n_objects][dyn], axis=1).max()
            ang = np.linalg.norm(self.omg[: self.n_objects][dyn], axis=1).max()
            quiet = lin < self.cfg.sleep_linear and ang < self.cfg.sleep_angular
        if quiet and not self.welded:
            self.quiet_time += dt
        else:
            self.quiet_time = 0.0
        if self.quiet_time >= self.cfg.sleep_time and not self._gripper_near_bodies():
            self.asleep = True
            self.vel[: self.n_objects] = 0.0
            self.omg[: self.n_objects] = 0.0
            self._prev = (0,) + self._prev[1:]

    def contacts(self) -> list[ContactPoint]:
        """Contacts at the current configuration (depth clamped at zero)."""
        return detect_contacts(self)


def _angular_velocity(q_from, q_to, dt: float) -> np.ndarray:
    dq = quat_mul(q_to, quat_conj(q_from))
    if dq[0] < 0:
        dq = -dq
    s = np.linalg.norm(dq[1:])
    if s < 1e-12:
        return np.zeros(3)
    angle = 2.0 * math.atan2(s, dq[0])
    return dq[1:] / s * angle / dt


def detect_contacts(world: RigidWorld, tol: float = 1e-6) -> list[ContactPoint]:
    """Table and hull-hull contacts of the world's current configuration with depth >= 0."""
    pk = world.pk
    K.world_geometry(pk.body, pk.v, pk.v_start, pk.v_count, pk.fn, pk.fd, pk.f_start, pk.f_count,
                     pk.ed, pk.ed_start, pk.ed_count, world.pos, world.quat, world._wv, world._wfn, world._wfd,
                     world._wed, world._aabb, world._centroid)
    inv_mass = np.where(np.arange(len(world.inv_mass)) < world.n_objects, 1.0, 0.0)
    nc = K.all_contacts(pk.body, pk.v_start, pk.v_count, pk.f_start, pk.f_count, pk.fv, pk.fv_start,
                        pk.fv_count, pk.ed_start, pk.ed_count, pk.eg, pk.eg_start, pk.eg_count, world._wv,
                        world._wfn, world._wfd, world._wed, world._aabb, world._centroid, inv_mass,
                        world.use_table, world.table_height, 2 * tol, world._skip_table,
                        np.zeros_like(world._skip_pair), world._ca, world._cb, world._cp, world._cn, world._cs)
    out = []
    for c in range(nc):
        depth = -float(world._cs[c])
        if depth < -tol:
            continue
        out.append(ContactPoint(world._cp[c].copy(), world._cn[c].copy(), max(depth, 0.0),
                                (int(world._ca[c]), int(world._cb[c]))))
    return out


def rigid_step(world: RigidWorld, states: list[RigidState], grip_pose: Pose | None = None,
               width: float | None = None, dt: float = 2e-3) -> list[RigidState]:
    """Functional wrapper: load ``states``, advance one step, return the new states."""
    world.set_states(states)
    world.step(grip_pose, width, dt)
    return world.get_states()

