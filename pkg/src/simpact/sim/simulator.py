"""Multi-engine simulator facade: one scene, one gripper, one clock.

Rigid bodies share a :class:`RigidWorld`; every PD rope and every MPM body owns its
own solver. All engines see the same kinematic gripper command each step. Rigid and
deformable bodies do not collide with each other (no shipped scene mixes them).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..scene import SceneDescription
from ..transforms import Pose, quat_to_rpy
from .mpm import MPMBody
from .pd import RopeBody
from .rigid import RigidConfig, RigidState, RigidWorld

log = logging.getLogger(__name__)

DEFAULT_DT = 2e-3
KEYPOINT_VOXEL = 0.02
MAX_KEYPOINTS = 64


def voxel_keypoints(points, pitch: float = KEYPOINT_VOXEL, max_points: int = MAX_KEYPOINTS) -> np.ndarray:
    """Voxel-grid centroids; the pitch doubles until at most ``max_points`` remain."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    h = float(pitch)
    while True:
        keys = np.floor(pts / h).astype(np.int64)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        if len(uniq) <= max_points:
            sums = np.zeros((len(uniq), 3))
            np.add.at(sums, inv, pts)
            counts = np.bincount(inv, minlength=len(uniq))[:, None]
            return sums / counts
        h *= 2.0


@dataclass
class SimSnapshot:
    """Summary of the simulator state at one instant."""

    time: float
    gripper_pose: Pose
    gripper_width: float
    rigid: dict[str, RigidState] = field(default_factory=dict)
    deformable: dict[str, np.ndarray] = field(default_factory=dict)
    # set when ``deformable`` holds downsampled keypoints rather than particles
    point_radius: float | None = None

    def bbox(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        p = self.deformable[name]
        return p.min(axis=0), p.max(axis=0)

    def to_dict(self, keypoints: bool = True) -> dict:
        out = {
            "time": round(self.time, 9),
            "gripper": {"position": self.gripper_pose.p.tolist(), "orientation": self.gripper_pose.q.tolist(),
                        "width": self.gripper_width},
            "rigid": {},
            "deformable": {},
        }
        for name, s in self.rigid.items():
            out["rigid"][name] = {
                "position": s.pose.p.tolist(),
                "orientation": s.pose.q.tolist(),
                "rpy_deg": np.degrees(quat_to_rpy(s.pose.q)).tolist(),
                "linear_velocity": np.asarray(s.linear_velocity).tolist(),
                "angular_velocity": np.asarray(s.angular_velocity).tolist(),
            }
        for name, p in self.deformable.items():
            lo, hi = self.bbox(name)
            rec = {"bbox_min": lo.tolist(), "bbox_max": hi.tolist(), "count": int(len(p))}
            if keypoints:
                rec["keypoints"] = voxel_keypoints(p).round(5).tolist()
            out["deformable"][name] = rec
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SimSnapshot":
        """Rebuild from :meth:`to_dict` output; deformables come back as their keypoints."""
        g = d["gripper"]
        rigid = {name: RigidState(Pose(r["position"], r["orientation"]), np.asarray(r["linear_velocity"], float),
                                  np.asarray(r["angular_velocity"], float))
                 for name, r in d.get("rigid", {}).items()}
        deform = {}
        for name, r in d.get("deformable", {}).items():
            pts = r.get("keypoints") or [r["bbox_min"], r["bbox_max"]]
            deform[name] = np.asarray(pts, dtype=float).reshape(-1, 3)
        return cls(float(d["time"]), Pose(g["position"], g["orientation"]), float(g["width"]), rigid, deform,
                   point_radius=0.5 * KEYPOINT_VOXEL if deform else None)


class Simulator:
    """Steps every object of ``scene`` under a shared gripper command stream."""

    def __init__(self, scene: SceneDescription, dt: float = DEFAULT_DT, rigid_config: RigidConfig | None = None):
        self.scene = scene
        self.dt = float(dt)
        g = scene.gripper
        self.half_extents = np.asarray(g.finger_half_extents, dtype=float)
        self.grip_pose = g.pose
        self.grip_width = float(g.width)
        self.rigid = None
        if scene.rigid_objects:
            self.rigid = RigidWorld(scene.rigid_objects, scene.gravity, scene.table_height, scene.table_friction,
                                    gripper=g, config=rigid_config)
        self.ropes: list[RopeBody] = []
        self.mpm: list[MPMBody] = []
        for d in scene.deformable_objects:
            if d.engine == "PD":
                self.ropes.append(RopeBody(d, scene.gravity, scene.table_height, dt=self.dt))
            else:
                self.mpm.append(MPMBody(d, scene.workspace_bounds, scene.gravity, scene.table_height))
        self.time = 0.0
        self.steps = 0

    @property
    def asleep(self) -> bool:
        return ((self.rigid is None or self.rigid.asleep) and all(r.asleep for r in self.ropes)
                and all(m.asleep for m in self.mpm))

    def step(self, pose: Pose | None = None, width: float | None = None) -> None:
        """Advance one step with the gripper commanded to ``pose``/``width`` (held if None)."""
        pose = self.grip_pose if pose is None else pose
        width = self.grip_width if width is None else float(width)
        if self.rigid is not None:
            self.rigid.step(pose, width, self.dt)
        for r in self.ropes:
            r.step(pose, width, self.half_extents, self.dt, prev_width=self.grip_width)
        for m in self.mpm:
            m.step(pose, width, self.half_extents, self.dt, prev_pose=self.grip_pose, prev_width=self.grip_width)
        self.grip_pose = pose
        self.grip_width = width
        self.time += self.dt
        self.steps += 1

    def settle(self, seconds: float) -> None:
        """Hold the gripper for up to ``seconds``, stopping early once everything sleeps."""
        n = int(round(seconds / self.dt))
        for _ in range(n):
            if self.asleep:
                break
            self.step()

    def snapshot(self) -> SimSnapshot:
        rigid = {}
        if self.rigid is not None:
            for name, s in zip(self.rigid.names, self.rigid.get_states()):
                rigid[name] = s
        deform = {b.name: b.state.positions.copy() for b in self.ropes + self.mpm}
        # report the finger opening actually reached (it stalls on grasped rigid bodies)
        width = self.rigid.grip_width if self.rigid is not None else self.grip_width
        return SimSnapshot(self.time, self.grip_pose, float(width), rigid, deform)
