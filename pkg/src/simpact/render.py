"""Software rasterizer turning simulator snapshots into RGB frames."""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IoError, ValidationError

BACKGROUND = np.array([235, 238, 242], dtype=np.uint8)
TABLE_COLOR = (0.62, 0.55, 0.45)
GRIPPER_COLOR = (0.25, 0.25, 0.3)
_LIGHT = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])


@dataclass(frozen=True)
class Camera:
    position: tuple[float, float, float] = (0.45, -0.55, 0.45)
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.03)
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    fov_deg: float = 45.0
    width: int = 512
    height: int = 512

    def __post_init__(self):
        if not 10.0 < self.fov_deg < 120.0:
            raise ValidationError("camera.fov_deg", "must lie in (10, 120) degrees")
        if self.width < 64 or self.height < 64:
            raise ValidationError("camera.width", "image must be at least 64x64 pixels")
        fwd = np.subtract(self.look_at, self.position)
        if np.linalg.norm(fwd) == 0 or np.linalg.norm(np.cross(fwd, self.up)) < 1e-9:
            raise ValidationError("camera.up", "degenerate view direction")

    def view_matrix(self) -> np.ndarray:
        """World-to-camera rotation rows (right, down, forward) and eye position."""
        eye = np.asarray(self.position, dtype=float)
        f = np.asarray(self.look_at, dtype=float) - eye
        f /= np.linalg.norm(f)
        r = np.cross(f, self.up)
        r /= np.linalg.norm(r)
        d = np.cross(f, r)
        return np.stack([r, d, f])

    def focal(self) -> float:
        return 0.5 * self.height / math.tan(math.radians(self.fov_deg) / 2.0)

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (u right, v down) and camera depth for world points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cam = (pts - np.asarray(self.position)) @ self.view_matrix().T
        depth = cam[:, 2]
        safe = np.where(depth > 1e-9, depth, 1e-9)
        f = self.focal()
        u = f * cam[:, 0] / safe + 0.5 * self.width
        v = f * cam[:, 1] / safe + 0.5 * self.height
        return np.stack([u, v], axis=1), depth

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "fov_deg": self.fov_deg,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            position=tuple(float(x) for x in d.get("position", cls.position)),
            look_at=tuple(float(x) for x in d.get("look_at", cls.look_at)),
            up=tuple(float(x) for x in d.get("up", cls.up)),
            fov_deg=float(d.get("fov_deg", cls.fov_deg)),
            width=int(d.get("width", cls.width)),
            height=int(d.get("height", cls.height)),
        )


NEAR_PLANE = 1e-2


def _box_triangles(corners: np.ndarray) -> np.ndarray:
    """Twelve outward triangles of a box given corners in FingerBox.corners() order."""
    # corner index = sx + 2*sy + 4*sz with s in {0: -1, 1: +1}
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = []
    for a, b, c, d in quads:
        tris.append((a, b, c))
        tris.append((a, c, d))
    return corners[np.array(tris)]


class _Canvas:
    def __init__(self, camera: Camera):
        self.cam = camera
        self.rgb = np.empty((camera.height, camera.width, 3), dtype=np.float64)
        self.rgb[:] = BACKGROUND / 255.0
        self.depth = np.full((camera.height, camera.width), np.inf)

    def triangles(self, tris: np.ndarray, color, two_sided: bool = True) -> None:
        """Flat-shaded triangles (T, 3, 3) with a depth test."""
        if len(tris) == 0:
            return
        cam = self.cam
        uv, depth = cam.project(tris.reshape(-1, 3))
        uv = uv.reshape(-1, 3, 2)
        depth = depth.reshape(-1, 3)
        n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
        norm = np.linalg.norm(n, axis=1)
        keep = (norm > 1e-14) & np.all(depth > NEAR_PLANE, axis=1)
        n[keep] /= norm[keep, None]
        view = tris[:, 0] - np.asarray(cam.position)
        facing = np.einsum("ij,ij->i", n, view)
        if two_sided:
            n = np.where(facing[:, None] > 0, -n, n)
        else:
            keep &= facing < 0
        shade = 0.35 + 0.65 * np.clip(n @ _LIGHT, 0.0, 1.0)
        base = np.asarray(color, dtype=float)
        h, w = self.depth.shape
        for t in np.nonzero(keep)[0]:
            p = uv[t]
            x0 = max(int(np.floor(p[:, 0].min())), 0)
            x1 = min(int(np.ceil(p[:, 0].max())), w - 1)
            y0 = max(int(np.floor(p[:, 1].min())), 0)
            y1 = min(int(np.ceil(p[:, 1].max())), h - 1)
            if x0 > x1 or y0 > y1:
                continue
            xs, ys = np.meshgrid(np.arange(x0, x1 + 1) + 0.5, np.arange(y0, y1 + 1) + 0.5)
            (ax, ay), (bx, by), (cx, cy) = p
            area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if abs(area) < 1e-12:
                continue
            w0 = ((bx - xs) * (cy - ys) - (by - ys) * (cx - xs)) / area
            w1 = ((cx - xs) * (ay - ys) - (cy - ys) * (ax - xs)) / area
            w2 = 1.0 - w0 - w1
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
            if not inside.any():
                continue
            inv_z = w0 / depth[t, 0] + w1 / depth[t, 1] + w2 / depth[t, 2]
            z = 1.0 / np.where(inside, inv_z, 1.0)
            region = self.depth[y0:y1 + 1, x0:x1 + 1]
            hit = inside & (z < region)
            region[hit] = z[hit]
            self.rgb[y0:y1 + 1, x0:x1 + 1][hit] = base * shade[t]

    def discs(self, centers: np.ndarray, radius: float, color) -> None:
        if len(centers) == 0:
            return
        uv, depth = self.cam.project(centers)
        f = self.cam.focal()
        base = np.asarray(color, dtype=float)
        h, w = self.depth.shape
        order = np.argsort(-depth, kind="stable")
        for i in order:
            z = depth[i]
            if z <= NEAR_PLANE:
                continue
            r = max(f * radius / z, 0.75)
            u, v = uv[i]
            x0, x1 = max(int(u - r), 0), min(int(u + r) + 1, w - 1)
            y0, y1 = max(int(v - r), 0), min(int(v + r) + 1, h - 1)
            if x0 > x1 or y0 > y1:
                continue
            xs, ys = np.meshgrid(np.arange(x0, x1 + 1) + 0.5, np.arange(y0, y1 + 1) + 0.5)
            d2 = ((xs - u) ** 2 + (ys - v) ** 2) / (r * r)
            inside = d2 <= 1.0
            zz = z - radius * np.sqrt(np.clip(1.0 - d2, 0.0, 1.0))
            region = self.depth[y0:y1 + 1, x0:x1 + 1]
            hit = inside & (zz < region)
            region[hit] = zz[hit]
            shade = 0.55 + 0.45 * np.sqrt(np.clip(1.0 - d2, 0.0, 1.0))
            self.rgb[y0:y1 + 1, x0:x1 + 1][hit] = base * shade[hit][:, None]

    def image(self) -> np.ndarray:
        return np.clip(np.round(self.rgb * 255.0), 0, 255).astype(np.uint8)


def render_state(snapshot, scene, camera: Camera | None = None) -> np.ndarray:
    """Render a :class:`~simpact.sim.simulator.SimSnapshot` of ``scene`` to an (H, W, 3) uint8 image."""
    from .sim.gripper import finger_boxes

    cam = camera or scene.camera
    canvas = _Canvas(cam)
    lo, hi = np.asarray(scene.workspace_bounds.lo), np.asarray(scene.workspace_bounds.hi)
    pad = 0.25 * (hi[:2] - lo[:2])
    x0, y0 = lo[:2] - pad
    x1, y1 = hi[:2] + pad
    z = scene.table_height
    quad = np.array([[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]])
    canvas.triangles(np.array([quad[[0, 1, 2]], quad[[0, 2, 3]]]), TABLE_COLOR)
    for obj in scene.rigid_objects:
        state = snapshot.rigid.get(obj.name)
        pose = state.pose if state is not None else obj.pose
        verts = pose.apply(obj.mesh.vertices)
        canvas.triangles(verts[obj.mesh.triangles], obj.color)
    for obj in scene.deformable_objects:
        pts = snapshot.deformable.get(obj.name, np.asarray(obj.particles))
        radius = getattr(snapshot, "point_radius", None) or max(obj.collision_radius, 0.6 * obj.particle_spacing)
        canvas.discs(np.asarray(pts), radius, obj.color)
    for box in finger_boxes(snapshot.gripper_pose, snapshot.gripper_width, scene.gripper.finger_half_extents):
        canvas.triangles(_box_triangles(box.corners()), GRIPPER_COLOR)
    return canvas.image()


def frame_name(n: int) -> str:
    return f"fig_{n}.png"


def save_frame(buffer: np.ndarray, path) -> Path:
    """Write an 8-bit RGB PNG atomically (temporary file in the same directory, then rename)."""
    from PIL import Image

    path = Path(path)
    if not path.parent.is_dir():
        raise IoError(f"directory {path.parent} does not exist")
    arr = np.asarray(buffer)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise IoError("frame buffer must be an (H, W, 3) uint8 array")
    fd, tmp = tempfile.mkstemp(prefix=".frame-", suffix=".png", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            Image.fromarray(arr, mode="RGB").save(fh, format="PNG")
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(f"could not write {path}: {exc}") from exc
    return path
