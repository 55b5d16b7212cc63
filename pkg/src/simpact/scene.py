"""Declarative scene description: geometry and physical parameters for every object.

A scene file is UTF-8 JSON with top-level keys ``gravity``, ``table_height``,
``rigid_objects``, ``deformable_objects``, ``gripper``, ``workspace_bounds`` and
``task`` (plus optional ``camera``, ``table_friction``, ``perturbation_groups``).
Lengths are meters, masses kilograms, angles in degrees.

Rigid meshes are given inline (``{"vertices": [...], "triangles": [...]}``) or as a
path to an OBJ file relative to the scene file (``{"obj": "meshes/carton.obj"}``).
An optional ``target_bbox_diag`` rescales and recenters the mesh on load. Non-convex
bodies list an authored convex decomposition under ``hulls`` (a list of vertex
lists in the body frame); otherwise the convex hull of the mesh is used.

Deformable particles are given inline (``particles``) or generated from a
``surface_points`` + ``spacing`` stanza by :func:`sample_volume_particles`.

Default physical parameters (used when a field is omitted):

=============  ========  =====  ========  ============  ===========
class          E (Pa)    nu     rho       yield (Pa)    phi (deg)
=============  ========  =====  ========  ============  ===========
jelly          1.0e4     0.30   1000      -             -
metal          5.0e6     0.30   2700      5.0e4         -
sand           1.0e5     0.30   1600      -             30
foam           5.0e3     0.20   200       -             -
plasticine     3.0e5     0.35   1200      1.0e4         -
PD (rope)      5.0e5     0.30   1100      -             -
=============  ========  =====  ========  ============  ===========

The values sit in the ranges commonly used for graphics MPM material presets
(e.g. the MLS-MPM / PhysGaussian demo materials); "metal" is deliberately softened
so explicit time steps stay affordable. Rigid defaults: friction 0.5, density
400 kg/m^3 when ``mass`` is omitted, center of mass at the volume centroid of the
collision hulls.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateMesh, EmptyVolume, ParseError, ValidationError
from .render import Camera
from .transforms import Pose

MATERIAL_CLASSES = ("jelly", "metal", "sand", "foam", "plasticine")
ENGINES = ("PD", "MPM")
TOOLS = ("parallel_jaw", "flat_plate")
TASK_IDS = ("non_toppling_push", "bowl_stacking", "pivoting", "shape_rope", "shape_dough", "custom")
MAX_GRIPPER_WIDTH = 0.1
DEFAULT_FRICTION = 0.5
DEFAULT_DENSITY = 400.0
DEFAULT_PARTICLE_SPACING = 0.01

_MATERIAL_TABLE: dict[str, dict[str, float]] = {
    "jelly": {"youngs_modulus": 1.0e4, "poisson_ratio": 0.30, "density": 1000.0},
    "metal": {"youngs_modulus": 5.0e6, "poisson_ratio": 0.30, "density": 2700.0, "yield_stress": 5.0e4},
    "sand": {"youngs_modulus": 1.0e5, "poisson_ratio": 0.30, "density": 1600.0, "friction_angle": 30.0},
    "foam": {"youngs_modulus": 5.0e3, "poisson_ratio": 0.20, "density": 200.0},
    "plasticine": {"youngs_modulus": 3.0e5, "poisson_ratio": 0.35, "density": 1200.0, "yield_stress": 1.0e4},
}
PD_DEFAULTS: dict[str, float] = {"youngs_modulus": 5.0e5, "poisson_ratio": 0.30, "density": 1100.0}

# Keys each task evaluator needs; ``None`` means the scene must supply the value.
TASK_CRITERIA: dict[str, dict[str, float | None]] = {
    "non_toppling_push": {"target_x": None, "tilt_threshold_deg": 15.0, "align_tol": 0.01},
    "bowl_stacking": {"rim_radius": None, "floor_offset": 0.0, "rest_speed": 1e-3},
    "pivoting": {"vertical_tol_deg": 10.0},
    "shape_rope": {"ratio_min": 0.5, "ratio_max": 2.0},
    "shape_dough": {"ratio_max": 1.5},
    "custom": {},
}
# Object roles each task evaluator reads from ``task.objects``.
TASK_ROLES: dict[str, tuple[str, ...]] = {
    "non_toppling_push": ("target",),
    "bowl_stacking": ("upper", "lower"),
    "pivoting": ("target",),
    "shape_rope": ("target",),
    "shape_dough": ("target",),
    "custom": (),
}


def default_params(material_class: str) -> dict[str, float]:
    """Full parameter set for an MPM material class (see module table)."""
    if material_class not in _MATERIAL_TABLE:
        raise ValidationError("material_class", f"unknown material {material_class!r}")
    return dict(_MATERIAL_TABLE[material_class])


# ---------------------------------------------------------------------------
# geometry types


class TriMesh:
    """Triangle mesh with (V, 3) float vertices and (T, 3) int triangles."""

    def __init__(self, vertices, triangles):
        self.vertices = np.array(vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValidationError("triangles", "vertex index out of range")

    @classmethod
    def cleaned(cls, vertices, triangles, tol: float = 1e-12) -> "TriMesh":
        """Merge duplicate vertices and drop zero-area triangles."""
        v = np.array(vertices, dtype=float).reshape(-1, 3)
        t = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValidationError("triangles", "vertex index out of range")
        keys = np.round(v / max(tol, 1e-15)).astype(np.int64) if tol > 0 else v
        _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(first)
        remap = np.empty_like(order)
        remap[order] = np.arange(len(order))
        new_v = v[np.sort(first)]
        new_t = remap[inverse[t]] if t.size else t
        if len(new_t):
            a, b, c = (new_v[new_t[:, i]] for i in range(3))
            area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
            scale = max(float(np.ptp(new_v, axis=0).max()), 1e-12)
            new_t = new_t[area > 1e-14 * scale * scale]
        return cls(new_v, new_t)

    def __eq__(self, other):
        if not isinstance(other, TriMesh):
            return NotImplemented
        return np.array_equal(self.vertices, other.vertices) and np.array_equal(self.triangles, other.triangles)

    def __repr__(self):
        return f"TriMesh(V={len(self.vertices)}, T={len(self.triangles)})"

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def transformed(self, pose: Pose) -> "TriMesh":
        return TriMesh(pose.apply(self.vertices), self.triangles.copy())

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "triangles": self.triangles.tolist()}


def box_mesh(half_extents, center=(0.0, 0.0, 0.0)) -> TriMesh:
    hx, hy, hz = half_extents
    c = np.asarray(center, dtype=float)
    v = np.array([[sx * hx, sy * hy, sz * hz] for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)]) + c
    t = [
        [0, 2, 1], [1, 2, 3],  # bottom (-z)
        [4, 5, 6], [5, 7, 6],  # top (+z)
        [0, 1, 4], [1, 5, 4],  # -y
        [2, 6, 3], [3, 6, 7],  # +y
        [0, 4, 2], [2, 4, 6],  # -x
        [1, 3, 5], [3, 7, 5],  # +x
    ]
    return TriMesh(v, t)


def normalize_mesh(raw: TriMesh, target_bbox_diag: float) -> TriMesh:
    """Recenter on the vertex centroid and scale so the bbox diagonal is ``target_bbox_diag``."""
    if len(raw.vertices) < 4:
        raise DegenerateMesh("need at least 4 vertices")
    if not target_bbox_diag > 0:
        raise ValueError("target_bbox_diag must be positive")
    diag = raw.bbox_diagonal()
    if diag <= 0.0 or not np.isfinite(diag):
        raise DegenerateMesh("mesh has zero extent")
    centroid = raw.vertices.mean(axis=0)
    scale = target_bbox_diag / diag
    v = (raw.vertices - centroid) * scale
    # remove the residual mean left by rounding
    v -= v.mean(axis=0)
    return TriMesh(v, raw.triangles.copy())


def sample_volume_particles(surface_points, table_height: float, spacing: float) -> np.ndarray:
    """Grid-fill the columns between the table plane and a sampled top surface.

    Each (x, y) cell of pitch ``spacing`` that contains at least one surface point is
    filled with particles at ``table_height + (k + 1/2) * spacing`` for every k whose
    height stays strictly below the surface height at the cell center (nearest
    surface point in the xy-plane).
    """
    pts = np.asarray(surface_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("surface_points must be non-empty")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    if np.any(pts[:, 2] < table_height - 1e-12):
        raise ValueError("surface points below the table")
    lo = pts[:, :2].min(axis=0)
    extent = pts[:, :2].max(axis=0) - lo
    n = np.maximum(1, np.ceil(extent / spacing - 1e-9).astype(int))
    idx = np.floor((pts[:, :2] - lo) / spacing + 1e-9).astype(int)
    idx = np.minimum(idx, n - 1)
    covered = np.unique(idx, axis=0)
    centers = lo + (covered + 0.5) * spacing
    tree = cKDTree(pts[:, :2])
    _, nearest = tree.query(centers)
    heights = pts[nearest, 2]
    out = []
    for c, h in zip(centers, heights):
        k = 0
        while True:
            z = table_height + (k + 0.5) * spacing
            if not z < h:
                break
            out.append((c[0], c[1], z))
            k += 1
    if not out:
        raise EmptyVolume("surface lies on the table; no interior volume")
    return np.array(out)


# ---------------------------------------------------------------------------
# object specs


@dataclass
class RigidObjectSpec:
    name: str
    mesh: TriMesh
    pose: Pose
    mass: float
    friction: float = DEFAULT_FRICTION
    com_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    hulls: list[np.ndarray] = field(default_factory=list)
    color: tuple[float, float, float] = (0.8, 0.8, 0.8)
    static: bool = False

    def __eq__(self, other):
        if not isinstance(other, RigidObjectSpec):
            return NotImplemented
        return (
            self.name == other.name and self.mesh == other.mesh and self.pose == other.pose
            and self.mass == other.mass and self.friction == other.friction
            and tuple(self.com_offset) == tuple(other.com_offset)
            and len(self.hulls) == len(other.hulls)
            and all(np.array_equal(a, b) for a, b in zip(self.hulls, other.hulls))
            and tuple(self.color) == tuple(other.color) and self.static == other.static
        )

    def collision_hulls(self) -> list[np.ndarray]:
        return self.hulls if self.hulls else [self.mesh.vertices]


@dataclass
class DeformableObjectSpec:
    name: str
    particles: np.ndarray
    engine: str
    youngs_modulus: float
    poisson_ratio: float
    density: float
    material_class: str | None = None
    friction_angle: float | None = None
    yield_stress: float | None = None
    particle_spacing: float = DEFAULT_PARTICLE_SPACING
    pinned: tuple[int, ...] = ()
    radius: float | None = None
    color: tuple[float, float, float] = (0.9, 0.5, 0.2)

    def __eq__(self, other):
        if not isinstance(other, DeformableObjectSpec):
            return NotImplemented
        a = {k: v for k, v in self.__dict__.items() if k != "particles"}
        b = {k: v for k, v in other.__dict__.items() if k != "particles"}
        return a == b and np.array_equal(self.particles, other.particles)

    @property
    def collision_radius(self) -> float:
        return self.radius if self.radius is not None else 0.5 * self.particle_spacing


@dataclass(frozen=True)
class GripperSpec:
    pose: Pose
    width: float = MAX_GRIPPER_WIDTH
    finger_half_extents: tuple[float, float, float] = (0.01, 0.005, 0.02)
    tool: str = "parallel_jaw"


@dataclass
class TaskSpec:
    task_id: str
    instruction: str = ""
    criterion_params: dict[str, float] = field(default_factory=dict)
    objects: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Bounds:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= np.asarray(self.lo) - tol) and np.all(p <= np.asarray(self.hi) + tol))

    def to_dict(self) -> dict:
        return {"min": list(self.lo), "max": list(self.hi)}


@dataclass
class SceneDescription:
    gripper: GripperSpec
    workspace_bounds: Bounds
    task: TaskSpec
    rigid_objects: list[RigidObjectSpec] = field(default_factory=list)
    deformable_objects: list[DeformableObjectSpec] = field(default_factory=list)
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    table_height: float = 0.0
    table_friction: float = 1.0
    camera: Camera = field(default_factory=Camera)
    perturbation_groups: list[list[str]] = field(default_factory=list)

    def object_names(self) -> list[str]:
        return [o.name for o in self.rigid_objects] + [o.name for o in self.deformable_objects]

    def rigid(self, name: str) -> RigidObjectSpec:
        for o in self.rigid_objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def deformable(self, name: str) -> DeformableObjectSpec:
        for o in self.deformable_objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def role(self, role: str) -> str:
        return self.task.objects[role]


# ---------------------------------------------------------------------------
# validation


def validate_rigid(obj: RigidObjectSpec, ctx: str) -> None:
    if not obj.mass > 0:
        raise ValidationError(f"{ctx}.mass", "must be > 0")
    if not obj.friction >= 0:
        raise ValidationError(f"{ctx}.friction", "must be >= 0")
    if len(obj.mesh.vertices) < 4 or len(obj.mesh.triangles) == 0:
        raise ValidationError(f"{ctx}.mesh", "mesh needs at least 4 vertices and one triangle")
    for i, h in enumerate(obj.hulls):
        if np.asarray(h).shape[0] < 4:
            raise ValidationError(f"{ctx}.hulls[{i}]", "hull needs at least 4 vertices")


def validate_deformable(obj: DeformableObjectSpec, table_height: float, ctx: str) -> None:
    if obj.engine not in ENGINES:
        raise ValidationError(f"{ctx}.engine", f"must be one of {ENGINES}")
    if obj.engine == "MPM" and obj.material_class is None:
        raise ValidationError(f"{ctx}.material_class", "required for MPM objects")
    if obj.material_class is not None and obj.material_class not in MATERIAL_CLASSES:
        raise ValidationError(f"{ctx}.material_class", f"must be one of {MATERIAL_CLASSES}")
    if not obj.youngs_modulus > 0:
        raise ValidationError(f"{ctx}.youngs_modulus", "must be > 0")
    if not 0.0 < obj.poisson_ratio < 0.5:
        raise ValidationError(f"{ctx}.poisson_ratio", "must lie in (0, 0.5)")
    if not obj.density > 0:
        raise ValidationError(f"{ctx}.density", "must be > 0")
    if not obj.particle_spacing > 0:
        raise ValidationError(f"{ctx}.particle_spacing", "must be > 0")
    needs_phi = obj.material_class == "sand"
    needs_yield = obj.material_class in ("metal", "plasticine")
    if needs_phi != (obj.friction_angle is not None):
        raise ValidationError(f"{ctx}.friction_angle", "present iff material_class is sand")
    if needs_yield != (obj.yield_stress is not None):
        raise ValidationError(f"{ctx}.yield_stress", "present iff material_class is metal or plasticine")
    if obj.yield_stress is not None and not obj.yield_stress > 0:
        raise ValidationError(f"{ctx}.yield_stress", "must be > 0")
    if obj.friction_angle is not None and not 0 < obj.friction_angle < 90:
        raise ValidationError(f"{ctx}.friction_angle", "must lie in (0, 90) degrees")
    p = obj.particles
    if p.ndim != 2 or p.shape[1] != 3 or not np.all(np.isfinite(p)):
        raise ValidationError(f"{ctx}.particles", "must be a finite (N, 3) array")
    if len(p) < 8:
        raise ValidationError(f"{ctx}.particles", "need at least 8 particles")
    if np.any(p[:, 2] < table_height - obj.particle_spacing / 2 - 1e-12):
        raise ValidationError(f"{ctx}.particles", "particle below the table plane")
    if any(i < 0 or i >= len(p) for i in obj.pinned):
        raise ValidationError(f"{ctx}.pinned", "index out of range")


def validate_scene(scene: SceneDescription) -> None:
    names = scene.object_names()
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ValidationError("objects", f"duplicate object names {sorted(dup)}")
    g = scene.gripper
    if not 0.0 <= g.width <= MAX_GRIPPER_WIDTH:
        raise ValidationError("gripper.width", f"must lie in [0.0, {MAX_GRIPPER_WIDTH}]")
    if g.tool not in TOOLS:
        raise ValidationError("gripper.tool", f"must be one of {TOOLS}")
    if any(not e > 0 for e in g.finger_half_extents):
        raise ValidationError("gripper.finger_half_extents", "must be positive")
    lo, hi = np.asarray(scene.workspace_bounds.lo), np.asarray(scene.workspace_bounds.hi)
    if np.any(hi <= lo):
        raise ValidationError("workspace_bounds", "max must exceed min on every axis")
    if not scene.workspace_bounds.contains(g.pose.position):
        raise ValidationError("gripper.pose", "gripper pose lies outside workspace_bounds")
    for i, o in enumerate(scene.rigid_objects):
        validate_rigid(o, f"rigid_objects[{i}]")
    for i, o in enumerate(scene.deformable_objects):
        validate_deformable(o, scene.table_height, f"deformable_objects[{i}]")
    t = scene.task
    if t.task_id not in TASK_IDS:
        raise ValidationError("task.task_id", f"must be one of {TASK_IDS}")
    for key, default in TASK_CRITERIA[t.task_id].items():
        if key not in t.criterion_params and default is None:
            raise ValidationError(f"task.criterion_params.{key}", "required by the task evaluator")
    for role in TASK_ROLES[t.task_id]:
        if role not in t.objects:
            raise ValidationError(f"task.objects.{role}", "required by the task evaluator")
        if t.objects[role] not in names:
            raise ValidationError(f"task.objects.{role}", f"unknown object {t.objects[role]!r}")
    for gi, group in enumerate(scene.perturbation_groups):
        for n in group:
            if n not in names:
                raise ValidationError(f"perturbation_groups[{gi}]", f"unknown object {n!r}")


# ---------------------------------------------------------------------------
# parsing


def _req(d: dict, key: str, ctx: str):
    if not isinstance(d, dict):
        raise ParseError(f"{ctx}: expected an object")
    if key not in d:
        raise ParseError(f"{ctx}.{key}: missing required field")
    return d[key]


def _vec(v, n: int, ctx: str) -> tuple[float, ...]:
    try:
        arr = np.asarray(v, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{ctx}: expected {n} numbers") from exc
    if arr.shape != (n,):
        raise ParseError(f"{ctx}: expected {n} numbers")
    return tuple(float(x) for x in arr)


def _num(v, ctx: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{ctx}: expected a number")
    return float(v)


def load_obj(path: Path) -> TriMesh:
    """Read positions and triangular faces from a Wavefront OBJ file."""
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise ParseError(f"{path}:{lineno}: only triangular faces are supported")
                tris.append(tuple(i - 1 if i > 0 else len(verts) + i for i in idx))
        except (IndexError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return TriMesh(verts, tris)


def _parse_mesh(d: dict, base: Path, ctx: str) -> TriMesh:
    mesh_d = _req(d, "mesh", ctx)
    if isinstance(mesh_d, str):
        raw = load_obj(base / mesh_d)
    elif isinstance(mesh_d, dict) and "obj" in mesh_d:
        raw = load_obj(base / mesh_d["obj"])
    else:
        v = _req(mesh_d, "vertices", f"{ctx}.mesh")
        t = _req(mesh_d, "triangles", f"{ctx}.mesh")
        try:
            raw = TriMesh.cleaned(v, t)
        except ValueError as exc:
            raise ParseError(f"{ctx}.mesh: {exc}") from exc
        return raw if "target_bbox_diag" not in d else normalize_mesh(raw, _num(d["target_bbox_diag"], f"{ctx}.target_bbox_diag"))
    raw = TriMesh.cleaned(raw.vertices, raw.triangles)
    if "target_bbox_diag" in d:
        raw = normalize_mesh(raw, _num(d["target_bbox_diag"], f"{ctx}.target_bbox_diag"))
    return raw


def _parse_pose(d, ctx: str) -> Pose:
    if not isinstance(d, dict):
        raise ParseError(f"{ctx}: expected an object")
    try:
        return Pose.from_dict(d)
    except (ValueError, TypeError) as exc:
        raise ParseError(f"{ctx}: {exc}") from exc


def _parse_rigid(d: dict, base: Path, ctx: str) -> RigidObjectSpec:
    # imported lazily: rigid inertia helpers live with the simulator
    from .sim.hull import hulls_mass_properties

    name = str(_req(d, "name", ctx))
    mesh = _parse_mesh(d, base, ctx)
    hulls = [np.array(h, dtype=float).reshape(-1, 3) for h in d.get("hulls", [])]
    pose = _parse_pose(_req(d, "pose", ctx), f"{ctx}.pose")
    friction = _num(d.get("friction", DEFAULT_FRICTION), f"{ctx}.friction")
    geom = hulls if hulls else [mesh.vertices]
    volume, centroid = hulls_mass_properties(geom)
    mass = _num(d["mass"], f"{ctx}.mass") if "mass" in d else DEFAULT_DENSITY * volume
    com = _vec(d["com_offset"], 3, f"{ctx}.com_offset") if d.get("com_offset") is not None else tuple(float(x) for x in centroid)
    color = _vec(d.get("color", (0.8, 0.8, 0.8)), 3, f"{ctx}.color")
    return RigidObjectSpec(name, mesh, pose, mass, friction, com, hulls, color, bool(d.get("static", False)))


def _parse_deformable(d: dict, table_height: float, ctx: str) -> DeformableObjectSpec:
    name = str(_req(d, "name", ctx))
    engine = str(_req(d, "engine", ctx))
    mclass = d.get("material_class")
    spacing = _num(d.get("particle_spacing", d.get("spacing", DEFAULT_PARTICLE_SPACING)), f"{ctx}.particle_spacing")
    if "particles" in d:
        particles = np.array(d["particles"], dtype=float)
    elif "surface_points" in d:
        try:
            particles = sample_volume_particles(d["surface_points"], table_height, spacing)
        except ValueError as exc:
            raise ParseError(f"{ctx}.surface_points: {exc}") from exc
    else:
        raise ParseError(f"{ctx}: needs 'particles' or 'surface_points'")
    if mclass is not None and mclass in MATERIAL_CLASSES:
        defaults = default_params(mclass)
    elif mclass is None and engine == "PD":
        defaults = dict(PD_DEFAULTS)
    else:
        defaults = {}
    def pick(key):
        if key in d and d[key] is not None:
            return _num(d[key], f"{ctx}.{key}")
        return defaults.get(key)

    e, nu, rho = pick("youngs_modulus"), pick("poisson_ratio"), pick("density")
    if e is None or nu is None or rho is None:
        raise ParseError(f"{ctx}: elastic parameters missing and no defaults for material {mclass!r}")
    return DeformableObjectSpec(
        name=name,
        particles=particles,
        engine=engine,
        youngs_modulus=e,
        poisson_ratio=nu,
        density=rho,
        material_class=mclass,
        friction_angle=pick("friction_angle"),
        yield_stress=pick("yield_stress"),
        particle_spacing=spacing,
        pinned=tuple(int(i) for i in d.get("pinned", ())),
        radius=_num(d["radius"], f"{ctx}.radius") if d.get("radius") is not None else None,
        color=_vec(d.get("color", (0.9, 0.5, 0.2)), 3, f"{ctx}.color"),
    )


def scene_from_dict(data: dict, base_dir: Path | str = ".") -> SceneDescription:
    """Build and validate a scene from parsed JSON."""
    base = Path(base_dir)
    if not isinstance(data, dict):
        raise ParseError("scene: top level must be an object")
    table_height = _num(data.get("table_height", 0.0), "table_height")
    gd = _req(data, "gripper", "scene")
    gripper = GripperSpec(
        pose=_parse_pose(_req(gd, "pose", "gripper"), "gripper.pose"),
        width=_num(gd.get("width", MAX_GRIPPER_WIDTH), "gripper.width"),
        finger_half_extents=_vec(gd.get("finger_half_extents", (0.01, 0.005, 0.02)), 3, "gripper.finger_half_extents"),
        tool=str(gd.get("tool", "parallel_jaw")),
    )
    wb = _req(data, "workspace_bounds", "scene")
    bounds = Bounds(_vec(_req(wb, "min", "workspace_bounds"), 3, "workspace_bounds.min"),
                    _vec(_req(wb, "max", "workspace_bounds"), 3, "workspace_bounds.max"))
    td = _req(data, "task", "scene")
    task_id = str(_req(td, "task_id", "task"))
    params = {str(k): _num(v, f"task.criterion_params.{k}") for k, v in td.get("criterion_params", {}).items()}
    for key, default in TASK_CRITERIA.get(task_id, {}).items():
        if key not in params and default is not None:
            params[key] = float(default)
    task = TaskSpec(task_id, str(td.get("instruction", "")), params, {str(k): str(v) for k, v in td.get("objects", {}).items()})
    rigid = [_parse_rigid(o, base, f"rigid_objects[{i}]") for i, o in enumerate(data.get("rigid_objects", []))]
    deform = [_parse_deformable(o, table_height, f"deformable_objects[{i}]") for i, o in enumerate(data.get("deformable_objects", []))]
    camera = Camera.from_dict(data["camera"]) if "camera" in data else Camera()
    scene = SceneDescription(
        gripper=gripper,
        workspace_bounds=bounds,
        task=task,
        rigid_objects=rigid,
        deformable_objects=deform,
        gravity=_vec(data.get("gravity", (0.0, 0.0, -9.81)), 3, "gravity"),
        table_height=table_height,
        table_friction=_num(data.get("table_friction", 1.0), "table_friction"),
        camera=camera,
        perturbation_groups=[[str(n) for n in g] for g in data.get("perturbation_groups", [])],
    )
    validate_scene(scene)
    return scene


def load_scene(path: str | Path) -> SceneDescription:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return scene_from_dict(data, path.parent)


def scene_to_dict(scene: SceneDescription) -> dict[str, Any]:
    def rigid(o: RigidObjectSpec) -> dict:
        d = {
            "name": o.name,
            "mesh": o.mesh.to_dict(),
            "pose": o.pose.to_dict(),
            "mass": o.mass,
            "friction": o.friction,
            "com_offset": list(o.com_offset),
            "color": list(o.color),
        }
        if o.hulls:
            d["hulls"] = [np.asarray(h).tolist() for h in o.hulls]
        if o.static:
            d["static"] = True
        return d

    def deform(o: DeformableObjectSpec) -> dict:
        d = {
            "name": o.name,
            "engine": o.engine,
            "particles": o.particles.tolist(),
            "youngs_modulus": o.youngs_modulus,
            "poisson_ratio": o.poisson_ratio,
            "density": o.density,
            "particle_spacing": o.particle_spacing,
            "color": list(o.color),
        }
        for key in ("material_class", "friction_angle", "yield_stress", "radius"):
            if getattr(o, key) is not None:
                d[key] = getattr(o, key)
        if o.pinned:
            d["pinned"] = list(o.pinned)
        return d

    g = scene.gripper
    out = {
        "gravity": list(scene.gravity),
        "table_height": scene.table_height,
        "table_friction": scene.table_friction,
        "rigid_objects": [rigid(o) for o in scene.rigid_objects],
        "deformable_objects": [deform(o) for o in scene.deformable_objects],
        "gripper": {
            "pose": g.pose.to_dict(),
            "width": g.width,
            "finger_half_extents": list(g.finger_half_extents),
            "tool": g.tool,
        },
        "workspace_bounds": scene.workspace_bounds.to_dict(),
        "task": {
            "task_id": scene.task.task_id,
            "instruction": scene.task.instruction,
            "criterion_params": dict(scene.task.criterion_params),
            "objects": dict(scene.task.objects),
        },
        "camera": scene.camera.to_dict(),
    }
    if scene.perturbation_groups:
        out["perturbation_groups"] = [list(g) for g in scene.perturbation_groups]
    return out


def save_scene(scene: SceneDescription, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1), encoding="utf-8")


def with_object_pose(scene: SceneDescription, name: str, pose: Pose) -> SceneDescription:
    """Copy of ``scene`` with one rigid object moved."""
    rigid = [replace(o, pose=pose) if o.name == name else o for o in scene.rigid_objects]
    return replace(scene, rigid_objects=rigid)


def scene_summary(scene: SceneDescription) -> dict[str, Any]:
    """Compact numeric description used in prompts and logs."""
    objs = []
    for o in scene.rigid_objects:
        lo, hi = o.mesh.bbox()
        objs.append({
            "name": o.name,
            "kind": "rigid",
            "position": [round(x, 4) for x in o.pose.position],
            "yaw_deg": round(math.degrees(o.pose.yaw), 2),
            "bbox_size": [round(x, 4) for x in (hi - lo)],
            "static": o.static,
        })
    for o in scene.deformable_objects:
        lo, hi = o.particles.min(axis=0), o.particles.max(axis=0)
        objs.append({
            "name": o.name,
            "kind": "deformable",
            "engine": o.engine,
            "bbox_min": [round(x, 4) for x in lo],
            "bbox_max": [round(x, 4) for x in hi],
        })
    g = scene.gripper
    return {
        "objects": objs,
        "end_effector": {"position": [round(x, 4) for x in g.pose.position],
                         "yaw_deg": round(math.degrees(g.pose.yaw), 2), "width": g.width},
        "workspace": scene.workspace_bounds.to_dict(),
        "table_height": scene.table_height,
    }
