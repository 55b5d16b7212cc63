"""Author the five benchmark scene files shipped under ``simpact/data/scenes``.

Run from the repository root: ``python scripts/build_scenes.py``. The output is
deterministic; rerunning overwrites the JSON files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

import numpy as np

from simpact.sim.hull import hull_triangles

OUT = Path(__file__).resolve().parents[1] / "src" / "simpact" / "data" / "scenes"


def r(x, nd: int = 6):
    return np.round(np.asarray(x, dtype=float), nd).tolist()


def box(lo, hi) -> dict:
    """Inline mesh for an axis-aligned box."""
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    v = [[x, y, z] for z in (z0, z1) for y in (y0, y1) for x in (x0, x1)]
    t = [[0, 2, 3], [0, 3, 1], [4, 5, 7], [4, 7, 6], [0, 1, 5], [0, 5, 4],
         [2, 6, 7], [2, 7, 3], [0, 4, 6], [0, 6, 2], [1, 3, 7], [1, 7, 5]]
    return {"vertices": r(v), "triangles": t}


def bowl_hulls(outer: float, inner: float, height: float, base: float, segments: int = 8) -> list[np.ndarray]:
    """Flat base plus a ring of wall segments, each an annular sector prism."""
    hulls = []
    ang = np.linspace(0.0, 2 * math.pi, segments + 1) + math.pi / segments
    disc = [[outer * math.cos(a), outer * math.sin(a), z] for a in ang[:-1] for z in (0.0, base)]
    hulls.append(np.array(disc))
    for a0, a1 in zip(ang[:-1], ang[1:]):
        pts = []
        for rad in (inner, outer):
            for a in (a0, a1):
                for z in (base, height):
                    pts.append([rad * math.cos(a), rad * math.sin(a), z])
        hulls.append(np.array(pts))
    return hulls


def hulls_mesh(hulls) -> dict:
    verts, tris = [], []
    for h in hulls:
        v, t = hull_triangles(h)
        tris.extend((t + len(verts)).tolist())
        verts.extend(v.tolist())
    return {"vertices": r(verts), "triangles": tris}


def gripper(pos, yaw_deg=0.0, width=0.1, half=(0.01, 0.005, 0.01), tool="parallel_jaw") -> dict:
    return {"pose": {"position": r(pos), "yaw_deg": yaw_deg}, "width": width,
            "finger_half_extents": list(half), "tool": tool}


def common(task_id, instruction, params, objects) -> dict:
    return {
        "gravity": [0.0, 0.0, -9.81],
        "table_height": 0.0,
        "table_friction": 1.0,
        "task": {"task_id": task_id, "instruction": instruction, "criterion_params": params, "objects": objects},
    }


def non_toppling_push() -> dict:
    d = common("non_toppling_push",
               "Slide the tall carton forward so it lines up with the two cartons beside it, without knocking it over.",
               {"target_x": 0.06, "tilt_threshold_deg": 15.0, "align_tol": 0.01}, {"target": "carton"})
    carton = box((-0.02, -0.02, 0.0), (0.02, 0.02, 0.12))
    d["rigid_objects"] = [
        {"name": "carton", "mesh": carton, "pose": {"position": [-0.04, 0.0, 0.0]}, "mass": 0.2, "friction": 0.5,
         "color": [0.85, 0.25, 0.2]},
        {"name": "left_carton", "mesh": carton, "pose": {"position": [0.06, 0.12, 0.0]}, "mass": 0.2,
         "friction": 0.5, "color": [0.3, 0.45, 0.8]},
        {"name": "right_carton", "mesh": carton, "pose": {"position": [0.06, -0.12, 0.0]}, "mass": 0.2,
         "friction": 0.5, "color": [0.3, 0.45, 0.8]},
    ]
    d["deformable_objects"] = []
    d["gripper"] = gripper([-0.15, 0.0, 0.2])
    d["workspace_bounds"] = {"min": [-0.3, -0.3, 0.01], "max": [0.3, 0.3, 0.4]}
    d["perturbation_groups"] = [["carton"]]
    d["camera"] = {"position": [0.05, -0.6, 0.35], "look_at": [0.0, 0.0, 0.05], "fov_deg": 45}
    return d


def bowl_stacking() -> dict:
    d = common("bowl_stacking", "Put the small bowl into the large bowl so that it rests inside it.",
               {"rim_radius": 0.02, "floor_offset": 0.006, "rest_speed": 1e-3},
               {"upper": "small_bowl", "lower": "large_bowl"})
    big = bowl_hulls(0.06, 0.054, 0.04, 0.006)
    small = bowl_hulls(0.035, 0.03, 0.03, 0.005)
    d["rigid_objects"] = [
        {"name": "large_bowl", "mesh": hulls_mesh(big), "hulls": [r(h) for h in big],
         "pose": {"position": [0.08, 0.0, 0.0]}, "mass": 0.25, "friction": 0.5, "color": [0.2, 0.55, 0.35]},
        {"name": "small_bowl", "mesh": hulls_mesh(small), "hulls": [r(h) for h in small],
         "pose": {"position": [-0.08, 0.0, 0.0]}, "mass": 0.1, "friction": 0.5, "color": [0.9, 0.75, 0.2]},
    ]
    d["deformable_objects"] = []
    d["gripper"] = gripper([-0.08, 0.0, 0.15])
    d["workspace_bounds"] = {"min": [-0.3, -0.3, 0.01], "max": [0.3, 0.3, 0.4]}
    d["perturbation_groups"] = [["small_bowl"], ["large_bowl"]]
    d["camera"] = {"position": [0.0, -0.45, 0.4], "look_at": [0.0, 0.0, 0.02], "fov_deg": 45}
    return d


def pivoting() -> dict:
    d = common("pivoting", "Stand the snack box upright against the side of the brown box.",
               {"vertical_tol_deg": 10.0}, {"target": "snack_box"})
    tilt = math.radians(45.0)
    half_t, length = 0.01, 0.15
    # lowest corner on the table, broad face resting on the brown box's top edge at (0.04, 0.10)
    z0 = half_t * math.sin(tilt)
    s_edge = 0.10 / math.cos(tilt)
    x0 = 0.04 - half_t * math.cos(tilt) - s_edge * math.sin(tilt)
    d["rigid_objects"] = [
        {"name": "brown_box", "mesh": box((-0.04, -0.075, 0.0), (0.04, 0.075, 0.10)),
         "pose": {"position": [0.08, 0.0, 0.0]}, "mass": 1.0, "friction": 0.8, "color": [0.55, 0.38, 0.22]},
        {"name": "snack_box", "mesh": box((-half_t, -0.025, 0.0), (half_t, 0.025, length)),
         "pose": {"position": r([x0, 0.0, z0]), "rpy_deg": [0.0, 45.0, 0.0]}, "mass": 0.05, "friction": 0.6,
         "color": [0.85, 0.2, 0.3]},
    ]
    d["deformable_objects"] = []
    d["gripper"] = gripper([-0.15, 0.0, 0.15])
    d["workspace_bounds"] = {"min": [-0.3, -0.3, 0.01], "max": [0.3, 0.3, 0.4]}
    d["perturbation_groups"] = [["snack_box", "brown_box"]]
    d["camera"] = {"position": [-0.1, -0.5, 0.3], "look_at": [0.0, 0.0, 0.05], "fov_deg": 45}
    return d


def shape_rope() -> dict:
    d = common("shape_rope", "Bend the rope into a U shape.", {"ratio_min": 0.5, "ratio_max": 2.0},
               {"target": "rope"})
    n, spacing, radius = 31, 0.01, 0.004
    xs = (np.arange(n) - (n - 1) / 2) * spacing
    pts = np.stack([xs, np.zeros(n), np.full(n, radius)], axis=1)
    d["rigid_objects"] = []
    d["deformable_objects"] = [
        {"name": "rope", "engine": "PD", "particles": r(pts), "particle_spacing": spacing, "radius": radius,
         "youngs_modulus": 2e5, "poisson_ratio": 0.3, "density": 1100.0, "color": [0.2, 0.35, 0.8]},
    ]
    d["gripper"] = gripper([0.0, -0.1, 0.12], half=(0.006, 0.005, 0.01))
    d["workspace_bounds"] = {"min": [-0.3, -0.3, 0.01], "max": [0.3, 0.3, 0.4]}
    d["perturbation_groups"] = [["rope"]]
    d["camera"] = {"position": [0.0, -0.45, 0.45], "look_at": [0.0, 0.03, 0.0], "fov_deg": 45}
    return d


def shape_dough() -> dict:
    d = common("shape_dough", "Squeeze the dough so that its footprint becomes roughly square.",
               {"ratio_max": 1.5}, {"target": "dough"})
    s = 0.0075
    nx, ny, nz = 11, 5, 4
    g = np.stack(np.meshgrid((np.arange(nx) - (nx - 1) / 2) * s, (np.arange(ny) - (ny - 1) / 2) * s,
                             (np.arange(nz) + 0.5) * s, indexing="ij"), axis=-1).reshape(-1, 3)
    d["rigid_objects"] = []
    d["deformable_objects"] = [
        {"name": "dough", "engine": "MPM", "material_class": "plasticine", "particles": r(g), "particle_spacing": s,
         "youngs_modulus": 5e4, "poisson_ratio": 0.3, "density": 1200.0, "yield_stress": 2.5e3,
         "color": [0.95, 0.8, 0.55]},
    ]
    d["gripper"] = gripper([0.0, 0.0, 0.12], yaw_deg=90.0, half=(0.035, 0.004, 0.02), tool="flat_plate")
    d["workspace_bounds"] = {"min": [-0.15, -0.15, 0.02], "max": [0.15, 0.15, 0.2]}
    d["perturbation_groups"] = [["dough"]]
    d["camera"] = {"position": [0.12, -0.3, 0.3], "look_at": [0.0, 0.0, 0.0], "fov_deg": 40}
    return d


SCENES = {
    "non_toppling_push": non_toppling_push,
    "bowl_stacking": bowl_stacking,
    "pivoting": pivoting,
    "shape_rope": shape_rope,
    "shape_dough": shape_dough,
}


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, build in SCENES.items():
        path = args.out / f"{name}.json"
        path.write_text(json.dumps(build(), indent=1) + "\n", encoding="utf-8")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
