"""Convex hull preprocessing: polygonal faces, unique edge directions, mass properties."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ..errors import DegenerateMesh

_S = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])


def _qhull(points: np.ndarray) -> ConvexHull:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 4:
        raise DegenerateMesh("a convex hull needs at least 4 points")
    try:
        return ConvexHull(pts)
    except (QhullError, ValueError) as exc:
        raise DegenerateMesh(f"convex hull failed: {exc}") from exc


def hull_triangles(points) -> tuple[np.ndarray, np.ndarray]:
    """Hull vertices and outward-oriented triangles indexing into them."""
    hull = _qhull(points)
    used = np.unique(hull.simplices)
    remap = -np.ones(len(hull.points), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = hull.points[used]
    tris = remap[hull.simplices]
    # qhull does not guarantee winding; orient each triangle along its facet normal
    for i, (tri, eq) in enumerate(zip(tris, hull.equations)):
        a, b, c = verts[tri]
        if np.dot(np.cross(b - a, c - a), eq[:3]) < 0:
            tris[i] = tri[[0, 2, 1]]
    return verts, tris


def _volume_moments(verts: np.ndarray, tris: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Volume, first moment and second-moment (covariance) tensor about the origin.

    Sums signed tetrahedra (origin, a, b, c); the covariance of a tetrahedron with
    one vertex at the origin is det(A)/120 * A S A^T with A = [a b c].
    """
    vol = 0.0
    first = np.zeros(3)
    cov = np.zeros((3, 3))
    for tri in tris:
        a = verts[tri].T  # columns a, b, c
        det = float(np.linalg.det(a))
        vol += det / 6.0
        first += det / 24.0 * a.sum(axis=1)
        cov += det / 120.0 * (a @ _S @ a.T)
    return vol, first, cov


def hulls_mass_properties(hulls) -> tuple[float, np.ndarray]:
    """Total volume and volume centroid of a list of convex point sets."""
    total = 0.0
    first = np.zeros(3)
    for pts in hulls:
        v, t = hull_triangles(pts)
        vol, f, _ = _volume_moments(v, t)
        total += vol
        first += f
    if total <= 0:
        raise DegenerateMesh("zero-volume hull")
    return total, first / total


def hulls_inertia(hulls, mass: float, com) -> np.ndarray:
    """Inertia tensor about ``com`` of uniform-density hulls with total ``mass``."""
    total = 0.0
    cov = np.zeros((3, 3))
    for pts in hulls:
        v, t = hull_triangles(pts)
        vol, _, c = _volume_moments(v, t)
        total += vol
        cov += c
    if total <= 0:
        raise DegenerateMesh("zero-volume hull")
    rho = mass / total
    com = np.asarray(com, dtype=float)
    # second moment about the origin -> about com (exact shift identity for moments)
    _, first = hulls_mass_properties(hulls)
    first = first * total
    cov_com = cov - np.outer(first, com) - np.outer(com, first) + total * np.outer(com, com)
    cov_com *= rho
    inertia = np.trace(cov_com) * np.eye(3) - cov_com
    return 0.5 * (inertia + inertia.T)


@dataclass
class HullShape:
    """Convex polytope in a body frame.

    ``faces`` lists vertex-index loops ordered counter-clockwise seen from outside;
    ``normals``/``offsets`` give the face planes n . x = d.
    """

    vertices: np.ndarray
    faces: list[np.ndarray]
    normals: np.ndarray
    offsets: np.ndarray
    edges: np.ndarray  # (E, 2) vertex index pairs
    edge_dirs: np.ndarray  # unique unit directions up to sign

    @classmethod
    def from_points(cls, points, tol: float = 1e-7) -> "HullShape":
        hull = _qhull(points)
        used = np.unique(hull.simplices)
        remap = -np.ones(len(hull.points), dtype=np.int64)
        remap[used] = np.arange(len(used))
        verts = hull.points[used].copy()
        scale = max(float(np.ptp(verts, axis=0).max()), 1e-9)

        # merge coplanar qhull facets into polygons
        groups: list[tuple[np.ndarray, float, set]] = []
        for simplex, eq in zip(hull.simplices, hull.equations):
            n, d = eq[:3], -eq[3]
            for gn, gd, members in groups:
                if np.dot(gn, n) > 1.0 - tol and abs(gd - d) < tol * scale:
                    members.update(int(remap[i]) for i in simplex)
                    break
            else:
                groups.append((n.copy(), d, {int(remap[i]) for i in simplex}))

        faces, normals, offsets = [], [], []
        for n, _, members in groups:
            idx = np.array(sorted(members))
            pts = verts[idx]
            c = pts.mean(axis=0)
            u = pts[0] - c
            u -= np.dot(u, n) * n
            if np.linalg.norm(u) < 1e-15:
                u = np.cross(n, [1.0, 0.0, 0.0] if abs(n[0]) < 0.9 else [0.0, 1.0, 0.0])
            u /= np.linalg.norm(u)
            w = np.cross(n, u)
            ang = np.arctan2((pts - c) @ w, (pts - c) @ u)
            loop = idx[np.argsort(ang)]
            faces.append(loop)
            normals.append(n / np.linalg.norm(n))
            offsets.append(float(np.dot(normals[-1], verts[loop].mean(axis=0))))

        edge_set = set()
        for loop in faces:
            for a, b in zip(loop, np.roll(loop, -1)):
                edge_set.add((min(a, b), max(a, b)))
        edges = np.array(sorted(edge_set), dtype=np.int64)
        dirs: list[np.ndarray] = []
        for a, b in edges:
            e = verts[b] - verts[a]
            e /= np.linalg.norm(e)
            if not any(abs(np.dot(e, d)) > 1.0 - 1e-6 for d in dirs):
                dirs.append(e)
        return cls(verts, faces, np.array(normals), np.array(offsets), edges, np.array(dirs))

    def translated(self, shift) -> "HullShape":
        shift = np.asarray(shift, dtype=float)
        return HullShape(
            self.vertices + shift,
            [f.copy() for f in self.faces],
            self.normals.copy(),
            self.offsets + self.normals @ shift,
            self.edges.copy(),
            self.edge_dirs.copy(),
        )

    @property
    def volume(self) -> float:
        v, t = hull_triangles(self.vertices)
        return _volume_moments(v, t)[0]


@dataclass
class PackedHulls:
    """Flat arrays describing every hull of a world, consumed by the jitted kernels."""

    body: np.ndarray  # (H,) body index per hull
    v: np.ndarray  # (NV, 3) vertices in the body COM frame
    v_start: np.ndarray
    v_count: np.ndarray
    fn: np.ndarray  # (NF, 3) face normals (body frame)
    fd: np.ndarray  # (NF,) plane offsets
    f_start: np.ndarray  # per hull into faces
    f_count: np.ndarray
    fv: np.ndarray  # flattened face loops (global vertex indices)
    fv_start: np.ndarray  # per face into fv
    fv_count: np.ndarray
    ed: np.ndarray  # (ND, 3) unique edge directions
    ed_start: np.ndarray
    ed_count: np.ndarray
    eg: np.ndarray  # (NE, 2) edges as global vertex indices
    eg_start: np.ndarray
    eg_count: np.ndarray


def pack_hulls(shapes: list[HullShape], bodies: list[int]) -> PackedHulls:
    v, fn, fd, fv, ed, eg = [], [], [], [], [], []
    v_start, v_count, f_start, f_count = [], [], [], []
    fv_start, fv_count, ed_start, ed_count, eg_start, eg_count = [], [], [], [], [], []
    nv = nf = nfv = ned = neg = 0
    for s in shapes:
        v_start.append(nv)
        v_count.append(len(s.vertices))
        f_start.append(nf)
        f_count.append(len(s.faces))
        for loop, n, d in zip(s.faces, s.normals, s.offsets):
            fv_start.append(nfv)
            fv_count.append(len(loop))
            fv.extend(int(i) + nv for i in loop)
            nfv += len(loop)
            fn.append(n)
            fd.append(d)
        ed_start.append(ned)
        ed_count.append(len(s.edge_dirs))
        ed.extend(s.edge_dirs)
        eg_start.append(neg)
        eg_count.append(len(s.edges))
        eg.extend((int(a) + nv, int(b) + nv) for a, b in s.edges)
        v.extend(s.vertices)
        nv += len(s.vertices)
        nf += len(s.faces)
        ned += len(s.edge_dirs)
        neg += len(s.edges)

    def ia(x):
        return np.asarray(x, dtype=np.int64)

    def fa(x, cols=3):
        return np.asarray(x, dtype=float).reshape(-1, cols) if cols else np.asarray(x, dtype=float)

    return PackedHulls(
        body=ia(bodies), v=fa(v), v_start=ia(v_start), v_count=ia(v_count),
        fn=fa(fn), fd=fa(fd, 0), f_start=ia(f_start), f_count=ia(f_count),
        fv=ia(fv), fv_start=ia(fv_start), fv_count=ia(fv_count),
        ed=fa(ed), ed_start=ia(ed_start), ed_count=ia(ed_count),
        eg=ia(eg).reshape(-1, 2), eg_start=ia(eg_start), eg_count=ia(eg_count),
    )
