"""Material point method (MLS-MPM with APIC transfers) for elastoplastic soft bodies.

Transfers use quadratic B-spline weights. Elasticity is fixed corotated,
P = 2 mu (F - R) + lambda (J - 1) J F^{-T}. Plasticity is a return mapping on the
singular values of F:

* jelly, foam: none (purely elastic);
* metal, plasticine: von Mises on the Hencky (log) strain with yield stress tau_y;
* sand: Drucker-Prager with friction angle phi (projection of Klar et al. 2016).

The table plane is a sticky boundary. Finger boxes act on grid nodes: inside a box,
a node moving into the box takes the box velocity (no tangential slip), while a
node moving away is left free so the tool can separate from the material.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import CFLViolation, NumericalDivergence, ValidationError
from ..scene import Bounds, DeformableObjectSpec
from ..transforms import Pose
from .gripper import finger_boxes

PLASTIC_NONE = 0
PLASTIC_VON_MISES = 1
PLASTIC_DRUCKER_PRAGER = 2
CFL_FACTOR = 0.4

_PLASTICITY = {
    "jelly": PLASTIC_NONE,
    "foam": PLASTIC_NONE,
    "metal": PLASTIC_VON_MISES,
    "plasticine": PLASTIC_VON_MISES,
    "sand": PLASTIC_DRUCKER_PRAGER,
}


@dataclass
class MPMState:
    positions: np.ndarray
    velocities: np.ndarray
    deformation_gradient: np.ndarray
    affine_velocity: np.ndarray
    plastic_multiplier: np.ndarray

    @classmethod
    def at_rest(cls, positions) -> "MPMState":
        x = np.array(positions, dtype=float).reshape(-1, 3)
        n = len(x)
        return cls(x, np.zeros((n, 3)), np.tile(np.eye(3), (n, 1, 1)), np.zeros((n, 3, 3)), np.zeros(n))

    def copy(self) -> "MPMState":
        return MPMState(self.positions.copy(), self.velocities.copy(), self.deformation_gradient.copy(),
                        self.affine_velocity.copy(), self.plastic_multiplier.copy())


@dataclass
class MPMGrid:
    origin: np.ndarray
    cell_size: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.mass = np.zeros(self.dims)
        self.momentum = np.zeros(self.dims + (3,))

    @classmethod
    def for_workspace(cls, bounds: Bounds, cell_size: float, table_height: float = 0.0, margin_cells: int = 2):
        lo = np.asarray(bounds.lo, dtype=float)
        hi = np.asarray(bounds.hi, dtype=float)
        lo = np.minimum(lo, [lo[0], lo[1], table_height])
        origin = lo - margin_cells * cell_size
        # align a node plane with the table so the sticky boundary is exact
        k = math.ceil((table_height - origin[2]) / cell_size)
        origin[2] = table_height - k * cell_size
        dims = tuple(int(math.ceil((hi[i] - origin[i]) / cell_size)) + margin_cells + 1 for i in range(3))
        return cls(origin, cell_size, dims)

    def shifted(self, offset) -> "MPMGrid":
        return MPMGrid(self.origin + np.asarray(offset, dtype=float), self.cell_size, self.dims)


@dataclass(frozen=True)
class MPMMaterial:
    mu: float
    lam: float
    density: float
    volume: float
    plasticity: int
    yield_stress: float = 0.0
    friction_angle_deg: float = 0.0

    @classmethod
    def from_spec(cls, spec: DeformableObjectSpec) -> "MPMMaterial":
        e, nu = spec.youngs_modulus, spec.poisson_ratio
        mu = e / (2.0 * (1.0 + nu))
        lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return cls(mu, lam, spec.density, spec.particle_spacing ** 3,
                   _PLASTICITY.get(spec.material_class or "jelly", PLASTIC_NONE),
                   spec.yield_stress or 0.0, spec.friction_angle or 0.0)

    @property
    def sound_speed(self) -> float:
        return math.sqrt((self.lam + 2.0 * self.mu) / self.density)

    @property
    def particle_mass(self) -> float:
        return self.density * self.volume

    @property
    def dp_alpha(self) -> float:
        s = math.sin(math.radians(self.friction_angle_deg))
        return math.sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s)


def cfl_limit(material: MPMMaterial, cell_size: float) -> float:
    return CFL_FACTOR * cell_size / material.sound_speed


# ---------------------------------------------------------------------------
# 3x3 singular value decomposition (cyclic Jacobi on F^T F), allocation free


@njit(cache=True)
def _jacobi_eig(a, v):
    for _ in range(12):
        off = a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]
        scale = a[0, 0] * a[0, 0] + a[1, 1] * a[1, 1] + a[2, 2] * a[2, 2]
        if off <= 1e-28 * scale or off < 1e-300:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(3):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(3):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(3):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq


@njit(cache=True)
def _swap_cols(m, i, j):
    for k in range(3):
        t = m[k, i]
        m[k, i] = m[k, j]
        m[k, j] = t


@njit(cache=True)
def svd3_into(f, u, sig, v, a):
    """F = U diag(sig) V^T with U, V rotations; sig[2] carries the sign of det F.

    ``a`` is 3x3 scratch. Singular values are sorted in decreasing magnitude.
    """
    for i in range(3):
        for j in range(3):
            a[i, j] = f[0, i] * f[0, j] + f[1, i] * f[1, j] + f[2, i] * f[2, j]
            v[i, j] = 1.0 if i == j else 0.0
    _jacobi_eig(a, v)
    e0 = a[0, 0]
    e1 = a[1, 1]
    e2 = a[2, 2]
    if e0 < e1:
        e0, e1 = e1, e0
        _swap_cols(v, 0, 1)
    if e0 < e2:
        e0, e2 = e2, e0
        _swap_cols(v, 0, 2)
    if e1 < e2:
        e1, e2 = e2, e1
        _swap_cols(v, 1, 2)
    detv = (v[0, 0] * (v[1, 1] * v[2, 2] - v[1, 2] * v[2, 1]) - v[0, 1] * (v[1, 0] * v[2, 2] - v[1, 2] * v[2, 0])
            + v[0, 2] * (v[1, 0] * v[2, 1] - v[1, 1] * v[2, 0]))
    if detv < 0:
        for k in range(3):
            v[k, 2] = -v[k, 2]
    # b = F V, stored in a
    for i in range(3):
        for j in range(3):
            a[i, j] = f[i, 0] * v[0, j] + f[i, 1] * v[1, j] + f[i, 2] * v[2, j]
    n0 = math.sqrt(a[0, 0] ** 2 + a[1, 0] ** 2 + a[2, 0] ** 2)
    if n0 > 1e-12:
        for k in range(3):
            u[k, 0] = a[k, 0] / n0
    else:
        u[0, 0] = 1.0
        u[1, 0] = 0.0
        u[2, 0] = 0.0
    d = u[0, 0] * a[0, 1] + u[1, 0] * a[1, 1] + u[2, 0] * a[2, 1]
    x0 = a[0, 1] - d * u[0, 0]
    x1 = a[1, 1] - d * u[1, 0]
    x2 = a[2, 1] - d * u[2, 0]
    n1 = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
    if n1 < 1e-12:
        if abs(u[1, 0]) < 0.9:
            t0, t1, t2 = 0.0, 1.0, 0.0
        else:
            t0, t1, t2 = 0.0, 0.0, 1.0
        d = u[0, 0] * t0 + u[1, 0] * t1 + u[2, 0] * t2
        x0 = t0 - d * u[0, 0]
        x1 = t1 - d * u[1, 0]
        x2 = t2 - d * u[2, 0]
        n1 = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
    u[0, 1] = x0 / n1
    u[1, 1] = x1 / n1
    u[2, 1] = x2 / n1
    u[0, 2] = u[1, 0] * u[2, 1] - u[2, 0] * u[1, 1]
    u[1, 2] = u[2, 0] * u[0, 1] - u[0, 0] * u[2, 1]
    u[2, 2] = u[0, 0] * u[1, 1] - u[1, 0] * u[0, 1]
    sig[0] = n0
    sig[1] = u[0, 1] * a[0, 1] + u[1, 1] * a[1, 1] + u[2, 1] * a[2, 1]
    sig[2] = u[0, 2] * a[0, 2] + u[1, 2] * a[1, 2] + u[2, 2] * a[2, 2]


@njit(cache=True)
def svd3(f):
    u = np.zeros((3, 3))
    v = np.zeros((3, 3))
    a = np.zeros((3, 3))
    sig = np.zeros(3)
    svd3_into(np.ascontiguousarray(f), u, sig, v, a)
    return u, sig, v


# ---------------------------------------------------------------------------
# transfer kernels


@njit(cache=True)
def _project_plastic(f, kind, mu, lam, tau_y, alpha, u, sig, v, a):
    """Return-map ``f`` in place; returns the plastic increment."""
    if kind == PLASTIC_NONE:
        return 0.0
    svd3_into(f, u, sig, v, a)
    if sig[2] <= 0.0 or sig[1] <= 0.0 or sig[0] <= 0.0:
        return 0.0
    e0 = math.log(sig[0])
    e1 = math.log(sig[1])
    e2 = math.log(sig[2])
    tr = e0 + e1 + e2
    d0 = e0 - tr / 3.0
    d1 = e1 - tr / 3.0
    d2 = e2 - tr / 3.0
    dn = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    if kind == PLASTIC_VON_MISES:
        dgamma = dn - tau_y / (2.0 * mu)
        if dgamma <= 0.0 or dn < 1e-15:
            return 0.0
        e0 -= dgamma * d0 / dn
        e1 -= dgamma * d1 / dn
        e2 -= dgamma * d2 / dn
    else:
        if tr >= 0.0:
            dgamma = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
            e0 = 0.0
            e1 = 0.0
            e2 = 0.0
        else:
            dgamma = dn + (3.0 * lam + 2.0 * mu) / (2.0 * mu) * tr * alpha
            if dgamma <= 0.0 or dn < 1e-15:
                return 0.0
            e0 -= dgamma * d0 / dn
            e1 -= dgamma * d1 / dn
            e2 -= dgamma * d2 / dn
    s0 = math.exp(e0)
    s1 = math.exp(e1)
    s2 = math.exp(e2)
    for i in range(3):
        for j in range(3):
            f[i, j] = u[i, 0] * s0 * v[j, 0] + u[i, 1] * s1 * v[j, 1] + u[i, 2] * s2 * v[j, 2]
    return dgamma


@njit(cache=True)
def _kirchhoff(f, mu, lam, out, u, sig, v, a):
    """Kirchhoff stress P F^T of fixed corotated elasticity, written to ``out``."""
    svd3_into(f, u, sig, v, a)
    j = sig[0] * sig[1] * sig[2]
    # a <- F - R
    for i in range(3):
        for k in range(3):
            a[i, k] = f[i, k] - (u[i, 0] * v[k, 0] + u[i, 1] * v[k, 1] + u[i, 2] * v[k, 2])
    vol = lam * (j - 1.0) * j
    for i in range(3):
        for k in range(3):
            out[i, k] = 2.0 * mu * (a[i, 0] * f[k, 0] + a[i, 1] * f[k, 1] + a[i, 2] * f[k, 2])
        out[i, i] += vol


@njit(cache=True)
def _weights(x, origin, inv_dx, base, fx, w):
    for d in range(3):
        gx = (x[d] - origin[d]) * inv_dx
        base[d] = int(math.floor(gx - 0.5))
        fx[d] = gx - base[d]
        w[0, d] = 0.5 * (1.5 - fx[d]) ** 2
        w[1, d] = 0.75 - (fx[d] - 1.0) ** 2
        w[2, d] = 0.5 * (fx[d] - 0.5) ** 2


@njit(cache=True)
def _push_out_of_boxes(x, v, p, box_c, box_r, box_h, box_v, box_w, pad):
    """Project particle ``p`` out of every finger box it entered (thin plates leak through the grid)."""
    for bi in range(box_c.shape[0]):
        r0 = x[p, 0] - box_c[bi, 0]
        r1 = x[p, 1] - box_c[bi, 1]
        r2 = x[p, 2] - box_c[bi, 2]
        best = 1e30
        ax = -1
        sgn = 1.0
        for e in range(3):
            loc = box_r[bi, 0, e] * r0 + box_r[bi, 1, e] * r1 + box_r[bi, 2, e] * r2
            pen = box_h[bi, e] + pad - abs(loc)
            if pen <= 0.0:
                ax = -1
                break
            if pen < best:
                best = pen
                ax = e
                sgn = 1.0 if loc >= 0 else -1.0
        if ax < 0:
            continue
        n0 = box_r[bi, 0, ax] * sgn
        n1 = box_r[bi, 1, ax] * sgn
        n2 = box_r[bi, 2, ax] * sgn
        x[p, 0] += best * n0
        x[p, 1] += best * n1
        x[p, 2] += best * n2
        vb0 = box_v[bi, 0] + box_w[bi, 1] * r2 - box_w[bi, 2] * r1
        vb1 = box_v[bi, 1] + box_w[bi, 2] * r0 - box_w[bi, 0] * r2
        vb2 = box_v[bi, 2] + box_w[bi, 0] * r1 - box_w[bi, 1] * r0
        rel = (v[p, 0] - vb0) * n0 + (v[p, 1] - vb1) * n1 + (v[p, 2] - vb2) * n2
        if rel < 0.0:
            v[p, 0] -= rel * n0
            v[p, 1] -= rel * n1
            v[p, 2] -= rel * n2


@njit(cache=True)
def substep(x, v, fgrad, cmat, plastic, mass_p, vol_p, mu, lam, kind, tau_y, alpha,
            grid_m, grid_mv, origin, dx, dt, gravity, use_table, table_z,
            box_c, box_r, box_h, box_v, box_w, apply_boundaries):
    """One P2G / grid update / G2P cycle.

    Returns the minimum det(F) after the update, or -1 if a particle left the grid.
    """
    n = x.shape[0]
    inv_dx = 1.0 / dx
    nx, ny, nz = grid_m.shape
    lo0 = nx
    lo1 = ny
    lo2 = nz
    hi0 = 0
    hi1 = 0
    hi2 = 0
    for p in range(n):
        if not (np.isfinite(x[p, 0]) and np.isfinite(x[p, 1]) and np.isfinite(x[p, 2])):
            return -1.0
        b0 = int(math.floor((x[p, 0] - origin[0]) * inv_dx - 0.5))
        b1 = int(math.floor((x[p, 1] - origin[1]) * inv_dx - 0.5))
        b2 = int(math.floor((x[p, 2] - origin[2]) * inv_dx - 0.5))
        lo0 = min(lo0, b0)
        lo1 = min(lo1, b1)
        lo2 = min(lo2, b2)
        hi0 = max(hi0, b0 + 3)
        hi1 = max(hi1, b1 + 3)
        hi2 = max(hi2, b2 + 3)
    if lo0 < 0 or lo1 < 0 or lo2 < 0 or hi0 > nx or hi1 > ny or hi2 > nz:
        return -1.0
    for i in range(lo0, hi0):
        for j in range(lo1, hi1):
            for k in range(lo2, hi2):
                grid_m[i, j, k] = 0.0
                grid_mv[i, j, k, 0] = 0.0
                grid_mv[i, j, k, 1] = 0.0
                grid_mv[i, j, k, 2] = 0.0

    w = np.zeros((3, 3))
    base = np.zeros(3, dtype=np.int64)
    fx = np.zeros(3)
    aff = np.zeros((3, 3))
    tau = np.zeros((3, 3))
    su = np.zeros((3, 3))
    sv = np.zeros((3, 3))
    sa = np.zeros((3, 3))
    ss = np.zeros(3)
    fnew = np.zeros((3, 3))
    scale = -dt * vol_p * 4.0 * inv_dx * inv_dx
    for p in range(n):
        _kirchhoff(fgrad[p], mu, lam, tau, su, ss, sv, sa)
        for i in range(3):
            for k in range(3):
                aff[i, k] = scale * tau[i, k] + mass_p * cmat[p, i, k]
        _weights(x[p], origin, inv_dx, base, fx, w)
        mv0 = mass_p * v[p, 0]
        mv1 = mass_p * v[p, 1]
        mv2 = mass_p * v[p, 2]
        for a in range(3):
            d0 = (a - fx[0]) * dx
            for b in range(3):
                d1 = (b - fx[1]) * dx
                wab = w[a, 0] * w[b, 1]
                for c in range(3):
                    d2 = (c - fx[2]) * dx
                    wt = wab * w[c, 2]
                    i = base[0] + a
                    j = base[1] + b
                    k = base[2] + c
                    grid_m[i, j, k] += wt * mass_p
                    grid_mv[i, j, k, 0] += wt * (mv0 + aff[0, 0] * d0 + aff[0, 1] * d1 + aff[0, 2] * d2)
                    grid_mv[i, j, k, 1] += wt * (mv1 + aff[1, 0] * d0 + aff[1, 1] * d1 + aff[1, 2] * d2)
                    grid_mv[i, j, k, 2] += wt * (mv2 + aff[2, 0] * d0 + aff[2, 1] * d1 + aff[2, 2] * d2)

    nbox = box_c.shape[0]
    pad = 0.5 * dx
    for i in range(lo0, hi0):
        for j in range(lo1, hi1):
            for k in range(lo2, hi2):
                m = grid_m[i, j, k]
                if m <= 0.0:
                    continue
                g0 = grid_mv[i, j, k, 0] / m + dt * gravity[0]
                g1 = grid_mv[i, j, k, 1] / m + dt * gravity[1]
                g2 = grid_mv[i, j, k, 2] / m + dt * gravity[2]
                if apply_boundaries:
                    px = origin[0] + i * dx
                    py = origin[1] + j * dx
                    pz = origin[2] + k * dx
                    if use_table and pz <= table_z + 1e-12:
                        g0 = 0.0
                        g1 = 0.0
                        g2 = 0.0
                    if i < 2 or j < 2 or k < 2 or i >= nx - 2 or j >= ny - 2 or k >= nz - 2:
                        g0 = 0.0
                        g1 = 0.0
                        g2 = 0.0
                    for bi in range(nbox):
                        r0 = px - box_c[bi, 0]
                        r1 = py - box_c[bi, 1]
                        r2 = pz - box_c[bi, 2]
                        inside = True
                        best = 1e30
                        ax = 0
                        sgn = 1.0
                        for e in range(3):
                            loc = box_r[bi, 0, e] * r0 + box_r[bi, 1, e] * r1 + box_r[bi, 2, e] * r2
                            pen = box_h[bi, e] + pad - abs(loc)
                            if pen < 0.0:
                                inside = False
                                break
                            if pen < best:
                                best = pen
                                ax = e
                                sgn = 1.0 if loc >= 0 else -1.0
                        if inside:
                            vb0 = box_v[bi, 0] + box_w[bi, 1] * r2 - box_w[bi, 2] * r1
                            vb1 = box_v[bi, 1] + box_w[bi, 2] * r0 - box_w[bi, 0] * r2
                            vb2 = box_v[bi, 2] + box_w[bi, 0] * r1 - box_w[bi, 1] * r0
                            n0 = box_r[bi, 0, ax] * sgn
                            n1 = box_r[bi, 1, ax] * sgn
                            n2 = box_r[bi, 2, ax] * sgn
                            if (g0 - vb0) * n0 + (g1 - vb1) * n1 + (g2 - vb2) * n2 < 0.0:
                                g0 = vb0
                                g1 = vb1
                                g2 = vb2
                grid_mv[i, j, k, 0] = g0
                grid_mv[i, j, k, 1] = g1
                grid_mv[i, j, k, 2] = g2

    min_det = 1e30
    cscale = 4.0 * inv_dx * inv_dx
    for p in range(n):
        _weights(x[p], origin, inv_dx, base, fx, w)
        nv0 = 0.0
        nv1 = 0.0
        nv2 = 0.0
        for e in range(3):
            for g in range(3):
                aff[e, g] = 0.0
        for a in range(3):
            d0 = (a - fx[0]) * dx
            for b in range(3):
                d1 = (b - fx[1]) * dx
                wab = w[a, 0] * w[b, 1]
                for c in range(3):
                    d2 = (c - fx[2]) * dx
                    wt = wab * w[c, 2]
                    i = base[0] + a
                    j = base[1] + b
                    k = base[2] + c
                    gv0 = grid_mv[i, j, k, 0]
                    gv1 = grid_mv[i, j, k, 1]
                    gv2 = grid_mv[i, j, k, 2]
                    nv0 += wt * gv0
                    nv1 += wt * gv1
                    nv2 += wt * gv2
                    ws = cscale * wt
                    aff[0, 0] += ws * gv0 * d0
                    aff[0, 1] += ws * gv0 * d1
                    aff[0, 2] += ws * gv0 * d2
                    aff[1, 0] += ws * gv1 * d0
                    aff[1, 1] += ws * gv1 * d1
                    aff[1, 2] += ws * gv1 * d2
                    aff[2, 0] += ws * gv2 * d0
                    aff[2, 1] += ws * gv2 * d1
                    aff[2, 2] += ws * gv2 * d2
        v[p, 0] = nv0
        v[p, 1] = nv1
        v[p, 2] = nv2
        x[p, 0] += dt * nv0
        x[p, 1] += dt * nv1
        x[p, 2] += dt * nv2
        if apply_boundaries and nbox > 0:
            _push_out_of_boxes(x, v, p, box_c, box_r, box_h, box_v, box_w, 0.25 * dx)
        for e in range(3):
            for g in range(3):
                cmat[p, e, g] = aff[e, g]
        for e in range(3):
            for g in range(3):
                acc = fgrad[p, e, g]
                for h in range(3):
                    acc += dt * aff[e, h] * fgrad[p, h, g]
                fnew[e, g] = acc
        plastic[p] += _project_plastic(fnew, kind, mu, lam, tau_y, alpha, su, ss, sv, sa)
        for e in range(3):
            for g in range(3):
                fgrad[p, e, g] = fnew[e, g]
        det = (fnew[0, 0] * (fnew[1, 1] * fnew[2, 2] - fnew[1, 2] * fnew[2, 1])
               - fnew[0, 1] * (fnew[1, 0] * fnew[2, 2] - fnew[1, 2] * fnew[2, 0])
               + fnew[0, 2] * (fnew[1, 0] * fnew[2, 1] - fnew[1, 1] * fnew[2, 0]))
        if not det > 0.0:
            min_det = min(min_det, det) if np.isfinite(det) else -2.0
        elif det < min_det:
            min_det = det
    return min_det


class MPMBody:
    """Runtime state of one MPM object on its own background grid."""

    def __init__(self, spec: DeformableObjectSpec, bounds: Bounds, gravity=(0.0, 0.0, -9.81),
                 table_height: float = 0.0, use_table: bool = True, cell_size: float | None = None,
                 grid: MPMGrid | None = None):
        self.spec = spec
        self.name = spec.name
        self.material = MPMMaterial.from_spec(spec)
        dx = cell_size if cell_size is not None else 2.0 * spec.particle_spacing
        if dx > 2.0 * spec.particle_spacing * (1 + 1e-9):
            raise ValidationError("cell_size", "grid cell larger than twice the particle spacing under-resolves the body")
        self.grid = grid if grid is not None else MPMGrid.for_workspace(bounds, dx, table_height)
        self.gravity = np.asarray(gravity, dtype=float)
        self.table_height = float(table_height)
        self.use_table = use_table
        self.state = MPMState.at_rest(spec.particles)
        self.quiet_time = 0.0
        self.asleep = False
        self.dt_limit = cfl_limit(self.material, self.grid.cell_size)

    @property
    def n(self) -> int:
        return len(self.state.positions)

    def total_mass(self) -> float:
        return self.material.particle_mass * self.n

    def substeps_for(self, dt: float) -> int:
        return max(1, int(math.ceil(dt / self.dt_limit - 1e-12)))

    def step(self, grip_pose: Pose | None, width: float | None, half_extents, dt: float,
             prev_pose: Pose | None = None, prev_width: float | None = None) -> None:
        """Advance by ``dt``, sub-stepping to respect the CFL bound; the tool pose is held per substep."""
        boxes = _box_arrays(grip_pose, width, half_extents, prev_pose, prev_width, dt)
        near = grip_pose is not None and self._gripper_near(boxes)
        if self.asleep:
            if not near:
                return
            self.asleep = False
            self.quiet_time = 0.0
        n_sub = self.substeps_for(dt)
        h = dt / n_sub
        for _ in range(n_sub):
            mpm_step(self, h, boxes)
        if float(np.abs(self.state.velocities).max()) < 1e-3 and not near:
            self.quiet_time += dt
            if self.quiet_time > 0.25:
                self.asleep = True
                self.state.velocities[:] = 0.0
                self.state.affine_velocity[:] = 0.0
        else:
            self.quiet_time = 0.0

    def _gripper_near(self, boxes, pad: float | None = None) -> bool:
        pad = 2.0 * self.grid.cell_size if pad is None else pad
        c, r, hext = boxes[0], boxes[1], boxes[2]
        x = self.state.positions
        for i in range(len(c)):
            loc = (x - c[i]) @ r[i]
            if np.any(np.all(np.abs(loc) <= hext[i] + pad, axis=1)):
                return True
        return False


def _box_arrays(grip_pose, width, half_extents, prev_pose, prev_width, dt):
    if grip_pose is None:
        z = np.zeros((0, 3))
        return z, np.zeros((0, 3, 3)), z, z, z
    boxes = finger_boxes(grip_pose, width, half_extents)
    c = np.array([b.center for b in boxes])
    r = np.array([b.rotation for b in boxes])
    h = np.array([b.half_extents for b in boxes])
    if prev_pose is not None:
        pb = finger_boxes(prev_pose, prev_width if prev_width is not None else width, half_extents)
        v = (c - np.array([b.center for b in pb])) / dt
        dyaw = (grip_pose.yaw - prev_pose.yaw + math.pi) % (2 * math.pi) - math.pi
        wv = np.tile([0.0, 0.0, dyaw / dt], (len(c), 1))
    else:
        v = np.zeros_like(c)
        wv = np.zeros_like(c)
    return c, r, h, v, wv


def mpm_step(body: MPMBody, dt: float, boxes=None, apply_boundaries: bool = True) -> None:
    """One APIC cycle on ``body.state`` in place."""
    if dt > body.dt_limit * (1 + 1e-9):
        raise CFLViolation(f"dt {dt:.2e} s exceeds the CFL bound {body.dt_limit:.2e} s")
    if boxes is None:
        boxes = _box_arrays(None, None, None, None, None, dt)
    st = body.state
    m = body.material
    g = body.grid
    det = substep(st.positions, st.velocities, st.deformation_gradient, st.affine_velocity, st.plastic_multiplier,
                  m.particle_mass, m.volume, m.mu, m.lam, m.plasticity, m.yield_stress, m.dp_alpha,
                  g.mass, g.momentum, g.origin, g.cell_size, dt, body.gravity, body.use_table, body.table_height,
                  boxes[0], boxes[1], boxes[2], boxes[3], boxes[4], apply_boundaries)
    if det == -1.0:
        raise NumericalDivergence(f"{body.name}: particle state non-finite or outside the grid")
    if not det > 0.0 or not np.isfinite(det):
        raise NumericalDivergence(f"{body.name}: det(F) <= 0 (min {det:.3e})")


def squeeze_bbox(positions) -> tuple[float, float]:
    """Horizontal extents along the principal axes of the particles' (x, y) spread."""
    xy = np.asarray(positions, dtype=float).reshape(-1, 3)[:, :2]
    c = xy - xy.mean(axis=0)
    cov = c.T @ c
    _, vecs = np.linalg.eigh(cov)
    proj = c @ vecs
    ext = proj.max(axis=0) - proj.min(axis=0)
    return float(ext.max()), float(ext.min())
