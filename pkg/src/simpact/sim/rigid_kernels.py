"""Jitted kernels for the rigid engine: transforms, SAT contact generation, impulse solver.

Body arrays are indexed by body id; a body with ``inv_mass == 0`` is kinematic or
static and is moved only by its prescribed velocity. The table plane is body ``-1``.
Contact normals point from body ``a`` to body ``b``; ``sep`` is the signed
separation (negative when penetrating).
"""

from __future__ import annotations

import numpy as np
from numba import njit

MAX_CLIP = 64


@njit(cache=True)
def quat_to_mat(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    m = np.empty((3, 3))
    m[0, 0] = 1 - 2 * (y * y + z * z)
    m[0, 1] = 2 * (x * y - w * z)
    m[0, 2] = 2 * (x * z + w * y)
    m[1, 0] = 2 * (x * y + w * z)
    m[1, 1] = 1 - 2 * (x * x + z * z)
    m[1, 2] = 2 * (y * z - w * x)
    m[2, 0] = 2 * (x * z - w * y)
    m[2, 1] = 2 * (y * z + w * x)
    m[2, 2] = 1 - 2 * (x * x + y * y)
    return m


@njit(cache=True)
def world_geometry(pk_body, pk_v, pk_v_start, pk_v_count, pk_fn, pk_fd, pk_f_start, pk_f_count,
                   pk_ed, pk_ed_start, pk_ed_count, pos, quat, wv, wfn, wfd, wed, aabb, centroid):
    nh = pk_body.shape[0]
    for h in range(nh):
        b = pk_body[h]
        r = quat_to_mat(quat[b])
        x = pos[b]
        lo0 = 1e30
        lo1 = 1e30
        lo2 = 1e30
        hi0 = -1e30
        hi1 = -1e30
        hi2 = -1e30
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        vs = pk_v_start[h]
        for i in range(vs, vs + pk_v_count[h]):
            for k in range(3):
                wv[i, k] = r[k, 0] * pk_v[i, 0] + r[k, 1] * pk_v[i, 1] + r[k, 2] * pk_v[i, 2] + x[k]
            lo0 = min(lo0, wv[i, 0])
            lo1 = min(lo1, wv[i, 1])
            lo2 = min(lo2, wv[i, 2])
            hi0 = max(hi0, wv[i, 0])
            hi1 = max(hi1, wv[i, 1])
            hi2 = max(hi2, wv[i, 2])
            c0 += wv[i, 0]
            c1 += wv[i, 1]
            c2 += wv[i, 2]
        n = pk_v_count[h]
        centroid[h, 0] = c0 / n
        centroid[h, 1] = c1 / n
        centroid[h, 2] = c2 / n
        aabb[h, 0] = lo0
        aabb[h, 1] = lo1
        aabb[h, 2] = lo2
        aabb[h, 3] = hi0
        aabb[h, 4] = hi1
        aabb[h, 5] = hi2
        fs = pk_f_start[h]
        for f in range(fs, fs + pk_f_count[h]):
            for k in range(3):
                wfn[f, k] = r[k, 0] * pk_fn[f, 0] + r[k, 1] * pk_fn[f, 1] + r[k, 2] * pk_fn[f, 2]
            wfd[f] = pk_fd[f] + wfn[f, 0] * x[0] + wfn[f, 1] * x[1] + wfn[f, 2] * x[2]
        es = pk_ed_start[h]
        for e in range(es, es + pk_ed_count[h]):
            for k in range(3):
                wed[e, k] = r[k, 0] * pk_ed[e, 0] + r[k, 1] * pk_ed[e, 1] + r[k, 2] * pk_ed[e, 2]


@njit(cache=True)
def _min_proj(wv, start, count, n0, n1, n2):
    m = 1e30
    for i in range(start, start + count):
        d = wv[i, 0] * n0 + wv[i, 1] * n1 + wv[i, 2] * n2
        if d < m:
            m = d
    return m


@njit(cache=True)
def _max_proj(wv, start, count, n0, n1, n2):
    m = -1e30
    for i in range(start, start + count):
        d = wv[i, 0] * n0 + wv[i, 1] * n1 + wv[i, 2] * n2
        if d > m:
            m = d
    return m


@njit(cache=True)
def reduce_manifold(pts, seps, k, out_idx):
    """Choose up to 4 of ``k`` points: deepest, farthest, then maximal area. Returns count."""
    if k <= 4:
        for i in range(k):
            out_idx[i] = i
        return k
    i0 = 0
    for i in range(k):
        if seps[i] < seps[i0]:
            i0 = i
    i1 = -1
    best = -1.0
    for i in range(k):
        d = 0.0
        for c in range(3):
            d += (pts[i, c] - pts[i0, c]) ** 2
        if d > best:
            best = d
            i1 = i
    i2 = -1
    best = -1.0
    for i in range(k):
        if i == i0 or i == i1:
            continue
        a = _tri_area(pts, i0, i1, i)
        if a > best:
            best = a
            i2 = i
    i3 = -1
    best = -1.0
    for i in range(k):
        if i == i0 or i == i1 or i == i2:
            continue
        a = _tri_area(pts, i0, i1, i) + _tri_area(pts, i1, i2, i) + _tri_area(pts, i2, i0, i)
        if a > best:
            best = a
            i3 = i
    out_idx[0] = i0
    out_idx[1] = i1
    out_idx[2] = i2
    out_idx[3] = i3
    return 4


@njit(cache=True)
def _tri_area(pts, a, b, c):
    u0 = pts[b, 0] - pts[a, 0]
    u1 = pts[b, 1] - pts[a, 1]
    u2 = pts[b, 2] - pts[a, 2]
    v0 = pts[c, 0] - pts[a, 0]
    v1 = pts[c, 1] - pts[a, 1]
    v2 = pts[c, 2] - pts[a, 2]
    x = u1 * v2 - u2 * v1
    y = u2 * v0 - u0 * v2
    z = u0 * v1 - u1 * v0
    return 0.5 * np.sqrt(x * x + y * y + z * z)


@njit(cache=True)
def _push_contact(ca, cb, cp, cn, cs, nc, a, b, p0, p1, p2, n0, n1, n2, s):
    if nc >= ca.shape[0]:
        return nc
    ca[nc] = a
    cb[nc] = b
    cp[nc, 0] = p0
    cp[nc, 1] = p1
    cp[nc, 2] = p2
    cn[nc, 0] = n0
    cn[nc, 1] = n1
    cn[nc, 2] = n2
    cs[nc] = s
    return nc + 1


@njit(cache=True)
def table_contacts(pk_body, pk_v_start, pk_v_count, wv, aabb, table_z, margin, skip_body,
                   ca, cb, cp, cn, cs, nc):
    nh = pk_body.shape[0]
    pts = np.empty((256, 3))
    seps = np.empty(256)
    idx = np.empty(4, dtype=np.int64)
    for h in range(nh):
        b = pk_body[h]
        if skip_body[b]:
            continue
        if aabb[h, 2] - table_z > margin:
            continue
        k = 0
        vs = pk_v_start[h]
        for i in range(vs, vs + pk_v_count[h]):
            s = wv[i, 2] - table_z
            if s < margin and k < 256:
                pts[k, 0] = wv[i, 0]
                pts[k, 1] = wv[i, 1]
                pts[k, 2] = wv[i, 2]
                seps[k] = s
                k += 1
        m = reduce_manifold(pts, seps, k, idx)
        for j in range(m):
            i = idx[j]
            nc = _push_contact(ca, cb, cp, cn, cs, nc, -1, b, pts[i, 0], pts[i, 1], table_z + 0.5 * seps[i],
                               0.0, 0.0, 1.0, seps[i])
    return nc


@njit(cache=True)
def _clip_polygon(poly, npoly, out, p0, p1, p2, m0, m1, m2):
    """Keep the part of ``poly`` with m . (x - p) <= 0. Returns new count."""
    nout = 0
    if npoly == 0:
        return 0
    prev = npoly - 1
    dprev = m0 * (poly[prev, 0] - p0) + m1 * (poly[prev, 1] - p1) + m2 * (poly[prev, 2] - p2)
    for i in range(npoly):
        d = m0 * (poly[i, 0] - p0) + m1 * (poly[i, 1] - p1) + m2 * (poly[i, 2] - p2)
        if (dprev <= 0.0) != (d <= 0.0):
            t = dprev / (dprev - d)
            if nout < MAX_CLIP:
                for c in range(3):
                    out[nout, c] = poly[prev, c] + t * (poly[i, c] - poly[prev, c])
                nout += 1
        if d <= 0.0 and nout < MAX_CLIP:
            for c in range(3):
                out[nout, c] = poly[i, c]
            nout += 1
        prev = i
        dprev = d
    return nout


@njit(cache=True)
def _face_contacts(ref_h, ref_f, inc_h, body_ref, body_inc, flip, wv, wfn, wfd, pk_f_start, pk_f_count,
                   pk_fv, pk_fv_start, pk_fv_count, margin, ca, cb, cp, cn, cs, nc):
    n0 = wfn[ref_f, 0]
    n1 = wfn[ref_f, 1]
    n2 = wfn[ref_f, 2]
    d = wfd[ref_f]
    # incident face: most anti-parallel to the reference normal
    best = 1e30
    inc_f = -1
    fs = pk_f_start[inc_h]
    for f in range(fs, fs + pk_f_count[inc_h]):
        dd = wfn[f, 0] * n0 + wfn[f, 1] * n1 + wfn[f, 2] * n2
        if dd < best:
            best = dd
            inc_f = f
    poly = np.empty((MAX_CLIP, 3))
    tmp = np.empty((MAX_CLIP, 3))
    npoly = 0
    s0 = pk_fv_start[inc_f]
    for j in range(pk_fv_count[inc_f]):
        if npoly < MAX_CLIP:
            vi = pk_fv[s0 + j]
            poly[npoly, 0] = wv[vi, 0]
            poly[npoly, 1] = wv[vi, 1]
            poly[npoly, 2] = wv[vi, 2]
            npoly += 1
    rs = pk_fv_start[ref_f]
    rc = pk_fv_count[ref_f]
    for j in range(rc):
        va = pk_fv[rs + j]
        vb = pk_fv[rs + (j + 1) % rc]
        e0 = wv[vb, 0] - wv[va, 0]
        e1 = wv[vb, 1] - wv[va, 1]
        e2 = wv[vb, 2] - wv[va, 2]
        # outward side-plane normal e x n
        m0 = e1 * n2 - e2 * n1
        m1 = e2 * n0 - e0 * n2
        m2 = e0 * n1 - e1 * n0
        npoly = _clip_polygon(poly, npoly, tmp, wv[va, 0], wv[va, 1], wv[va, 2], m0, m1, m2)
        for i in range(npoly):
            for c in range(3):
                poly[i, c] = tmp[i, c]
        if npoly == 0:
            break
    pts = np.empty((MAX_CLIP, 3))
    seps = np.empty(MAX_CLIP)
    k = 0
    for i in range(npoly):
        s = poly[i, 0] * n0 + poly[i, 1] * n1 + poly[i, 2] * n2 - d
        if s < margin:
            pts[k, 0] = poly[i, 0] - 0.5 * s * n0
            pts[k, 1] = poly[i, 1] - 0.5 * s * n1
            pts[k, 2] = poly[i, 2] - 0.5 * s * n2
            seps[k] = s
            k += 1
    idx = np.empty(4, dtype=np.int64)
    m = reduce_manifold(pts, seps, k, idx)
    for j in range(m):
        i = idx[j]
        if flip:
            nc = _push_contact(ca, cb, cp, cn, cs, nc, body_inc, body_ref, pts[i, 0], pts[i, 1], pts[i, 2],
                               -n0, -n1, -n2, seps[i])
        else:
            nc = _push_contact(ca, cb, cp, cn, cs, nc, body_ref, body_inc, pts[i, 0], pts[i, 1], pts[i, 2],
                               n0, n1, n2, seps[i])
    return nc


@njit(cache=True)
def _segment_closest(p, q, r, s):
    """Closest points between segments p-q and r-s."""
    d1 = q - p
    d2 = s - r
    w = p - r
    a = np.dot(d1, d1)
    e = np.dot(d2, d2)
    f = np.dot(d2, w)
    c = np.dot(d1, w)
    b = np.dot(d1, d2)
    denom = a * e - b * b
    if denom > 1e-18:
        t1 = min(max((b * f - c * e) / denom, 0.0), 1.0)
    else:
        t1 = 0.0
    t2 = (b * t1 + f) / e if e > 1e-18 else 0.0
    if t2 < 0.0:
        t2 = 0.0
        t1 = min(max(-c / a, 0.0), 1.0) if a > 1e-18 else 0.0
    elif t2 > 1.0:
        t2 = 1.0
        t1 = min(max((b - c) / a, 0.0), 1.0) if a > 1e-18 else 0.0
    return p + t1 * d1, r + t2 * d2


@njit(cache=True)
def _support_edge(h, axis, sign, dir_, wv, pk_eg, pk_eg_start, pk_eg_count):
    """Edge of hull ``h`` parallel to ``dir_`` that is extreme along sign*axis."""
    best = -1e30
    found = -1
    es = pk_eg_start[h]
    for e in range(es, es + pk_eg_count[h]):
        a = pk_eg[e, 0]
        b = pk_eg[e, 1]
        ev = wv[b] - wv[a]
        ln = np.sqrt(np.dot(ev, ev))
        if ln < 1e-12:
            continue
        if abs(np.dot(ev, dir_)) / ln < 1.0 - 1e-4:
            continue
        mid = 0.5 * (wv[a] + wv[b])
        val = sign * np.dot(mid, axis)
        if val > best:
            best = val
            found = e
    return found


@njit(cache=True)
def hull_pair_contacts(ha, hb, pk_body, pk_v_start, pk_v_count, pk_f_start, pk_f_count, pk_fv, pk_fv_start,
                       pk_fv_count, pk_ed_start, pk_ed_count, pk_eg, pk_eg_start, pk_eg_count,
                       wv, wfn, wfd, wed, centroid, margin, ca, cb, cp, cn, cs, nc):
    """Separating-axis test between two hulls; appends the contact manifold."""
    va0 = pk_v_start[ha]
    van = pk_v_count[ha]
    vb0 = pk_v_start[hb]
    vbn = pk_v_count[hb]
    # faces of A
    best_a = -1e30
    fa = -1
    for f in range(pk_f_start[ha], pk_f_start[ha] + pk_f_count[ha]):
        s = _min_proj(wv, vb0, vbn, wfn[f, 0], wfn[f, 1], wfn[f, 2]) - wfd[f]
        if s > best_a:
            best_a = s
            fa = f
        if s > margin:
            return nc
    best_b = -1e30
    fb = -1
    for f in range(pk_f_start[hb], pk_f_start[hb] + pk_f_count[hb]):
        s = _min_proj(wv, va0, van, wfn[f, 0], wfn[f, 1], wfn[f, 2]) - wfd[f]
        if s > best_b:
            best_b = s
            fb = f
        if s > margin:
            return nc
    best_e = -1e30
    e_axis = np.zeros(3)
    e_ia = -1
    e_ib = -1
    for i in range(pk_ed_start[ha], pk_ed_start[ha] + pk_ed_count[ha]):
        for j in range(pk_ed_start[hb], pk_ed_start[hb] + pk_ed_count[hb]):
            x = wed[i, 1] * wed[j, 2] - wed[i, 2] * wed[j, 1]
            y = wed[i, 2] * wed[j, 0] - wed[i, 0] * wed[j, 2]
            z = wed[i, 0] * wed[j, 1] - wed[i, 1] * wed[j, 0]
            ln = np.sqrt(x * x + y * y + z * z)
            if ln < 1e-6:
                continue
            x /= ln
            y /= ln
            z /= ln
            s_pos = _min_proj(wv, vb0, vbn, x, y, z) - _max_proj(wv, va0, van, x, y, z)
            s_neg = _min_proj(wv, va0, van, x, y, z) - _max_proj(wv, vb0, vbn, x, y, z)
            if s_neg > s_pos:
                s = s_neg
                x, y, z = -x, -y, -z
            else:
                s = s_pos
            if s > margin:
                return nc
            if s > best_e:
                best_e = s
                e_axis[0] = x
                e_axis[1] = y
                e_axis[2] = z
                e_ia = i
                e_ib = j
    body_a = pk_body[ha]
    body_b = pk_body[hb]
    face_best = max(best_a, best_b)
    if e_ia >= 0 and best_e > face_best + 1e-4:
        ea = _support_edge(ha, e_axis, 1.0, wed[e_ia], wv, pk_eg, pk_eg_start, pk_eg_count)
        eb = _support_edge(hb, e_axis, -1.0, wed[e_ib], wv, pk_eg, pk_eg_start, pk_eg_count)
        if ea >= 0 and eb >= 0:
            pa, pb = _segment_closest(wv[pk_eg[ea, 0]], wv[pk_eg[ea, 1]], wv[pk_eg[eb, 0]], wv[pk_eg[eb, 1]])
            mid = 0.5 * (pa + pb)
            return _push_contact(ca, cb, cp, cn, cs, nc, body_a, body_b, mid[0], mid[1], mid[2],
                                 e_axis[0], e_axis[1], e_axis[2], best_e)
    if best_a + 1e-5 >= best_b:
        return _face_contacts(ha, fa, hb, body_a, body_b, False, wv, wfn, wfd, pk_f_start, pk_f_count,
                              pk_fv, pk_fv_start, pk_fv_count, margin, ca, cb, cp, cn, cs, nc)
    return _face_contacts(hb, fb, ha, body_b, body_a, True, wv, wfn, wfd, pk_f_start, pk_f_count,
                          pk_fv, pk_fv_start, pk_fv_count, margin, ca, cb, cp, cn, cs, nc)


@njit(cache=True)
def all_contacts(pk_body, pk_v_start, pk_v_count, pk_f_start, pk_f_count, pk_fv, pk_fv_start, pk_fv_count,
                 pk_ed_start, pk_ed_count, pk_eg, pk_eg_start, pk_eg_count, wv, wfn, wfd, wed, aabb, centroid,
                 inv_mass, use_table, table_z, margin, skip_table, skip_pair,
                 ca, cb, cp, cn, cs):
    """Every table and hull-hull contact. ``skip_pair[a, b]`` disables a body pair."""
    nc = 0
    if use_table:
        nc = table_contacts(pk_body, pk_v_start, pk_v_count, wv, aabb, table_z, margin, skip_table,
                            ca, cb, cp, cn, cs, nc)
    nh = pk_body.shape[0]
    for ha in range(nh):
        for hb in range(ha + 1, nh):
            a = pk_body[ha]
            b = pk_body[hb]
            if a == b or skip_pair[a, b]:
                continue
            if inv_mass[a] == 0.0 and inv_mass[b] == 0.0:
                continue
            if (aabb[ha, 0] > aabb[hb, 3] + margin or aabb[hb, 0] > aabb[ha, 3] + margin
                    or aabb[ha, 1] > aabb[hb, 4] + margin or aabb[hb, 1] > aabb[ha, 4] + margin
                    or aabb[ha, 2] > aabb[hb, 5] + margin or aabb[hb, 2] > aabb[ha, 5] + margin):
                continue
            nc = hull_pair_contacts(ha, hb, pk_body, pk_v_start, pk_v_count, pk_f_start, pk_f_count, pk_fv,
                                    pk_fv_start, pk_fv_count, pk_ed_start, pk_ed_count, pk_eg, pk_eg_start,
                                    pk_eg_count, wv, wfn, wfd, wed, centroid, margin, ca, cb, cp, cn, cs, nc)
    return nc


# ---------------------------------------------------------------------------
# solver


@njit(cache=True)
def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@njit(cache=True)
def _tangents(n):
    if abs(n[0]) < 0.57735:
        t1 = _cross(n, np.array([1.0, 0.0, 0.0]))
    else:
        t1 = _cross(n, np.array([0.0, 1.0, 0.0]))
    t1 /= np.sqrt(np.dot(t1, t1))
    t2 = _cross(n, t1)
    return t1, t2


@njit(cache=True)
def _eff_mass(d, ra, rb, ima, imb, ia, ib):
    k = ima + imb
    rna = _cross(ra, d)
    rnb = _cross(rb, d)
    k += np.dot(rna, ia @ rna) + np.dot(rnb, ib @ rnb)
    return 1.0 / k if k > 1e-18 else 0.0


@njit(cache=True)
def _apply(vel, omg, bidx, sign, imass, iinv, r, imp):
    if bidx < 0 or imass[bidx] == 0.0:
        return
    for k in range(3):
        vel[bidx, k] += sign * imass[bidx] * imp[k]
    dw = iinv[bidx] @ _cross(r, imp)
    for k in range(3):
        omg[bidx, k] += sign * dw[k]


@njit(cache=True)
def _rel_vel(vel, omg, a, b, ra, rb):
    v = np.zeros(3)
    if b >= 0:
        v += vel[b] + _cross(omg[b], rb)
    if a >= 0:
        v -= vel[a] + _cross(omg[a], ra)
    return v


@njit(cache=True)
def solve_contacts(nc, ca, cb, cp, cn, cs, cfric, pos, vel, omg, inv_mass, iinv_world,
                   lam_n, lam_t, dt, iters, beta, slop, pvel, pomg):
    """Sequential impulses on velocities, then split-impulse pseudo velocities.

    ``lam_n``/``lam_t`` hold warm-start impulses on entry and accumulated ones on exit.
    ``pvel``/``pomg`` receive the position-correction pseudo velocities.
    """
    zero3 = np.zeros((3, 3))
    ra_all = np.zeros((nc, 3))
    rb_all = np.zeros((nc, 3))
    kn = np.zeros(nc)
    kt1 = np.zeros(nc)
    kt2 = np.zeros(nc)
    t1_all = np.zeros((nc, 3))
    t2_all = np.zeros((nc, 3))
    for c in range(nc):
        a = ca[c]
        b = cb[c]
        n = cn[c]
        ra = cp[c] - pos[a] if a >= 0 else np.zeros(3)
        rb = cp[c] - pos[b] if b >= 0 else np.zeros(3)
        ra_all[c] = ra
        rb_all[c] = rb
        ima = inv_mass[a] if a >= 0 else 0.0
        imb = inv_mass[b] if b >= 0 else 0.0
        ia = iinv_world[a] if a >= 0 else zero3
        ib = iinv_world[b] if b >= 0 else zero3
        t1, t2 = _tangents(n)
        t1_all[c] = t1
        t2_all[c] = t2
        kn[c] = _eff_mass(n, ra, rb, ima, imb, ia, ib)
        kt1[c] = _eff_mass(t1, ra, rb, ima, imb, ia, ib)
        kt2[c] = _eff_mass(t2, ra, rb, ima, imb, ia, ib)
        # warm start
        imp = lam_n[c] * n + lam_t[c, 0] * t1 + lam_t[c, 1] * t2
        _apply(vel, omg, b, 1.0, inv_mass, iinv_world, rb, imp)
        _apply(vel, omg, a, -1.0, inv_mass, iinv_world, ra, imp)

    for _ in range(iters):
        for c in range(nc):
            a = ca[c]
            b = cb[c]
            n = cn[c]
            ra = ra_all[c]
            rb = rb_all[c]
            t1 = t1_all[c]
            t2 = t2_all[c]
            # friction first so the normal row has the last word on penetration
            vr = _rel_vel(vel, omg, a, b, ra, rb)
            old0 = lam_t[c, 0]
            old1 = lam_t[c, 1]
            n0 = old0 - kt1[c] * np.dot(vr, t1)
            n1 = old1 - kt2[c] * np.dot(vr, t2)
            lim = cfric[c] * lam_n[c]
            mag = np.sqrt(n0 * n0 + n1 * n1)
            if mag > lim:
                scale = lim / mag if mag > 0 else 0.0
                n0 *= scale
                n1 *= scale
            lam_t[c, 0] = n0
            lam_t[c, 1] = n1
            imp = (n0 - old0) * t1 + (n1 - old1) * t2
            _apply(vel, omg, b, 1.0, inv_mass, iinv_world, rb, imp)
            _apply(vel, omg, a, -1.0, inv_mass, iinv_world, ra, imp)

            vr = _rel_vel(vel, omg, a, b, ra, rb)
            vn = np.dot(vr, n)
            spec = cs[c] / dt if cs[c] > 0.0 else 0.0
            old = lam_n[c]
            new = max(old - kn[c] * (vn + spec), 0.0)
            lam_n[c] = new
            imp = (new - old) * n
            _apply(vel, omg, b, 1.0, inv_mass, iinv_world, rb, imp)
            _apply(vel, omg, a, -1.0, inv_mass, iinv_world, ra, imp)

    # split impulse: positional error is corrected through velocities that are discarded
    pvel[:] = 0.0
    pomg[:] = 0.0
    lam_p = np.zeros(nc)
    for _ in range(iters):
        for c in range(nc):
            pen = -cs[c] - slop
            if pen <= 0.0:
                continue
            a = ca[c]
            b = cb[c]
            n = cn[c]
            ra = ra_all[c]
            rb = rb_all[c]
            vr = _rel_vel(pvel, pomg, a, b, ra, rb)
            vn = np.dot(vr, n)
            bias = beta * pen / dt
            old = lam_p[c]
            new = max(old + kn[c] * (bias - vn), 0.0)
            lam_p[c] = new
            imp = (new - old) * n
            _apply(pvel, pomg, b, 1.0, inv_mass, iinv_world, rb, imp)
            _apply(pvel, pomg, a, -1.0, inv_mass, iinv_world, ra, imp)


@njit(cache=True)
def match_warm_start(nc, ca, cb, cp, cn, pc, pa, pb, pp, pn, plam_n, plam_t, lam_n, lam_t, radius):
    """Copy impulses from the previous step's contacts that sit within ``radius``."""
    for c in range(nc):
        lam_n[c] = 0.0
        lam_t[c, 0] = 0.0
        lam_t[c, 1] = 0.0
        best = radius * radius
        found = -1
        for j in range(pc):
            if pa[j] != ca[c] or pb[j] != cb[c]:
                continue
            if np.dot(pn[j], cn[c]) < 0.95:
                continue
            d = 0.0
            for k in range(3):
                d += (pp[j, k] - cp[c, k]) ** 2
            if d < best:
                best = d
                found = j
        if found >= 0:
            lam_n[c] = plam_n[found]
            # carry the friction impulse as a world vector, re-expressed in the new basis
            t1o, t2o = _tangents(pn[found])
            w = plam_t[found, 0] * t1o + plam_t[found, 1] * t2o
            t1, t2 = _tangents(cn[c])
            lam_t[c, 0] = np.dot(w, t1)
            lam_t[c, 1] = np.dot(w, t2)


@njit(cache=True)
def integrate(pos, quat, vel, omg, pvel, pomg, dynamic, dt):
    nb = pos.shape[0]
    for b in range(nb):
        if not dynamic[b]:
            continue
        for k in range(3):
            pos[b, k] += (vel[b, k] + pvel[b, k]) * dt
        w0 = omg[b, 0] + pomg[b, 0]
        w1 = omg[b, 1] + pomg[b, 1]
        w2 = omg[b, 2] + pomg[b, 2]
        qw, qx, qy, qz = quat[b, 0], quat[b, 1], quat[b, 2], quat[b, 3]
        h = 0.5 * dt
        nw = qw + h * (-w0 * qx - w1 * qy - w2 * qz)
        nx = qx + h * (w0 * qw + w1 * qz - w2 * qy)
        ny = qy + h * (-w0 * qz + w1 * qw + w2 * qx)
        nz = qz + h * (w0 * qy - w1 * qx + w2 * qw)
        ln = np.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
        quat[b, 0] = nw / ln
        quat[b, 1] = nx / ln
        quat[b, 2] = ny / ln
        quat[b, 3] = nz / ln


@njit(cache=True)
def world_inv_inertia(quat, inv_inertia_body, out):
    nb = quat.shape[0]
    for b in range(nb):
        r = quat_to_mat(quat[b])
        out[b] = r @ inv_inertia_body[b] @ r.T
