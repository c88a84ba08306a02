"""Compiled inner loops.

Everything here operates on plain arrays so it can be called from the mesh,
gravity and dynamics modules without Python overhead inside hot loops
(propagation, shooting, ray casting). Public wrappers live in the modules that
own the corresponding data structures.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi

# propagation status codes
RUNNING = 0
TIMED_OUT = 1
IMPACT = 2
ESCAPED = 3
SINGULAR = 4


# ---------------------------------------------------------------------------
# polyhedral gravity
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath={"reassoc", "contract", "nsz", "arcp"})
def field_eval(px, py, pz, verts, faces, normals, edges, edge_len, dyads,
               gr, guard, want_hess, rv, rn, g, H):
    """Constant-density polyhedron field at one point.

    Fills ``g`` (3,) and, when ``want_hess``, ``H`` (3, 3). ``rv``/``rn`` are
    per-vertex scratch buffers. Returns ``(U, solid_angle_sum, singular)``.
    """
    nv = verts.shape[0]
    for i in range(nv):
        dx = verts[i, 0] - px
        dy = verts[i, 1] - py
        dz = verts[i, 2] - pz
        rv[i, 0] = dx
        rv[i, 1] = dy
        rv[i, 2] = dz
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        if d < guard:
            return 0.0, 0.0, True
        rn[i] = d

    U_e = 0.0
    gx = 0.0
    gy = 0.0
    gz = 0.0
    h00 = 0.0
    h01 = 0.0
    h02 = 0.0
    h11 = 0.0
    h12 = 0.0
    h22 = 0.0

    for e in range(edges.shape[0]):
        i = edges[e, 0]
        j = edges[e, 1]
        ax = rv[i, 0]
        ay = rv[i, 1]
        az = rv[i, 2]
        bx = rv[j, 0]
        by = rv[j, 1]
        bz = rv[j, 2]
        ri = rn[i]
        rj = rn[j]
        le = edge_len[e]
        s = ri + rj
        ab = ax * bx + ay * by + az * bz
        if ab < 0.0:
            # point projects inside the segment: avoid cancellation in ri*rj + a.b
            cx = ay * bz - az * by
            cy = az * bx - ax * bz
            cz = ax * by - ay * bx
            cross2 = cx * cx + cy * cy + cz * cz
            if math.sqrt(cross2) < guard * le:
                return 0.0, 0.0, True
            q = cross2 / (ri * rj - ab)
        else:
            q = ri * rj + ab
        den = 2.0 * q / (s + le)
        if den <= 0.0:
            return 0.0, 0.0, True
        L = math.log((s + le) / den)

        E = dyads[e]
        ex = E[0, 0] * ax + E[0, 1] * ay + E[0, 2] * az
        ey = E[1, 0] * ax + E[1, 1] * ay + E[1, 2] * az
        ez = E[2, 0] * ax + E[2, 1] * ay + E[2, 2] * az
        U_e += (ax * ex + ay * ey + az * ez) * L
        gx -= ex * L
        gy -= ey * L
        gz -= ez * L
        if want_hess:
            h00 += E[0, 0] * L
            h01 += E[0, 1] * L
            h02 += E[0, 2] * L
            h11 += E[1, 1] * L
            h12 += E[1, 2] * L
            h22 += E[2, 2] * L

    U_f = 0.0
    wsum = 0.0
    for f in range(faces.shape[0]):
        i = faces[f, 0]
        j = faces[f, 1]
        k = faces[f, 2]
        ax = rv[i, 0]
        ay = rv[i, 1]
        az = rv[i, 2]
        bx = rv[j, 0]
        by = rv[j, 1]
        bz = rv[j, 2]
        cx = rv[k, 0]
        cy = rv[k, 1]
        cz = rv[k, 2]
        num = (ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz)
               + az * (bx * cy - by * cx))
        den = (rn[i] * rn[j] * rn[k]
               + rn[i] * (bx * cx + by * cy + bz * cz)
               + rn[j] * (cx * ax + cy * ay + cz * az)
               + rn[k] * (ax * bx + ay * by + az * bz))
        w = 2.0 * math.atan2(num, den)
        wsum += w
        nx = normals[f, 0]
        ny = normals[f, 1]
        nz = normals[f, 2]
        nr = nx * ax + ny * ay + nz * az
        U_f += nr * nr * w
        gx += nx * nr * w
        gy += ny * nr * w
        gz += nz * nr * w
        if want_hess:
            h00 -= nx * nx * w
            h01 -= nx * ny * w
            h02 -= nx * nz * w
            h11 -= ny * ny * w
            h12 -= ny * nz * w
            h22 -= nz * nz * w

    g[0] = gr * gx
    g[1] = gr * gy
    g[2] = gr * gz
    if want_hess:
        H[0, 0] = gr * h00
        H[0, 1] = gr * h01
        H[0, 2] = gr * h02
        H[1, 0] = gr * h01
        H[1, 1] = gr * h11
        H[1, 2] = gr * h12
        H[2, 0] = gr * h02
        H[2, 1] = gr * h12
        H[2, 2] = gr * h22
    return 0.5 * gr * (U_e - U_f), wsum, False


@njit(cache=True)
def field_batch(points, verts, faces, normals, edges, edge_len, dyads, gr,
                guard, want_hess):
    n = points.shape[0]
    U = np.empty(n)
    lap = np.empty(n)
    g = np.empty((n, 3))
    H = np.zeros((n, 3, 3))
    bad = np.zeros(n, dtype=np.bool_)
    rv = np.empty((verts.shape[0], 3))
    rn = np.empty(verts.shape[0])
    gi = np.empty(3)
    Hi = np.empty((3, 3))
    for m in range(n):
        u, w, sing = field_eval(points[m, 0], points[m, 1], points[m, 2],
                                verts, faces, normals, edges, edge_len, dyads,
                                gr, guard, want_hess, rv, rn, gi, Hi)
        bad[m] = sing
        U[m] = u
        lap[m] = -gr * w
        g[m, :] = gi
        if want_hess:
            H[m, :, :] = Hi
    return U, g, H, lap, bad


# ---------------------------------------------------------------------------
# solid angles / containment
# ---------------------------------------------------------------------------

@njit(cache=True)
def solid_angle_sum(p, verts, faces):
    total = 0.0
    for f in range(faces.shape[0]):
        a = verts[faces[f, 0]] - p
        b = verts[faces[f, 1]] - p
        c = verts[faces[f, 2]] - p
        la = math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
        lb = math.sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2])
        lc = math.sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2])
        num = (a[0] * (b[1] * c[2] - b[2] * c[1]) + a[1] * (b[2] * c[0] - b[0] * c[2])
               + a[2] * (b[0] * c[1] - b[1] * c[0]))
        den = (la * lb * lc + la * (b[0] * c[0] + b[1] * c[1] + b[2] * c[2])
               + lb * (c[0] * a[0] + c[1] * a[1] + c[2] * a[2])
               + lc * (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]))
        total += 2.0 * math.atan2(num, den)
    return total


# ---------------------------------------------------------------------------
# point-triangle distance and ray-triangle intersection
# ---------------------------------------------------------------------------

@njit(cache=True)
def closest_on_triangle(p, a, b, c):
    """Closest point to ``p`` on triangle abc (Voronoi-region walk)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab[0] * ap[0] + ab[1] * ap[1] + ab[2] * ap[2]
    d2 = ac[0] * ap[0] + ac[1] * ap[1] + ac[2] * ap[2]
    if d1 <= 0.0 and d2 <= 0.0:
        return a.copy()
    bp = p - b
    d3 = ab[0] * bp[0] + ab[1] * bp[1] + ab[2] * bp[2]
    d4 = ac[0] * bp[0] + ac[1] * bp[1] + ac[2] * bp[2]
    if d3 >= 0.0 and d4 <= d3:
        return b.copy()
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab
    cp = p - c
    d5 = ab[0] * cp[0] + ab[1] * cp[1] + ab[2] * cp[2]
    d6 = ac[0] * cp[0] + ac[1] * cp[1] + ac[2] * cp[2]
    if d6 >= 0.0 and d5 <= d6:
        return c.copy()
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


@njit(cache=True, error_model="numpy")
def ray_triangle(o, d, a, b, c):
    """Watertight ray/triangle test (sheared edge functions). Returns t or -1."""
    ad0 = abs(d[0])
    ad1 = abs(d[1])
    ad2 = abs(d[2])
    if ad0 >= ad1 and ad0 >= ad2:
        kz = 0
    elif ad1 >= ad2:
        kz = 1
    else:
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx
    sx = d[kx] / d[kz]
    sy = d[ky] / d[kz]
    sz = 1.0 / d[kz]
    A0 = a[kx] - o[kx]
    A1 = a[ky] - o[ky]
    A2 = a[kz] - o[kz]
    B0 = b[kx] - o[kx]
    B1 = b[ky] - o[ky]
    B2 = b[kz] - o[kz]
    C0 = c[kx] - o[kx]
    C1 = c[ky] - o[ky]
    C2 = c[kz] - o[kz]
    Ax = A0 - sx * A2
    Ay = A1 - sy * A2
    Bx = B0 - sx * B2
    By = B1 - sy * B2
    Cx = C0 - sx * C2
    Cy = C1 - sy * C2
    U = Cx * By - Cy * Bx
    V = Ax * Cy - Ay * Cx
    W = Bx * Ay - By * Ax
    if (U < 0.0 or V < 0.0 or W < 0.0) and (U > 0.0 or V > 0.0 or W > 0.0):
        return -1.0
    det = U + V + W
    if det == 0.0:
        return -1.0
    T = U * (sz * A2) + V * (sz * B2) + W * (sz * C2)
    t = T / det
    if t <= 0.0:
        return -1.0
    return t


# ---------------------------------------------------------------------------
# BVH traversal
# ---------------------------------------------------------------------------

@njit(cache=True)
def _box_dist2(p, bmin, bmax):
    s = 0.0
    for k in range(3):
        if p[k] < bmin[k]:
            d = bmin[k] - p[k]
            s += d * d
        elif p[k] > bmax[k]:
            d = p[k] - bmax[k]
            s += d * d
    return s


@njit(cache=True)
def bvh_closest(p, verts, faces, bmin, bmax, left, right, start, count, order):
    best_d2 = np.inf
    best_f = -1
    best_q = np.zeros(3)
    stack = np.empty(128, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_dist2(p, bmin[node], bmax[node]) > best_d2:
            continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                f = order[k]
                q = closest_on_triangle(p, verts[faces[f, 0]], verts[faces[f, 1]],
                                        verts[faces[f, 2]])
                dx = q[0] - p[0]
                dy = q[1] - p[1]
                dz = q[2] - p[2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best_d2 or (d2 == best_d2 and f < best_f):
                    best_d2 = d2
                    best_f = f
                    best_q = q
        else:
            l = left[node]
            r = right[node]
            dl = _box_dist2(p, bmin[l], bmax[l])
            dr = _box_dist2(p, bmin[r], bmax[r])
            # push the farther child first so the nearer one is popped next
            if dl <= dr:
                stack[sp] = r
                stack[sp + 1] = l
            else:
                stack[sp] = l
                stack[sp + 1] = r
            sp += 2
    return best_q, best_f, math.sqrt(best_d2)


@njit(cache=True)
def bvh_closest_batch(points, verts, faces, bmin, bmax, left, right, start, count, order):
    n = points.shape[0]
    q = np.empty((n, 3))
    fid = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for m in range(n):
        qm, fm, dm = bvh_closest(points[m], verts, faces, bmin, bmax, left, right,
                                 start, count, order)
        q[m] = qm
        fid[m] = fm
        dist[m] = dm
    return q, fid, dist


@njit(cache=True, error_model="numpy")
def _ray_box(o, d, bmin, bmax, tmax):
    t0 = 0.0
    t1 = tmax
    for k in range(3):
        if abs(d[k]) < 1e-300:
            if o[k] < bmin[k] or o[k] > bmax[k]:
                return False
            continue
        inv = 1.0 / d[k]
        ta = (bmin[k] - o[k]) * inv
        tb = (bmax[k] - o[k]) * inv
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


@njit(cache=True, error_model="numpy")
def bvh_ray(o, d, verts, faces, bmin, bmax, left, right, start, count, order):
    best_t = np.inf
    best_f = -1
    stack = np.empty(128, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        # slack keeps equal-distance hits in boxes that merely touch best_t
        if not _ray_box(o, d, bmin[node], bmax[node], best_t * (1.0 + 1e-12) + 1e-300):
            continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                f = order[k]
                t = ray_triangle(o, d, verts[faces[f, 0]], verts[faces[f, 1]],
                                 verts[faces[f, 2]])
                if t > 0.0 and (t < best_t or (t == best_t and f < best_f)):
                    best_t = t
                    best_f = f
        else:
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
    return best_t, best_f


@njit(cache=True)
def rrt_grow(root, samples, delta, max_hop, verts, faces, bmin, bmax, left, right, start,
             count, order):
    """Grow a steering tree from ``root`` through ``samples`` in order.

    For each sample: nearest vertex (Euclidean, first index on ties), step at
    most ``delta`` toward the sample, snap to the closest surface point, and
    keep the new vertex unless the realized hop is < 1e-6 or > ``max_hop``.
    Returns (positions, facets, parents) of the kept vertices, root first.
    """
    K = samples.shape[0]
    P = np.empty((K + 1, 3))
    F = np.empty(K + 1, dtype=np.int64)
    parent = np.empty(K + 1, dtype=np.int64)
    P[0] = root
    F[0] = -1
    parent[0] = -1
    q = np.empty(3)
    n = 1
    for s in range(K):
        rx = samples[s, 0]
        ry = samples[s, 1]
        rz = samples[s, 2]
        best = 0
        bd = np.inf
        for i in range(n):
            dx = P[i, 0] - rx
            dy = P[i, 1] - ry
            dz = P[i, 2] - rz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < bd:
                bd = d2
                best = i
        dist = math.sqrt(bd)
        if dist < 1e-9:
            continue
        frac = min(delta, dist) / dist
        q[0] = P[best, 0] + (rx - P[best, 0]) * frac
        q[1] = P[best, 1] + (ry - P[best, 1]) * frac
        q[2] = P[best, 2] + (rz - P[best, 2]) * frac
        c, f, _ = bvh_closest(q, verts, faces, bmin, bmax, left, right, start, count, order)
        hx = c[0] - P[best, 0]
        hy = c[1] - P[best, 1]
        hz = c[2] - P[best, 2]
        hop = math.sqrt(hx * hx + hy * hy + hz * hz)
        if hop < 1e-6 or hop > max_hop:
            continue
        P[n] = c
        F[n] = f
        parent[n] = best
        n += 1
    return P[:n].copy(), F[:n].copy(), parent[:n].copy()


@njit(cache=True, error_model="numpy")
def bvh_ray_batch(origins, dirs, verts, faces, bmin, bmax, left, right, start, count, order):
    n = dirs.shape[0]
    t = np.empty(n)
    fid = np.empty(n, dtype=np.int64)
    for m in range(n):
        tm, fm = bvh_ray(origins[m], dirs[m], verts, faces, bmin, bmax, left, right,
                         start, count, order)
        t[m] = tm
        fid[m] = fm
    return t, fid


# ---------------------------------------------------------------------------
# rotating-frame RK4 propagation
# ---------------------------------------------------------------------------

@njit(cache=True)
def _deriv(x, v, omega, extra, verts, faces, normals, edges, edge_len, dyads,
           gr, guard, with_stm, Pr, Pv, rv, rn, g, H, acc, dPv):
    """Right-hand side of the rotating-frame equation of motion.

    acc = g + extra - 2 w x v - w x (w x r); optional variational block
    dPv = (H - [w]x[w]x) Pr - 2 [w]x Pv.
    Returns (solid_angle_sum, singular).
    """
    U, wsum, sing = field_eval(x[0], x[1], x[2], verts, faces, normals, edges,
                               edge_len, dyads, gr, guard, with_stm, rv, rn, g, H)
    if sing:
        return 0.0, True
    wx = omega[0]
    wy = omega[1]
    wz = omega[2]
    # w x v
    cvx = wy * v[2] - wz * v[1]
    cvy = wz * v[0] - wx * v[2]
    cvz = wx * v[1] - wy * v[0]
    # w x r, then w x (w x r)
    crx = wy * x[2] - wz * x[1]
    cry = wz * x[0] - wx * x[2]
    crz = wx * x[1] - wy * x[0]
    ccx = wy * crz - wz * cry
    ccy = wz * crx - wx * crz
    ccz = wx * cry - wy * crx
    acc[0] = g[0] + extra[0] - 2.0 * cvx - ccx
    acc[1] = g[1] + extra[1] - 2.0 * cvy - ccy
    acc[2] = g[2] + extra[2] - 2.0 * cvz - ccz
    if with_stm:
        # [w]x[w]x = w w^T - |w|^2 I
        w2 = wx * wx + wy * wy + wz * wz
        A00 = H[0, 0] - (wx * wx - w2)
        A01 = H[0, 1] - wx * wy
        A02 = H[0, 2] - wx * wz
        A10 = H[1, 0] - wy * wx
        A11 = H[1, 1] - (wy * wy - w2)
        A12 = H[1, 2] - wy * wz
        A20 = H[2, 0] - wz * wx
        A21 = H[2, 1] - wz * wy
        A22 = H[2, 2] - (wz * wz - w2)
        for c in range(3):
            p0 = Pr[0, c]
            p1 = Pr[1, c]
            p2 = Pr[2, c]
            q0 = Pv[0, c]
            q1 = Pv[1, c]
            q2 = Pv[2, c]
            dPv[0, c] = A00 * p0 + A01 * p1 + A02 * p2 - 2.0 * (wy * q2 - wz * q1)
            dPv[1, c] = A10 * p0 + A11 * p1 + A12 * p2 - 2.0 * (wz * q0 - wx * q2)
            dPv[2, c] = A20 * p0 + A21 * p1 + A22 * p2 - 2.0 * (wx * q1 - wy * q0)
    return wsum, False


@njit(cache=True)
def propagate_rk4(r0, v0, h, n_steps, omega, extra, verts, faces, normals, edges,
                  edge_len, dyads, gr, guard, stop_on_impact, escape_radius, with_stm):
    """Fixed-step RK4 in the rotating body frame.

    Returns (pos, vel, inside, n_done, status, Phi_rv) where rows 0..n_done of
    pos/vel are valid samples and ``inside`` flags samples whose solid-angle sum
    puts them inside the body.
    """
    pos = np.empty((n_steps + 1, 3))
    vel = np.empty((n_steps + 1, 3))
    inside = np.zeros(n_steps + 1, dtype=np.bool_)
    nv = verts.shape[0]
    rv = np.empty((nv, 3))
    rn = np.empty(nv)
    g = np.empty(3)
    H = np.zeros((3, 3))

    x = r0.copy()
    v = v0.copy()
    Pr = np.zeros((3, 3))
    Pv = np.eye(3)
    pos[0] = x
    vel[0] = v

    k1v = np.empty(3)
    k2v = np.empty(3)
    k3v = np.empty(3)
    k4v = np.empty(3)
    xs = np.empty(3)
    vs = np.empty(3)
    m1 = np.zeros((3, 3))
    m2 = np.zeros((3, 3))
    m3 = np.zeros((3, 3))
    m4 = np.zeros((3, 3))
    Prs = np.zeros((3, 3))
    Pvs = np.zeros((3, 3))
    P2r = np.zeros((3, 3))
    P3r = np.zeros((3, 3))
    half = 0.5 * h

    wsum, sing = _deriv(x, v, omega, extra, verts, faces, normals, edges, edge_len,
                        dyads, gr, guard, with_stm, Pr, Pv, rv, rn, g, H, k1v, m1)
    if sing:
        return pos, vel, inside, 0, SINGULAR, Pr
    inside[0] = wsum > TWO_PI

    for n in range(n_steps):
        # k1 already holds the derivative at the current sample
        for c in range(3):
            xs[c] = x[c] + half * v[c]
            vs[c] = v[c] + half * k1v[c]
        if with_stm:
            Prs[:, :] = Pr + half * Pv
            Pvs[:, :] = Pv + half * m1
        w_, sing = _deriv(xs, vs, omega, extra, verts, faces, normals, edges, edge_len,
                          dyads, gr, guard, with_stm, Prs, Pvs, rv, rn, g, H, k2v, m2)
        if sing:
            return pos, vel, inside, n, SINGULAR, Pr
        k2x0 = vs[0]
        k2x1 = vs[1]
        k2x2 = vs[2]
        if with_stm:
            P2r[:, :] = Pvs
        for c in range(3):
            xs[c] = x[c] + half * vs[c]
            vs[c] = v[c] + half * k2v[c]
        if with_stm:
            Prs[:, :] = Pr + half * P2r
            Pvs[:, :] = Pv + half * m2
        w_, sing = _deriv(xs, vs, omega, extra, verts, faces, normals, edges, edge_len,
                          dyads, gr, guard, with_stm, Prs, Pvs, rv, rn, g, H, k3v, m3)
        if sing:
            return pos, vel, inside, n, SINGULAR, Pr
        k3x0 = vs[0]
        k3x1 = vs[1]
        k3x2 = vs[2]
        if with_stm:
            P3r[:, :] = Pvs
        for c in range(3):
            xs[c] = x[c] + h * vs[c]
            vs[c] = v[c] + h * k3v[c]
        if with_stm:
            Prs[:, :] = Pr + h * P3r
            Pvs[:, :] = Pv + h * m3
        w_, sing = _deriv(xs, vs, omega, extra, verts, faces, normals, edges, edge_len,
                          dyads, gr, guard, with_stm, Prs, Pvs, rv, rn, g, H, k4v, m4)
        if sing:
            return pos, vel, inside, n, SINGULAR, Pr
        x[0] += h / 6.0 * (v[0] + 2.0 * k2x0 + 2.0 * k3x0 + vs[0])
        x[1] += h / 6.0 * (v[1] + 2.0 * k2x1 + 2.0 * k3x1 + vs[1])
        x[2] += h / 6.0 * (v[2] + 2.0 * k2x2 + 2.0 * k3x2 + vs[2])
        for c in range(3):
            v[c] += h / 6.0 * (k1v[c] + 2.0 * k2v[c] + 2.0 * k3v[c] + k4v[c])
        if with_stm:
            Pr_new = Pr + h / 6.0 * (Pv + 2.0 * P2r + 2.0 * P3r + Pvs)
            Pv[:, :] = Pv + h / 6.0 * (m1 + 2.0 * m2 + 2.0 * m3 + m4)
            Pr[:, :] = Pr_new
        pos[n + 1] = x
        vel[n + 1] = v

        wsum, sing = _deriv(x, v, omega, extra, verts, faces, normals, edges, edge_len,
                            dyads, gr, guard, with_stm, Pr, Pv, rv, rn, g, H, k1v, m1)
        if sing:
            return pos, vel, inside, n + 1, SINGULAR, Pr
        inside[n + 1] = wsum > TWO_PI
        if stop_on_impact and inside[n + 1]:
            return pos, vel, inside, n + 1, IMPACT, Pr
        if escape_radius > 0.0:
            rr = x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
            if rr > escape_radius * escape_radius and (
                    x[0] * v[0] + x[1] * v[1] + x[2] * v[2]) > 0.0:
                return pos, vel, inside, n + 1, ESCAPED, Pr
    return pos, vel, inside, n_steps, TIMED_OUT, Pr
