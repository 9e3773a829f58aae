"""Compiled inner loops for the reduced contact problem.

Everything here works in reduced (rigid-body) coordinates: a velocity is an
``n``-vector ``V`` (``n == 3`` for a welded planar body), the per-cell planar
velocity is ``G[j] @ V`` and the friction impulse of cell ``j`` is a planar
vector ``f[j]`` restricted to the diamond ``|fx| + |fy| <= h[j]`` spanned by
the four rays ``+x, -x, +y, -y``.  Contact rows are ``C[i] @ V + c0[i] >= 0``
with impulse ``lam[i] >= 0``.  ``V = Minv @ (p + sum G[j].T f[j] + sum C[i].T lam[i])``.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _diamond_qp(a00, a01, a11, b0, b1, h):
    # min 0.5 f^T A f + b^T f  s.t. |f0| + |f1| <= h
    if h <= 0.0:
        return 0.0, 0.0
    det = a00 * a11 - a01 * a01
    if det > 0.0:
        f0 = -(a11 * b0 - a01 * b1) / det
        f1 = -(-a01 * b0 + a00 * b1) / det
        if abs(f0) + abs(f1) <= h:
            return f0, f1
    best = np.inf
    bx = 0.0
    by = 0.0
    px = (h, 0.0, -h, 0.0)
    py = (0.0, h, 0.0, -h)
    for e in range(4):
        x0 = px[e]
        y0 = py[e]
        dx = px[(e + 1) % 4] - x0
        dy = py[(e + 1) % 4] - y0
        denom = a00 * dx * dx + 2.0 * a01 * dx * dy + a11 * dy * dy
        g0 = a00 * x0 + a01 * y0 + b0
        g1 = a01 * x0 + a11 * y0 + b1
        t = 0.0
        if denom > 0.0:
            t = -(dx * g0 + dy * g1) / denom
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        fx = x0 + t * dx
        fy = y0 + t * dy
        val = 0.5 * (a00 * fx * fx + 2.0 * a01 * fx * fy + a11 * fy * fy) + b0 * fx + b1 * fy
        if val < best:
            best = val
            bx = fx
            by = fy
    return bx, by


@njit(cache=True)
def complementarity(V, G, h, C, c0, f, lam):
    """Return ``(s^T gamma, max min(s, gamma), max infeasibility)``."""
    total = 0.0
    worst = 0.0
    infeas = 0.0
    k = G.shape[0]
    n = V.shape[0]
    for j in range(k):
        ux = 0.0
        uy = 0.0
        for a in range(n):
            ux += G[j, 0, a] * V[a]
            uy += G[j, 1, a] * V[a]
        eta = max(abs(ux), abs(uy))
        fx = f[j, 0]
        fy = f[j, 1]
        rays = (max(fx, 0.0), max(-fx, 0.0), max(fy, 0.0), max(-fy, 0.0))
        rho = (ux + eta, -ux + eta, uy + eta, -uy + eta)
        for r in range(4):
            total += rays[r] * rho[r]
            worst = max(worst, min(rays[r], rho[r]))
        xi = h[j] - (abs(fx) + abs(fy))
        if xi < 0.0:
            infeas = max(infeas, -xi)
            xi = 0.0
        total += xi * eta
        worst = max(worst, min(xi, eta))
    for i in range(C.shape[0]):
        a_i = c0[i]
        for a in range(n):
            a_i += C[i, a] * V[a]
        if a_i < 0.0:
            infeas = max(infeas, -a_i)
        if lam[i] < 0.0:
            infeas = max(infeas, -lam[i])
        total += max(a_i, 0.0) * max(lam[i], 0.0)
        worst = max(worst, min(a_i, lam[i]))
    return total, worst, infeas


@njit(cache=True)
def pgs(Minv, G, h, C, c0, p, f, lam, tol, max_iter):
    """Block projected Gauss-Seidel; ``f`` and ``lam`` are updated in place.

    Returns ``(V, sweeps, total, worst, infeas)``.
    """
    k = G.shape[0]
    n = Minv.shape[0]
    nc = C.shape[0]
    # per-cell couplings
    MG = np.zeros((k, n, 2))
    A = np.zeros((k, 3))
    for j in range(k):
        for a in range(n):
            for b in range(n):
                MG[j, a, 0] += Minv[a, b] * G[j, 0, b]
                MG[j, a, 1] += Minv[a, b] * G[j, 1, b]
        for a in range(n):
            A[j, 0] += G[j, 0, a] * MG[j, a, 0]
            A[j, 1] += G[j, 0, a] * MG[j, a, 1]
            A[j, 2] += G[j, 1, a] * MG[j, a, 1]
    MC = np.zeros((nc, n))
    cc = np.zeros(nc)
    for i in range(nc):
        for a in range(n):
            for b in range(n):
                MC[i, a] += Minv[a, b] * C[i, b]
        for a in range(n):
            cc[i] += C[i, a] * MC[i, a]

    w = p.copy()
    for j in range(k):
        for a in range(n):
            w[a] += G[j, 0, a] * f[j, 0] + G[j, 1, a] * f[j, 1]
    for i in range(nc):
        for a in range(n):
            w[a] += C[i, a] * lam[i]
    V = Minv @ w

    total, worst, infeas = complementarity(V, G, h, C, c0, f, lam)
    sweeps = 0
    while sweeps < max_iter and max(total, worst, infeas) > tol:
        for j in range(k):
            ux = 0.0
            uy = 0.0
            for a in range(n):
                ux += G[j, 0, a] * V[a]
                uy += G[j, 1, a] * V[a]
            fx = f[j, 0]
            fy = f[j, 1]
            b0 = ux - A[j, 0] * fx - A[j, 1] * fy
            b1 = uy - A[j, 1] * fx - A[j, 2] * fy
            nx, ny = _diamond_qp(A[j, 0], A[j, 1], A[j, 2], b0, b1, h[j])
            dx = nx - fx
            dy = ny - fy
            if dx != 0.0 or dy != 0.0:
                for a in range(n):
                    V[a] += MG[j, a, 0] * dx + MG[j, a, 1] * dy
                f[j, 0] = nx
                f[j, 1] = ny
        for i in range(nc):
            if cc[i] <= 1e-300:
                continue
            a_i = c0[i]
            for a in range(n):
                a_i += C[i, a] * V[a]
            new = lam[i] - a_i / cc[i]
            if new < 0.0:
                new = 0.0
            d = new - lam[i]
            if d != 0.0:
                for a in range(n):
                    V[a] += MC[i, a] * d
                lam[i] = new
        sweeps += 1
        total, worst, infeas = complementarity(V, G, h, C, c0, f, lam)
    # recompute V from the impulses to remove accumulated update drift
    w = p.copy()
    for j in range(k):
        for a in range(n):
            w[a] += G[j, 0, a] * f[j, 0] + G[j, 1, a] * f[j, 1]
    for i in range(nc):
        for a in range(n):
            w[a] += C[i, a] * lam[i]
    V = Minv @ w
    total, worst, infeas = complementarity(V, G, h, C, c0, f, lam)
    return V, sweeps, total, worst, infeas


@njit(cache=True)
def active_system(Mr, G, h, C, c0, p, f, lam):
    """Linear system of the active set read off approximate impulses.

    Unknowns are the twist, the two impulse components of sticking cells,
    the edge coordinate of cells on a diamond edge and the active pusher
    multipliers, in that order.  Returns the system and the regime data
    `extract` needs.
    """
    k = G.shape[0]
    n = Mr.shape[0]
    nc = C.shape[0]
    # regime: 0 fixed force (face vertex or zero limit), 1 stick, 2 edge
    regime = np.zeros(k, dtype=np.int64)
    fixed = np.zeros((k, 2))
    base = np.zeros((k, 2))
    edge = np.zeros((k, 2))
    sgn = np.zeros((k, 2))
    n_unknown = n
    n_eq = n
    for j in range(k):
        hj = h[j]
        fx = f[j, 0]
        fy = f[j, 1]
        if hj <= 0.0:
            regime[j] = 0
            continue
        s1 = abs(fx) + abs(fy)
        if s1 < hj * (1.0 - 1e-7):
            regime[j] = 1
            n_unknown += 2
            n_eq += 2
        elif min(abs(fx), abs(fy)) > hj * 1e-7:
            regime[j] = 2
            sx = -1.0 if fx > 0.0 else 1.0
            sy = -1.0 if fy > 0.0 else 1.0
            sgn[j, 0] = sx
            sgn[j, 1] = sy
            # f = base + theta * edge
            base[j, 0] = 0.0
            base[j, 1] = -hj * sy
            edge[j, 0] = -hj * sx
            edge[j, 1] = hj * sy
            n_unknown += 1
            n_eq += 1
        else:
            regime[j] = 0
            if abs(fx) >= abs(fy):
                fixed[j, 0] = hj if fx > 0.0 else -hj
            else:
                fixed[j, 1] = hj if fy > 0.0 else -hj
    active = np.zeros(nc, dtype=np.bool_)
    for i in range(nc):
        if lam[i] > 1e-13:
            active[i] = True
            n_unknown += 1
            n_eq += 1

    K = np.zeros((n_eq, n_unknown))
    rhs = np.zeros(n_eq)
    K[:n, :n] = Mr
    for a in range(n):
        rhs[a] = p[a]
    col = n
    row = n
    for j in range(k):
        if regime[j] == 0:
            for a in range(n):
                rhs[a] += G[j, 0, a] * fixed[j, 0] + G[j, 1, a] * fixed[j, 1]
        elif regime[j] == 1:
            for a in range(n):
                K[a, col] = -G[j, 0, a]
                K[a, col + 1] = -G[j, 1, a]
                K[row, a] = G[j, 0, a]
                K[row + 1, a] = G[j, 1, a]
            col += 2
            row += 2
        else:
            for a in range(n):
                rhs[a] += G[j, 0, a] * base[j, 0] + G[j, 1, a] * base[j, 1]
                K[a, col] = -(G[j, 0, a] * edge[j, 0] + G[j, 1, a] * edge[j, 1])
                K[row, a] = sgn[j, 0] * G[j, 0, a] - sgn[j, 1] * G[j, 1, a]
            col += 1
            row += 1
    for i in range(nc):
        if active[i]:
            for a in range(n):
                K[a, col] = -C[i, a]
                K[row, a] = C[i, a]
            rhs[row] = -c0[i]
            col += 1
            row += 1
    return K, rhs, regime, fixed, base, edge, sgn, active


@njit(cache=True)
def extract(z, K, rhs, regime, fixed, base, edge, sgn, active, Mr, G, h, C, c0, p):
    """Check a solution of `active_system` and map it back to ``(V, f, lam)``.

    Returns ``(code, V, f, lam)`` with code 0 on success; otherwise the code
    names the first failed check: 1 residual, 2 vertex cone, 3 stick
    impulse outside the diamond, 4 edge coordinate, 5 edge slip sign,
    6 negative multiplier, 7 penetrating pusher row.
    """
    k = G.shape[0]
    n = Mr.shape[0]
    nc = C.shape[0]
    n_eq = K.shape[0]
    V = z[:n].copy()
    f = np.zeros((k, 2))
    lam = np.zeros(nc)
    resid = K @ z - rhs
    scale = 1.0
    for a in range(n_eq):
        scale = max(scale, abs(rhs[a]))
    for a in range(n_eq):
        if abs(resid[a]) > 1e-10 * scale:
            return 1, V, f, lam

    Vn = z[:n].copy()
    fn = np.zeros((k, 2))
    lamn = np.zeros(nc)
    vscale = 1e-12
    for a in range(n):
        vscale = max(vscale, abs(Vn[a]))
    vtol = 1e-9 * vscale + 1e-14
    col = n
    for j in range(k):
        ux = 0.0
        uy = 0.0
        for a in range(n):
            ux += G[j, 0, a] * Vn[a]
            uy += G[j, 1, a] * Vn[a]
        if regime[j] == 0:
            fn[j, 0] = fixed[j, 0]
            fn[j, 1] = fixed[j, 1]
            if h[j] > 0.0:
                # motion must lie in the cone dual to the chosen vertex
                if fixed[j, 0] != 0.0:
                    along = -ux if fixed[j, 0] > 0.0 else ux
                    if along < abs(uy) - vtol:
                        return 2, V, f, lam
                else:
                    along = -uy if fixed[j, 1] > 0.0 else uy
                    if along < abs(ux) - vtol:
                        return 2, V, f, lam
        elif regime[j] == 1:
            fn[j, 0] = z[col]
            fn[j, 1] = z[col + 1]
            col += 2
            if abs(fn[j, 0]) + abs(fn[j, 1]) > h[j] * (1.0 + 1e-12):
                return 3, V, f, lam
        else:
            theta = z[col]
            col += 1
            if theta < -1e-9 or theta > 1.0 + 1e-9:
                return 4, V, f, lam
            theta = min(max(theta, 0.0), 1.0)
            fn[j, 0] = base[j, 0] + theta * edge[j, 0]
            fn[j, 1] = base[j, 1] + theta * edge[j, 1]
            if sgn[j, 0] * ux < -vtol:
                return 5, V, f, lam
    for i in range(nc):
        if active[i]:
            lamn[i] = z[col]
            col += 1
            if lamn[i] < -1e-12:
                return 6, V, f, lam
            lamn[i] = max(lamn[i], 0.0)
        else:
            a_i = c0[i]
            for a in range(n):
                a_i += C[i, a] * Vn[a]
            if a_i < -vtol:
                return 7, V, f, lam
    # V consistent with the (clamped) impulses
    w = p.copy()
    for j in range(k):
        for a in range(n):
            w[a] += G[j, 0, a] * fn[j, 0] + G[j, 1, a] * fn[j, 1]
    for i in range(nc):
        for a in range(n):
            w[a] += C[i, a] * lamn[i]
    Vn = np.linalg.solve(Mr, w)
    return 0, Vn, fn, lamn


@njit(cache=True)
def polish(Mr, G, h, C, c0, p, f, lam, V):
    """Exact solve on the active set read off an approximate solution.

    Returns ``(ok, V, f, lam)``; ``ok`` is False when the guessed active set
    does not reproduce a feasible complementary point.
    """
    K, rhs, regime, fixed, base, edge, sgn, active = active_system(Mr, G, h, C, c0, p, f, lam)
    z = np.linalg.lstsq(K, rhs)[0]
    code, Vn, fn, lamn = extract(z, K, rhs, regime, fixed, base, edge, sgn, active,
                                 Mr, G, h, C, c0, p)
    if code != 0:
        return False, V, f, lam
    return True, Vn, fn, lamn


@njit(cache=True)
def _vertex_point(L, G, h, C, p, lam_cap, d, F, LAM):
    """Linear minimization over the reachable impulse set along ``d``.

    Fills the per-cell diamond vertices ``F`` and pusher multipliers ``LAM``
    minimizing ``d . z`` and returns ``L^T z``.
    """
    k = G.shape[0]
    n = p.shape[0]
    nc = C.shape[0]
    z = p.copy()
    for j in range(k):
        ux = 0.0
        uy = 0.0
        for a in range(n):
            ux += G[j, 0, a] * d[a]
            uy += G[j, 1, a] * d[a]
        F[j, 0] = 0.0
        F[j, 1] = 0.0
        if abs(ux) >= abs(uy):
            F[j, 0] = -h[j] if ux > 0.0 else h[j]
        else:
            F[j, 1] = -h[j] if uy > 0.0 else h[j]
        for a in range(n):
            z[a] += G[j, 0, a] * F[j, 0] + G[j, 1, a] * F[j, 1]
    for i in range(nc):
        s = 0.0
        for a in range(n):
            s += C[i, a] * d[a]
        LAM[i] = lam_cap if s < 0.0 else 0.0
        for a in range(n):
            z[a] += C[i, a] * LAM[i]
    return L.T @ z


@njit(cache=True)
def min_norm_point(Minv, G, h, C, p, lam_cap, tol, max_iter):
    """Exact next twist by Wolfe's minimum-norm-point algorithm.

    The reduced problem (with zero pusher offsets) is the dual of finding
    the point of ``{p + sum_j G_j^T f_j + C^T lam}`` with the smallest
    ``Minv`` norm, over diamond impulses and ``0 <= lam <= lam_cap``.  The
    set is a polytope in three dimensions, so Wolfe's method terminates
    with at most four corral points; the impulses are the matching convex
    combination of vertex choices.  Returns ``(ok, V, f, lam, iterations)``.
    """
    k = G.shape[0]
    n = p.shape[0]
    nc = C.shape[0]
    L = np.linalg.cholesky(Minv)
    cap = n + 1
    Y = np.zeros((cap + 1, n))
    F = np.zeros((cap + 1, k, 2))
    LAM = np.zeros((cap + 1, nc))
    w = np.zeros(cap + 1)
    # stopping scale from the momentum and the friction polytope only; the
    # capped pusher vertices are far out and would loosen the test
    yp = L.T @ p
    reach = np.sqrt(yp @ yp)
    for j in range(k):
        gx = L.T @ G[j, 0]
        gy = L.T @ G[j, 1]
        reach += h[j] * max(np.sqrt(gx @ gx), np.sqrt(gy @ gy))
    big = reach * reach
    d = Minv @ p
    Y[0] = _vertex_point(L, G, h, C, p, lam_cap, d, F[0], LAM[0])
    w[0] = 1.0
    m = 1
    x = Y[0].copy()
    it = 0
    ok = False
    while it < max_iter:
        it += 1
        d = L @ x
        Fq = np.zeros((k, 2))
        Lq = np.zeros(nc)
        q = _vertex_point(L, G, h, C, p, lam_cap, d, Fq, Lq)
        if x @ x - x @ q <= tol * big:
            ok = True
            break
        if m > cap - 1:
            break
        Y[m] = q
        F[m] = Fq
        LAM[m] = Lq
        w[m] = 0.0
        m += 1
        while True:
            # affine minimizer of the corral
            K = np.zeros((m + 1, m + 1))
            r = np.zeros(m + 1)
            for a in range(m):
                for b in range(m):
                    K[a, b] = Y[a] @ Y[b]
                K[a, m] = 1.0
                K[m, a] = 1.0
            r[m] = 1.0
            alpha = np.linalg.lstsq(K, r)[0][:m]
            if alpha.min() > 1e-14:
                for a in range(m):
                    w[a] = alpha[a]
                break
            theta = 1.0
            for a in range(m):
                if alpha[a] <= 1e-14:
                    denom = w[a] - alpha[a]
                    if denom > 0.0:
                        theta = min(theta, w[a] / denom)
            for a in range(m):
                w[a] = theta * alpha[a] + (1.0 - theta) * w[a]
            # drop points whose weight vanished
            keep = 0
            for a in range(m):
                if w[a] > 1e-14:
                    Y[keep] = Y[a]
                    F[keep] = F[a]
                    LAM[keep] = LAM[a]
                    w[keep] = w[a]
                    keep += 1
            if keep == m:
                # no progress possible; drop the smallest weight
                small = 0
                for a in range(1, m):
                    if w[a] < w[small]:
                        small = a
                for a in range(small, m - 1):
                    Y[a] = Y[a + 1]
                    F[a] = F[a + 1]
                    LAM[a] = LAM[a + 1]
                    w[a] = w[a + 1]
                keep = m - 1
            m = keep
            total = 0.0
            for a in range(m):
                total += w[a]
            for a in range(m):
                w[a] /= total
        prev = x @ x
        x = np.zeros(n)
        for a in range(m):
            x += w[a] * Y[a]
        if x @ x >= prev:
            # rounding floor: no further descent possible
            break
    f = np.zeros((k, 2))
    lam = np.zeros(nc)
    for a in range(m):
        f += w[a] * F[a]
        lam += w[a] * LAM[a]
    z = p.copy()
    for j in range(k):
        for a in range(n):
            z[a] += G[j, 0, a] * f[j, 0] + G[j, 1, a] * f[j, 1]
    for i in range(nc):
        for a in range(n):
            z[a] += C[i, a] * lam[i]
        if lam[i] >= lam_cap * (1.0 - 1e-9):
            ok = False
    return ok, Minv @ z, f, lam, it
