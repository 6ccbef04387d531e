"""Compiled kernels for the nonlocal pair sums.

All double sums are organized as one row per outer node: each row is
accumulated sequentially by a single worker and the rows are combined
with an ordered numpy reduction, so results are bitwise reproducible for
a fixed grid regardless of thread count.  The all-pairs passes apply the
plain midpoint rule to every ordered pair; the near-diagonal correction
kernels subtract the midpoint value and add the subcell rule for pairs
inside the near radius (they run serially; at desk scale the all-pairs
pass dominates).

Kernel powers: Euclidean distances enter through g2 = |dx|^2 with
exponent (Q+ps)/2, Heisenberg through the fourth power of the
Koranyi gauge g4 = (dx^2+dy^2)^2 + 16 tau^2 with exponent (Q+ps)/4.
Common exponents get sqrt-based fast paths (kmode).
"""

import math

import numpy as np
from numba import njit, prange

KM_GENERIC = 0
KM_RECIP = 1      # exponent 1.0
KM_SQRT = 2       # exponent 0.5
KM_X_SQRT = 3     # exponent 1.5
KM_X_QROOT = 4    # exponent 1.25


def kernel_mode(exponent: float) -> int:
    if exponent == 1.0:
        return KM_RECIP
    if exponent == 0.5:
        return KM_SQRT
    if exponent == 1.5:
        return KM_X_SQRT
    if exponent == 1.25:
        return KM_X_QROOT
    return KM_GENERIC


@njit(inline="always")
def _kpow(g, e, mode):
    # returns g**(-e) for g > 0
    if mode == KM_RECIP:
        return 1.0 / g
    if mode == KM_SQRT:
        return 1.0 / math.sqrt(g)
    if mode == KM_X_SQRT:
        return 1.0 / (g * math.sqrt(g))
    if mode == KM_X_QROOT:
        return 1.0 / (g * math.sqrt(math.sqrt(g)))
    return g ** (-e)


@njit(inline="always")
def _ppow(d, p):
    # |d|**(p-2) * d, the signed (p-1)-power
    if p == 2.0:
        return d
    a = abs(d)
    if a == 0.0:
        return 0.0
    return a ** (p - 2.0) * d


@njit(inline="always")
def _papow(d, p):
    # |d|**p
    if p == 2.0:
        return d * d
    return abs(d) ** p


# ---------------------------------------------------------------------------
# Euclidean all-pairs passes (any dimension)
# ---------------------------------------------------------------------------

@njit(parallel=True, fastmath=True, cache=True)
def eu_allpairs_grad(coords, u, p, e2, kmode, vol):
    n, dim = coords.shape
    grad = np.empty(n)
    rows = np.empty(n)
    v2 = vol * vol
    for i in prange(n):
        acc_g = 0.0
        acc_s = 0.0
        for j in range(n):
            if j == i:
                continue
            g2 = 0.0
            for a in range(dim):
                dxa = coords[i, a] - coords[j, a]
                g2 += dxa * dxa
            k = _kpow(g2, e2, kmode)
            d = u[i] - u[j]
            acc_g += _ppow(d, p) * k
            acc_s += _papow(d, p) * k
        grad[i] = 2.0 * p * v2 * acc_g
        rows[i] = v2 * acc_s
    return grad, rows


@njit(parallel=True, fastmath=True, cache=True)
def eu_allpairs_pairing(coords, u, v, p, e2, kmode, vol):
    n, dim = coords.shape
    rows_p = np.empty(n)
    rows_su = np.empty(n)
    rows_sv = np.empty(n)
    v2 = vol * vol
    for i in prange(n):
        acc_p = 0.0
        acc_su = 0.0
        acc_sv = 0.0
        for j in range(n):
            if j == i:
                continue
            g2 = 0.0
            for a in range(dim):
                dxa = coords[i, a] - coords[j, a]
                g2 += dxa * dxa
            k = _kpow(g2, e2, kmode)
            du = u[i] - u[j]
            dv = v[i] - v[j]
            acc_p += _ppow(du, p) * dv * k
            acc_su += _papow(du, p) * k
            acc_sv += _papow(dv, p) * k
        rows_p[i] = v2 * acc_p
        rows_su[i] = v2 * acc_su
        rows_sv[i] = v2 * acc_sv
    return rows_p, rows_su, rows_sv


@njit(parallel=True, fastmath=True, cache=True)
def eu_allpairs_sem(coords, u, p, e2, kmode, vol):
    n, dim = coords.shape
    rows = np.empty(n)
    v2 = vol * vol
    for i in prange(n):
        acc = 0.0
        for j in range(n):
            if j == i:
                continue
            g2 = 0.0
            for a in range(dim):
                dxa = coords[i, a] - coords[j, a]
                g2 += dxa * dxa
            acc += _papow(u[i] - u[j], p) * _kpow(g2, e2, kmode)
        rows[i] = v2 * acc
    return rows


@njit(parallel=True, fastmath=True, cache=True)
def eu_allpairs_rowsum(coords, e2, kmode, vol):
    n, dim = coords.shape
    rows = np.empty(n)
    v2 = vol * vol
    for i in prange(n):
        acc = 0.0
        for j in range(n):
            if j == i:
                continue
            g2 = 0.0
            for a in range(dim):
                dxa = coords[i, a] - coords[j, a]
                g2 += dxa * dxa
            acc += _kpow(g2, e2, kmode)
        rows[i] = v2 * acc
    return rows


# ---------------------------------------------------------------------------
# Heisenberg all-pairs passes (coordinates split for vectorization)
# ---------------------------------------------------------------------------

@njit(parallel=True, fastmath=True, cache=True)
def h1_allpairs_grad(cx, cy, ct, u, p, e4, kmode, vol):
    n = cx.shape[0]
    grad = np.empty(n)
    rows = np.empty(n)
    v2 = vol * vol
    for i in prange(n):
        xi = cx[i]
        yi = cy[i]
        ti = ct[i]
        ui = u[i]
        acc_g = 0.0
        acc_s = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = xi - cx[j]
            dy = yi - cy[j]
            tau = ti - ct[j] + 0.5 * (xi * cy[j] - yi * cx[j])
            rho2 = dx * dx + dy * dy
            g4 = rho2 * rho2 + 16.0 * tau * tau
            k = _kpow(g4, e4, kmode)
            d = ui - u[j]
            acc_g += _ppow(d, p) * k
            acc_s += _papow(d, p) * k
        grad[i] = 2.0 * p * v2 * acc_g
        rows[i] = v2 * acc_s
    return grad, rows


@njit(parallel=True, fastmath=True, cache=True)
def h1_allpairs_pairing(cx, cy, ct, u, v, p, e4, kmode, vol):
    n = cx.shape[0]
    rows_p = np.empty(n)
    rows_su = np.empty(n)
    rows_sv = np.empty(n)
    v2 = vol * vol
    for i in prange(n):
        xi = cx[i]
        yi = cy[i]
        ti = ct[i]
        acc_p = 0.0
        acc_su = 0.0
        acc_sv = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = xi - cx[j]
            dy = yi - cy[j]
            tau = ti - ct[j] + 0.5 * (xi * cy[j] - yi * cx[j])
            rho2 = dx * dx + dy * dy
            g4 = rho2 * rho2 + 16.0 * tau * tau
            k = _kpow(g4, e4, kmode)
            du = u[i] - u[j]
            dv = v[i] - v[j]
            acc_p += _ppow(du, p) * dv * k
            acc_su += _papow(du, p) * k
            acc_sv += _papow(dv, p) * k
        rows_p[i] = v2 * acc_p
        rows_su[i] = v2 * acc_su
        rows_sv[i] = v2 * acc_sv
    return rows_p, rows_su, rows_sv


@njit(parallel=True, fastmath=True, cache=True)
def h1_allpairs_sem(cx, cy, ct, u, p, e4, kmode, vol):
    n = cx.shape[0]
    rows = np.empty(n)
    v2 = vol * vol
    for i in prange(n):
        xi = cx[i]
        yi = cy[i]
        ti = ct[i]
        ui = u[i]
        acc = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = xi - cx[j]
            dy = yi - cy[j]
            tau = ti - ct[j] + 0.5 * (xi * cy[j] - yi * cx[j])
            rho2 = dx * dx + dy * dy
            g4 = rho2 * rho2 + 16.0 * tau * tau
            acc += _papow(ui - u[j], p) * _kpow(g4, e4, kmode)
        rows[i] = v2 * acc
    return rows


@njit(parallel=True, fastmath=True, cache=True)
def h1_allpairs_rowsum(cx, cy, ct, e4, kmode, vol):
    n = cx.shape[0]
    rows = np.empty(n)
    v2 = vol * vol
    for i in prange(n):
        xi = cx[i]
        yi = cy[i]
        ti = ct[i]
        acc = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = xi - cx[j]
            dy = yi - cy[j]
            tau = ti - ct[j] + 0.5 * (xi * cy[j] - yi * cx[j])
            rho2 = dx * dx + dy * dy
            g4 = rho2 * rho2 + 16.0 * tau * tau
            acc += _kpow(g4, e4, kmode)
        rows[i] = v2 * acc
    return rows


# ---------------------------------------------------------------------------
# Gauge distance helpers shared by the near and exterior kernels
# ---------------------------------------------------------------------------

@njit(inline="always")
def _kernel_at(group, e, kmode, x0, x1, x2, y0, y1, y2, dim):
    """dist(x, y)**-(Q+ps) for points given componentwise (unused trailing
    components are zero).  group 0 euclid (e = (Q+ps)/2 on g2),
    group 1 heisenberg (e = (Q+ps)/4 on g4)."""
    if group == 1:
        dx = x0 - y0
        dy = x1 - y1
        tau = x2 - y2 + 0.5 * (x0 * y1 - x1 * y0)
        rho2 = dx * dx + dy * dy
        g4 = rho2 * rho2 + 16.0 * tau * tau
        return _kpow(g4, e, kmode)
    g2 = 0.0
    if dim >= 1:
        d = x0 - y0
        g2 += d * d
    if dim >= 2:
        d = x1 - y1
        g2 += d * d
    if dim >= 3:
        d = x2 - y2
        g2 += d * d
    return _kpow(g2, e, kmode)


# ---------------------------------------------------------------------------
# Near-pair list (ordered pairs with gauge distance <= radius, incl. i == j)
# ---------------------------------------------------------------------------

@njit(cache=True)
def near_pairs(coords, multi, dims, group, radius, win):
    """CSR near list via per-axis index windows.

    multi is the (n, dim) integer multi-index of each node, win the
    per-axis half window sizes guaranteed to cover the gauge ball.
    """
    n, dim = coords.shape
    strides = np.empty(dim, np.int64)
    st = 1
    for a in range(dim - 1, -1, -1):
        strides[a] = st
        st *= dims[a]
    counts = np.zeros(n, np.int64)
    r4 = radius ** 4
    r2 = radius * radius
    for phase in range(2):
        if phase == 1:
            indptr = np.zeros(n + 1, np.int64)
            for i in range(n):
                indptr[i + 1] = indptr[i] + counts[i]
            indices = np.empty(indptr[n], np.int64)
            fill = indptr[:-1].copy()
        for i in range(n):
            cnt = 0
            # odometer over the index window
            lo0 = max(multi[i, 0] - win[0], 0)
            hi0 = min(multi[i, 0] + win[0], dims[0] - 1)
            if dim == 1:
                for j0 in range(lo0, hi0 + 1):
                    j = j0
                    d = coords[i, 0] - coords[j, 0]
                    if d * d <= r2:
                        if phase == 0:
                            cnt += 1
                        else:
                            indices[fill[i]] = j
                            fill[i] += 1
            elif dim == 2:
                lo1 = max(multi[i, 1] - win[1], 0)
                hi1 = min(multi[i, 1] + win[1], dims[1] - 1)
                for j0 in range(lo0, hi0 + 1):
                    for j1 in range(lo1, hi1 + 1):
                        j = j0 * strides[0] + j1
                        dx = coords[i, 0] - coords[j, 0]
                        dy = coords[i, 1] - coords[j, 1]
                        if dx * dx + dy * dy <= r2:
                            if phase == 0:
                                cnt += 1
                            else:
                                indices[fill[i]] = j
                                fill[i] += 1
            else:
                lo1 = max(multi[i, 1] - win[1], 0)
                hi1 = min(multi[i, 1] + win[1], dims[1] - 1)
                lo2 = max(multi[i, 2] - win[2], 0)
                hi2 = min(multi[i, 2] + win[2], dims[2] - 1)
                for j0 in range(lo0, hi0 + 1):
                    for j1 in range(lo1, hi1 + 1):
                        for j2 in range(lo2, hi2 + 1):
                            j = j0 * strides[0] + j1 * strides[1] + j2
                            dx = coords[i, 0] - coords[j, 0]
                            dy = coords[i, 1] - coords[j, 1]
                            dz = coords[i, 2] - coords[j, 2]
                            if group == 1:
                                tau = dz + 0.5 * (coords[i, 0] * coords[j, 1]
                                                  - coords[i, 1] * coords[j, 0])
                                rho2 = dx * dx + dy * dy
                                if rho2 * rho2 + 16.0 * tau * tau <= r4:
                                    if phase == 0:
                                        cnt += 1
                                    else:
                                        indices[fill[i]] = j
                                        fill[i] += 1
                            else:
                                if dx * dx + dy * dy + dz * dz <= r2:
                                    if phase == 0:
                                        cnt += 1
                                    else:
                                        indices[fill[i]] = j
                                        fill[i] += 1
            if phase == 0:
                counts[i] = cnt
    return indptr, indices


# ---------------------------------------------------------------------------
# Near-diagonal correction kernels
#
# For each ordered near pair (i, j) they subtract the midpoint value (i != j)
# and add the subcell rule: 4**dim midpoints of the subcells of cell j, with
# u multilinearly interpolated (clamped pair + extrapolation at the walls).
# sub_d0/sub_ofh give, per subpoint and axis, the unclamped lower-node offset
# and the fractional position in index units.
# ---------------------------------------------------------------------------

@njit(cache=True)
def near_sem(coords, u, indptr, indices, multi, dims, strides,
             sub_off, sub_d0, sub_ofh, group, p, e, kmode, vol):
    n, dim = coords.shape
    nsub = sub_off.shape[0]
    subvol = vol / nsub
    mid_tot = 0.0
    sub_tot = 0.0
    for i in range(n):
        xi0 = coords[i, 0]
        xi1 = coords[i, 1] if dim > 1 else 0.0
        xi2 = coords[i, 2] if dim > 2 else 0.0
        ui = u[i]
        for ptr in range(indptr[i], indptr[i + 1]):
            j = indices[ptr]
            y0 = coords[j, 0]
            y1 = coords[j, 1] if dim > 1 else 0.0
            y2 = coords[j, 2] if dim > 2 else 0.0
            if j != i:
                k = _kernel_at(group, e, kmode, xi0, xi1, xi2, y0, y1, y2, dim)
                mid_tot += _papow(ui - u[j], p) * k * vol * vol
            for sidx in range(nsub):
                z0 = y0 + sub_off[sidx, 0]
                z1 = y1 + (sub_off[sidx, 1] if dim > 1 else 0.0)
                z2 = y2 + (sub_off[sidx, 2] if dim > 2 else 0.0)
                k = _kernel_at(group, e, kmode, xi0, xi1, xi2, z0, z1, z2, dim)
                uz = _interp_at(u, multi, dims, strides, j, sub_d0, sub_ofh, sidx, dim)
                sub_tot += _papow(ui - uz, p) * k * vol * subvol
    return mid_tot, sub_tot


@njit(inline="always")
def _interp_at(u, multi, dims, strides, j, sub_d0, sub_ofh, sidx, dim):
    # multilinear value of u at subpoint sidx of cell j
    lo0 = multi[j, 0] + sub_d0[sidx, 0]
    if lo0 < 0:
        lo0 = 0
    elif lo0 > dims[0] - 2:
        lo0 = dims[0] - 2
    t0 = multi[j, 0] + sub_ofh[sidx, 0] - lo0
    if dim == 1:
        b = lo0
        return (1.0 - t0) * u[b] + t0 * u[b + 1]
    lo1 = multi[j, 1] + sub_d0[sidx, 1]
    if lo1 < 0:
        lo1 = 0
    elif lo1 > dims[1] - 2:
        lo1 = dims[1] - 2
    t1 = multi[j, 1] + sub_ofh[sidx, 1] - lo1
    if dim == 2:
        b = lo0 * strides[0] + lo1
        return ((1.0 - t0) * ((1.0 - t1) * u[b] + t1 * u[b + 1])
                + t0 * ((1.0 - t1) * u[b + strides[0]] + t1 * u[b + strides[0] + 1]))
    lo2 = multi[j, 2] + sub_d0[sidx, 2]
    if lo2 < 0:
        lo2 = 0
    elif lo2 > dims[2] - 2:
        lo2 = dims[2] - 2
    t2 = multi[j, 2] + sub_ofh[sidx, 2] - lo2
    b = lo0 * strides[0] + lo1 * strides[1] + lo2
    s0 = strides[0]
    s1 = strides[1]
    c00 = (1.0 - t2) * u[b] + t2 * u[b + 1]
    c01 = (1.0 - t2) * u[b + s1] + t2 * u[b + s1 + 1]
    c10 = (1.0 - t2) * u[b + s0] + t2 * u[b + s0 + 1]
    c11 = (1.0 - t2) * u[b + s0 + s1] + t2 * u[b + s0 + s1 + 1]
    return ((1.0 - t0) * ((1.0 - t1) * c00 + t1 * c01)
            + t0 * ((1.0 - t1) * c10 + t1 * c11))


@njit(inline="always")
def _scatter_interp(out, f, multi, dims, strides, j, sub_d0, sub_ofh, sidx, dim):
    # out[m] -= f * (interpolation weight of node m at the subpoint)
    lo0 = multi[j, 0] + sub_d0[sidx, 0]
    if lo0 < 0:
        lo0 = 0
    elif lo0 > dims[0] - 2:
        lo0 = dims[0] - 2
    t0 = multi[j, 0] + sub_ofh[sidx, 0] - lo0
    if dim == 1:
        out[lo0] -= f * (1.0 - t0)
        out[lo0 + 1] -= f * t0
        return
    lo1 = multi[j, 1] + sub_d0[sidx, 1]
    if lo1 < 0:
        lo1 = 0
    elif lo1 > dims[1] - 2:
        lo1 = dims[1] - 2
    t1 = multi[j, 1] + sub_ofh[sidx, 1] - lo1
    if dim == 2:
        b = lo0 * strides[0] + lo1
        out[b] -= f * (1.0 - t0) * (1.0 - t1)
        out[b + 1] -= f * (1.0 - t0) * t1
        out[b + strides[0]] -= f * t0 * (1.0 - t1)
        out[b + strides[0] + 1] -= f * t0 * t1
        return
    lo2 = multi[j, 2] + sub_d0[sidx, 2]
    if lo2 < 0:
        lo2 = 0
    elif lo2 > dims[2] - 2:
        lo2 = dims[2] - 2
    t2 = multi[j, 2] + sub_ofh[sidx, 2] - lo2
    b = lo0 * strides[0] + lo1 * strides[1] + lo2
    s0 = strides[0]
    s1 = strides[1]
    out[b] -= f * (1.0 - t0) * (1.0 - t1) * (1.0 - t2)
    out[b + 1] -= f * (1.0 - t0) * (1.0 - t1) * t2
    out[b + s1] -= f * (1.0 - t0) * t1 * (1.0 - t2)
    out[b + s1 + 1] -= f * (1.0 - t0) * t1 * t2
    out[b + s0] -= f * t0 * (1.0 - t1) * (1.0 - t2)
    out[b + s0 + 1] -= f * t0 * (1.0 - t1) * t2
    out[b + s0 + s1] -= f * t0 * t1 * (1.0 - t2)
    out[b + s0 + s1 + 1] -= f * t0 * t1 * t2


@njit(cache=True)
def near_grad(coords, u, indptr, indices, multi, dims, strides,
              sub_off, sub_d0, sub_ofh, group, p, e, kmode, vol):
    """Gradient correction plus (mid, sub) seminorm parts.

    For the midpoint subtraction only the d/du_i slot of each ordered
    pair is handled here; the mirrored pair covers the other slot.
    """
    n, dim = coords.shape
    nsub = sub_off.shape[0]
    subvol = vol / nsub
    gcorr = np.zeros(n)
    mid_tot = 0.0
    sub_tot = 0.0
    v2 = vol * vol
    for i in range(n):
        xi0 = coords[i, 0]
        xi1 = coords[i, 1] if dim > 1 else 0.0
        xi2 = coords[i, 2] if dim > 2 else 0.0
        ui = u[i]
        for ptr in range(indptr[i], indptr[i + 1]):
            j = indices[ptr]
            y0 = coords[j, 0]
            y1 = coords[j, 1] if dim > 1 else 0.0
            y2 = coords[j, 2] if dim > 2 else 0.0
            if j != i:
                k = _kernel_at(group, e, kmode, xi0, xi1, xi2, y0, y1, y2, dim)
                d = ui - u[j]
                gcorr[i] -= 2.0 * p * _ppow(d, p) * k * v2
                mid_tot += _papow(d, p) * k * v2
            for sidx in range(nsub):
                z0 = y0 + sub_off[sidx, 0]
                z1 = y1 + (sub_off[sidx, 1] if dim > 1 else 0.0)
                z2 = y2 + (sub_off[sidx, 2] if dim > 2 else 0.0)
                k = _kernel_at(group, e, kmode, xi0, xi1, xi2, z0, z1, z2, dim)
                uz = _interp_at(u, multi, dims, strides, j, sub_d0, sub_ofh, sidx, dim)
                d = ui - uz
                w = k * vol * subvol
                sub_tot += _papow(d, p) * w
                f = p * _ppow(d, p) * w
                gcorr[i] += f
                _scatter_interp(gcorr, f, multi, dims, strides, j,
                                sub_d0, sub_ofh, sidx, dim)
    return gcorr, mid_tot, sub_tot


@njit(cache=True)
def near_pairing(coords, u, v, indptr, indices, multi, dims, strides,
                 sub_off, sub_d0, sub_ofh, group, p, e, kmode, vol):
    n, dim = coords.shape
    nsub = sub_off.shape[0]
    subvol = vol / nsub
    mid_p = 0.0
    sub_p = 0.0
    mid_su = 0.0
    sub_su = 0.0
    mid_sv = 0.0
    sub_sv = 0.0
    v2 = vol * vol
    for i in range(n):
        xi0 = coords[i, 0]
        xi1 = coords[i, 1] if dim > 1 else 0.0
        xi2 = coords[i, 2] if dim > 2 else 0.0
        for ptr in range(indptr[i], indptr[i + 1]):
            j = indices[ptr]
            y0 = coords[j, 0]
            y1 = coords[j, 1] if dim > 1 else 0.0
            y2 = coords[j, 2] if dim > 2 else 0.0
            if j != i:
                k = _kernel_at(group, e, kmode, xi0, xi1, xi2, y0, y1, y2, dim)
                du = u[i] - u[j]
                dv = v[i] - v[j]
                mid_p += _ppow(du, p) * dv * k * v2
                mid_su += _papow(du, p) * k * v2
                mid_sv += _papow(dv, p) * k * v2
            for sidx in range(nsub):
                z0 = y0 + sub_off[sidx, 0]
                z1 = y1 + (sub_off[sidx, 1] if dim > 1 else 0.0)
                z2 = y2 + (sub_off[sidx, 2] if dim > 2 else 0.0)
                k = _kernel_at(group, e, kmode, xi0, xi1, xi2, z0, z1, z2, dim)
                uz = _interp_at(u, multi, dims, strides, j, sub_d0, sub_ofh, sidx, dim)
                vz = _interp_at(v, multi, dims, strides, j, sub_d0, sub_ofh, sidx, dim)
                du = u[i] - uz
                dv = v[i] - vz
                w = k * vol * subvol
                sub_p += _ppow(du, p) * dv * w
                sub_su += _papow(du, p) * w
                sub_sv += _papow(dv, p) * w
    return mid_p, sub_p, mid_su, sub_su, mid_sv, sub_sv


# ---------------------------------------------------------------------------
# Reference oracle: plain double loop over ordered pairs in index order,
# recomputing every quantity inline.  Small grids only.
# ---------------------------------------------------------------------------

@njit(cache=True)
def oracle_sum(coords, u, w_ext, multi, dims, strides, sub_off, sub_d0, sub_ofh,
               group, p, qps, near_radius, vol):
    n, dim = coords.shape
    nsub = sub_off.shape[0]
    subvol = vol / nsub
    total = 0.0
    for i in range(n):
        for j in range(n):
            # gauge distance, written out directly
            if group == 1:
                dx = coords[i, 0] - coords[j, 0]
                dy = coords[i, 1] - coords[j, 1]
                tau = (coords[i, 2] - coords[j, 2]
                       + 0.5 * (coords[i, 0] * coords[j, 1] - coords[i, 1] * coords[j, 0]))
                dist = ((dx * dx + dy * dy) ** 2 + 16.0 * tau * tau) ** 0.25
            else:
                g2 = 0.0
                for a in range(dim):
                    d = coords[i, a] - coords[j, a]
                    g2 += d * d
                dist = math.sqrt(g2)
            if dist <= near_radius:
                for sidx in range(nsub):
                    z0 = coords[j, 0] + sub_off[sidx, 0]
                    z1 = (coords[j, 1] + sub_off[sidx, 1]) if dim > 1 else 0.0
                    z2 = (coords[j, 2] + sub_off[sidx, 2]) if dim > 2 else 0.0
                    if group == 1:
                        dx = coords[i, 0] - z0
                        dy = coords[i, 1] - z1
                        tau = coords[i, 2] - z2 + 0.5 * (coords[i, 0] * z1 - coords[i, 1] * z0)
                        dsub = ((dx * dx + dy * dy) ** 2 + 16.0 * tau * tau) ** 0.25
                    else:
                        g2 = 0.0
                        d = coords[i, 0] - z0
                        g2 += d * d
                        if dim > 1:
                            d = coords[i, 1] - z1
                            g2 += d * d
                        if dim > 2:
                            d = coords[i, 2] - z2
                            g2 += d * d
                        dsub = math.sqrt(g2)
                    uz = _interp_at(u, multi, dims, strides, j, sub_d0, sub_ofh, sidx, dim)
                    total += abs(u[i] - uz) ** p * dsub ** (-qps) * vol * subvol
            elif j != i:
                total += abs(u[i] - u[j]) ** p * dist ** (-qps) * vol * vol
        total += 2.0 * abs(u[i]) ** p * w_ext[i] * vol
    return total


# ---------------------------------------------------------------------------
# Exterior weights: per node, graded product quadrature over the 2*dim slab
# regions of the box complement, truncated at the shell radius; the tail
# beyond the shell is added analytically by the caller.
# ---------------------------------------------------------------------------

@njit(inline="always")
def _fill_panels(lo, hi, anchor, w0, gamma, mids, wids):
    """Geometrically graded panels covering [lo, hi], graded away from the
    anchor (clamped into the interval).  Returns the panel count."""
    cnt = 0
    a = min(max(anchor, lo), hi)
    # right of the anchor
    pos = a
    w = w0
    while pos < hi and cnt < mids.shape[0]:
        nxt = min(pos + w, hi)
        mids[cnt] = 0.5 * (pos + nxt)
        wids[cnt] = nxt - pos
        cnt += 1
        pos = nxt
        w *= gamma
    # left of the anchor
    pos = a
    w = w0
    while pos > lo and cnt < mids.shape[0]:
        nxt = max(pos - w, lo)
        mids[cnt] = 0.5 * (pos + nxt)
        wids[cnt] = pos - nxt
        cnt += 1
        pos = nxt
        w *= gamma
    return cnt


@njit(parallel=True, cache=True)
def exterior_weights_kernel(coords, half_widths, extents, group, qps, e, kmode,
                            r_shell, w0_frac, gamma, ngauss, gx, gw, max_panels):
    """w[i] = integral of dist(x_i, y)**-(Q+ps) over the part of the box
    complement within gauge distance r_shell of x_i."""
    n, dim = coords.shape
    out = np.zeros(n)
    kmin = r_shell ** (-qps)
    for i in prange(n):
        acc = 0.0
        m0 = np.empty(max_panels)
        w0a = np.empty(max_panels)
        m1 = np.empty(max_panels)
        w1a = np.empty(max_panels)
        m2 = np.empty(max_panels)
        w2a = np.empty(max_panels)
        for axis in range(dim):
            for side in range(2):
                # ray along `axis`, constrained axes b < axis, free b > axis
                la = half_widths[axis]
                xa = coords[i, axis]
                if side == 0:
                    rlo, rhi = la, xa + extents[axis]
                    anchor = la
                    gap = la - xa
                else:
                    rlo, rhi = xa - extents[axis], -la
                    anchor = -la
                    gap = la + xa
                if rhi <= rlo:
                    continue
                w0 = max(gap, 1e-12) * w0_frac
                # panel sets for each coordinate; ray axis graded from the wall
                n_ax = np.zeros(3, np.int64)
                for a in range(dim):
                    if a == axis:
                        lo, hi, anc = rlo, rhi, anchor
                    elif a < axis:
                        lo, hi, anc = -half_widths[a], half_widths[a], coords[i, a]
                    else:
                        lo = coords[i, a] - extents[a]
                        hi = coords[i, a] + extents[a]
                        anc = coords[i, a]
                    if a == 0:
                        n_ax[0] = _fill_panels(lo, hi, anc, w0, gamma, m0, w0a)
                    elif a == 1:
                        n_ax[1] = _fill_panels(lo, hi, anc, w0, gamma, m1, w1a)
                    else:
                        n_ax[2] = _fill_panels(lo, hi, anc, w0, gamma, m2, w2a)
                # tensor loop with per-panel Gauss points
                if dim == 1:
                    for i0 in range(n_ax[0]):
                        for q0 in range(ngauss):
                            y0 = m0[i0] + 0.5 * w0a[i0] * gx[q0]
                            wq = 0.5 * w0a[i0] * gw[q0]
                            k = _kernel_at(group, e, kmode, coords[i, 0], 0.0, 0.0,
                                           y0, 0.0, 0.0, dim)
                            if k >= kmin:
                                acc += k * wq
                elif dim == 2:
                    for i0 in range(n_ax[0]):
                        for q0 in range(ngauss):
                            y0 = m0[i0] + 0.5 * w0a[i0] * gx[q0]
                            wq0 = 0.5 * w0a[i0] * gw[q0]
                            for i1 in range(n_ax[1]):
                                for q1 in range(ngauss):
                                    y1 = m1[i1] + 0.5 * w1a[i1] * gx[q1]
                                    wq1 = 0.5 * w1a[i1] * gw[q1]
                                    k = _kernel_at(group, e, kmode, coords[i, 0],
                                                   coords[i, 1], 0.0, y0, y1, 0.0, dim)
                                    if k >= kmin:
                                        acc += k * wq0 * wq1
                else:
                    for i0 in range(n_ax[0]):
                        for q0 in range(ngauss):
                            y0 = m0[i0] + 0.5 * w0a[i0] * gx[q0]
                            wq0 = 0.5 * w0a[i0] * gw[q0]
                            for i1 in range(n_ax[1]):
                                for q1 in range(ngauss):
                                    y1 = m1[i1] + 0.5 * w1a[i1] * gx[q1]
                                    wq1 = 0.5 * w1a[i1] * gw[q1]
                                    for i2 in range(n_ax[2]):
                                        for q2 in range(ngauss):
                                            y2 = m2[i2] + 0.5 * w2a[i2] * gx[q2]
                                            wq2 = 0.5 * w2a[i2] * gw[q2]
                                            k = _kernel_at(group, e, kmode,
                                                           coords[i, 0], coords[i, 1],
                                                           coords[i, 2], y0, y1, y2, dim)
                                            if k >= kmin:
                                                acc += k * wq0 * wq1 * wq2
        out[i] = acc
    return out
