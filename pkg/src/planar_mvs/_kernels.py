"""Compiled per-pixel kernels for the PatchMatch engine.

Every routine here mirrors a scalar reference in :mod:`planar_mvs.photometric`,
:mod:`planar_mvs.prior`, :mod:`planar_mvs.geomcons` or
:mod:`planar_mvs.geometry`; the test-suite checks them against each other.

Random numbers come from a counter-based hash (splitmix64) keyed by
``(stream, pixel, draw)``, so results do not depend on thread scheduling.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

MODE_PHOTO = 0
MODE_PRIOR = 1
MODE_GEO = 2

# params vector layout
P_DMIN = 0
P_DMAX = 1
P_SIGMA = 2
P_ETA = 3
P_ALPHA = 4
P_GAMMA = 5
P_LAMBDA_D = 6
P_LAMBDA_N = 7
P_LAMBDA_GEO = 8
P_TAU_GEO = 9
P_TOPK = 10
P_DEPTH_PERTURB = 11
P_NORMAL_PERTURB = 12
N_PARAMS = 13

MAX_COST = 2.0
VAR_EPS = 1e-10
VIS_THRESHOLD = 0.2
FACING_EPS = 1e-6
MAX_CAND = 9
N_REFINE = 6

# Checkerboard sampling regions as (dx, dy); every offset has odd dx + dy so
# it always addresses the opposite color.
_NEAR = [
    [(0, -1), (-1, -2), (1, -2)],
    [(0, 1), (-1, 2), (1, 2)],
    [(-1, 0), (-2, -1), (-2, 1)],
    [(1, 0), (2, -1), (2, 1)],
]
_FAR_STEPS = list(range(3, 24, 2))
_FAR_DIRS = [(0, -1), (0, 1), (-1, 0), (1, 0)]


def _region_table() -> tuple[np.ndarray, np.ndarray]:
    offs = []
    starts = [0]
    for region in _NEAR:
        offs.extend(region)
        starts.append(len(offs))
    for dx, dy in _FAR_DIRS:
        offs.extend((dx * s, dy * s) for s in _FAR_STEPS)
        starts.append(len(offs))
    return np.array(offs, dtype=np.int64), np.array(starts, dtype=np.int64)


REGION_OFFSETS, REGION_STARTS = _region_table()
NEIGHBOR4 = np.array([(0, -1), (0, 1), (-1, 0), (1, 0)], dtype=np.int64)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def splitmix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def pixel_key(stream, index):
    return splitmix64(stream ^ splitmix64(np.uint64(index) + np.uint64(1)))


@njit(cache=True)
def uniform01(key, counter):
    z = splitmix64(key + np.uint64(counter) * _GOLDEN)
    return float(z >> _S11) * _INV53


# --- small geometric helpers ---------------------------------------------------

@njit(cache=True)
def _ray(Kinv, x, y, out):
    out[0] = Kinv[0, 0] * x + Kinv[0, 1] * y + Kinv[0, 2]
    out[1] = Kinv[1, 0] * x + Kinv[1, 1] * y + Kinv[1, 2]
    out[2] = 1.0


@njit(cache=True)
def _unit_dot(n, r):
    rn = math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    return (n[0] * r[0] + n[1] * r[1] + n[2] * r[2]) / rn


@njit(cache=True)
def random_normal(key, counter, ray, out):
    """Uniform direction on the hemisphere facing the camera along ``ray``."""
    z = 2.0 * uniform01(key, counter) - 1.0
    phi = 2.0 * math.pi * uniform01(key, counter + 1)
    s = math.sqrt(max(0.0, 1.0 - z * z))
    out[0] = s * math.cos(phi)
    out[1] = s * math.sin(phi)
    out[2] = z
    if _unit_dot(out, ray) > 0.0:
        out[0] = -out[0]
        out[1] = -out[1]
        out[2] = -out[2]
    _make_facing(out, ray)


@njit(cache=True)
def _make_facing(n, ray):
    rn = math.sqrt(ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2])
    c = (n[0] * ray[0] + n[1] * ray[1] + n[2] * ray[2]) / rn
    if c > -FACING_EPS:
        # reflect across the plane orthogonal to the ray, then nudge toward -ray
        k = 2.0 * c / rn
        for a in range(3):
            n[a] -= k * ray[a]
        for a in range(3):
            n[a] -= 2.0 * FACING_EPS * ray[a] / rn
        nn = math.sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
        for a in range(3):
            n[a] /= nn


@njit(cache=True)
def perturb_normal(key, counter, n, max_angle, ray, out):
    """Random rotation of ``n`` by at most ``max_angle`` radians, kept camera-facing."""
    ang = max_angle * uniform01(key, counter)
    psi = 2.0 * math.pi * uniform01(key, counter + 1)
    if abs(n[0]) < 0.9:
        hx, hy, hz = 1.0, 0.0, 0.0
    else:
        hx, hy, hz = 0.0, 1.0, 0.0
    b1x = hy * n[2] - hz * n[1]
    b1y = hz * n[0] - hx * n[2]
    b1z = hx * n[1] - hy * n[0]
    bn = math.sqrt(b1x * b1x + b1y * b1y + b1z * b1z)
    b1x /= bn
    b1y /= bn
    b1z /= bn
    b2x = n[1] * b1z - n[2] * b1y
    b2y = n[2] * b1x - n[0] * b1z
    b2z = n[0] * b1y - n[1] * b1x
    c, s = math.cos(ang), math.sin(ang)
    cp, sp = math.cos(psi), math.sin(psi)
    out[0] = c * n[0] + s * (cp * b1x + sp * b2x)
    out[1] = c * n[1] + s * (cp * b1y + sp * b2y)
    out[2] = c * n[2] + s * (cp * b1z + sp * b2z)
    nn = math.sqrt(out[0] * out[0] + out[1] * out[1] + out[2] * out[2])
    for a in range(3):
        out[a] /= nn
    _make_facing(out, ray)


@njit(cache=True)
def transfer_depth(dq, nq, ray_q, ray_p):
    """Depth at pixel p of the plane through ``dq * ray_q`` with normal ``nq``; -1 if invalid."""
    dist = -dq * (nq[0] * ray_q[0] + nq[1] * ray_q[1] + nq[2] * ray_q[2])
    denom = nq[0] * ray_p[0] + nq[1] * ray_p[1] + nq[2] * ray_p[2]
    if denom >= -1e-12:
        return -1.0
    return -dist / denom


# --- photometric ----------------------------------------------------------------

@njit(cache=True)
def _homography(M1, v, Kinv, d, n, ray_p, H):
    """``H = M1 - v u^T / dist`` with ``u = K_ref^-T n``; ``M1 = K_s R_rel K_r^-1``, ``v = K_s t_rel``."""
    dist = -d * (n[0] * ray_p[0] + n[1] * ray_p[1] + n[2] * ray_p[2])
    u0 = n[0] * Kinv[0, 0] + n[1] * Kinv[1, 0] + n[2] * Kinv[2, 0]
    u1 = n[0] * Kinv[0, 1] + n[1] * Kinv[1, 1] + n[2] * Kinv[2, 1]
    u2 = n[0] * Kinv[0, 2] + n[1] * Kinv[1, 2] + n[2] * Kinv[2, 2]
    for r in range(3):
        H[r, 0] = M1[r, 0] - v[r] * u0 / dist
        H[r, 1] = M1[r, 1] - v[r] * u1 / dist
        H[r, 2] = M1[r, 2] - v[r] * u2 / dist


@njit(cache=True, fastmath=True)
def patch_cost(src, sw, sh, H, wx, wy, wv, nw, sum_a, sum_aa):
    """``1 - NCC`` between reference window values ``wv`` and the warped source samples."""
    sb = 0.0
    sbb = 0.0
    sab = 0.0
    for k in range(nw):
        x = wx[k]
        y = wy[k]
        pz = H[2, 0] * x + H[2, 1] * y + H[2, 2]
        if pz <= 0.0:
            return MAX_COST
        px = (H[0, 0] * x + H[0, 1] * y + H[0, 2]) / pz
        py = (H[1, 0] * x + H[1, 1] * y + H[1, 2]) / pz
        if not (px >= 0.0 and py >= 0.0 and px <= sw - 1 and py <= sh - 1):
            return MAX_COST
        x0 = int(px)
        y0 = int(py)
        if x0 > sw - 2:
            x0 = sw - 2
        if y0 > sh - 2:
            y0 = sh - 2
        ax = px - x0
        ay = py - y0
        b = (
            src[y0, x0] * (1.0 - ax) * (1.0 - ay)
            + src[y0, x0 + 1] * ax * (1.0 - ay)
            + src[y0 + 1, x0] * (1.0 - ax) * ay
            + src[y0 + 1, x0 + 1] * ax * ay
        )
        sb += b
        sbb += b * b
        sab += wv[k] * b
    inv = 1.0 / nw
    ma = sum_a * inv
    mb = sb * inv
    va = sum_aa * inv - ma * ma
    vb = sbb * inv - mb * mb
    if va < VAR_EPS or vb < VAR_EPS:
        return MAX_COST
    c = 1.0 - (sab * inv - ma * mb) / math.sqrt(va * vb)
    if c < 0.0:
        return 0.0
    if c > MAX_COST:
        return MAX_COST
    return c


@njit(cache=True)
def gather_window(ref, x, y, offsets, wx, wy, wv):
    h, w = ref.shape
    nw = 0
    for oy in offsets:
        yy = y + oy
        if yy < 0 or yy >= h:
            continue
        for ox in offsets:
            xx = x + ox
            if xx < 0 or xx >= w:
                continue
            wx[nw] = xx
            wy[nw] = yy
            wv[nw] = ref[yy, xx]
            nw += 1
    return nw


@njit(cache=True)
def reproj_error(d, ray_p, px, py, K_ref, Ks, Ksinv, Rrel, trel, src_depth, sw, sh):
    """Forward-backward reprojection error in pixels (inf when undefined)."""
    X0 = d * ray_p[0]
    X1 = d * ray_p[1]
    X2 = d * ray_p[2]
    Y0 = Rrel[0, 0] * X0 + Rrel[0, 1] * X1 + Rrel[0, 2] * X2 + trel[0]
    Y1 = Rrel[1, 0] * X0 + Rrel[1, 1] * X1 + Rrel[1, 2] * X2 + trel[1]
    Y2 = Rrel[2, 0] * X0 + Rrel[2, 1] * X1 + Rrel[2, 2] * X2 + trel[2]
    if Y2 <= 0.0:
        return np.inf
    us = Ks[0, 0] * Y0 / Y2 + Ks[0, 1] * Y1 / Y2 + Ks[0, 2]
    vs = Ks[1, 1] * Y1 / Y2 + Ks[1, 2]
    if not (us >= 0.0 and vs >= 0.0 and us <= sw - 1 and vs <= sh - 1):
        return np.inf
    x0 = int(us)
    y0 = int(vs)
    if x0 > sw - 2:
        x0 = sw - 2
    if y0 > sh - 2:
        y0 = sh - 2
    ax = us - x0
    ay = vs - y0
    d00 = src_depth[y0, x0]
    d01 = src_depth[y0, x0 + 1]
    d10 = src_depth[y0 + 1, x0]
    d11 = src_depth[y0 + 1, x0 + 1]
    if d00 <= 0.0 or d01 <= 0.0 or d10 <= 0.0 or d11 <= 0.0:
        return np.inf
    inv = (
        (1.0 - ax) * (1.0 - ay) / d00
        + ax * (1.0 - ay) / d01
        + (1.0 - ax) * ay / d10
        + ax * ay / d11
    )
    ds = 1.0 / inv
    r0 = Ksinv[0, 0] * us + Ksinv[0, 1] * vs + Ksinv[0, 2]
    r1 = Ksinv[1, 1] * vs + Ksinv[1, 2]
    Z0 = ds * r0 - trel[0]
    Z1 = ds * r1 - trel[1]
    Z2 = ds - trel[2]
    # R_rel^T (Y - t_rel)
    W0 = Rrel[0, 0] * Z0 + Rrel[1, 0] * Z1 + Rrel[2, 0] * Z2
    W1 = Rrel[0, 1] * Z0 + Rrel[1, 1] * Z1 + Rrel[2, 1] * Z2
    W2 = Rrel[0, 2] * Z0 + Rrel[1, 2] * Z1 + Rrel[2, 2] * Z2
    if W2 <= 0.0:
        return np.inf
    bx = K_ref[0, 0] * W0 / W2 + K_ref[0, 1] * W1 / W2 + K_ref[0, 2]
    by = K_ref[1, 1] * W1 / W2 + K_ref[1, 2]
    return math.sqrt((bx - px) * (bx - px) + (by - py) * (by - py))


@njit(cache=True)
def prior_probability(d, n, dp, np_, gamma, lambda_d, lambda_n):
    c = n[0] * np_[0] + n[1] * np_[1] + n[2] * np_[2]
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    a = math.acos(c)
    dd = d - dp
    return gamma + math.exp(-dd * dd / (2.0 * lambda_d)) * math.exp(-a * a / (2.0 * lambda_n))


@njit(cache=True)
def _eval_sources(
    d, n, ray_p, x, y, srcs, src_w, src_h, M1, vK, Kinv, wx, wy, wv, nw, sum_a, sum_aa,
    mode, K_ref, Ks, Ksinv, Rrel, trel, src_depths, m_out, e_out, H,
):
    """Matching cost (and reprojection error in geometric mode) for every source."""
    S = srcs.shape[0]
    for j in range(S):
        if nw < 9:
            m_out[j] = MAX_COST
        else:
            _homography(M1[j], vK[j], Kinv, d, n, ray_p, H)
            m_out[j] = patch_cost(srcs[j], src_w[j], src_h[j], H, wx, wy, wv, nw, sum_a, sum_aa)
        if mode == MODE_GEO:
            e_out[j] = reproj_error(
                d, ray_p, float(x), float(y), K_ref, Ks[j], Ksinv[j], Rrel[j], trel[j],
                src_depths[j], src_w[j], src_h[j],
            )
        else:
            e_out[j] = 0.0


@njit(cache=True)
def _weighted_cost(mode, w, m, e, d, n, has_prior, dp, np_, params):
    S = w.shape[0]
    sw = 0.0
    acc = 0.0
    for j in range(S):
        term = m[j]
        if mode == MODE_GEO:
            term += params[P_LAMBDA_GEO] * min(e[j], params[P_TAU_GEO])
        acc += w[j] * term
        sw += w[j]
    c = acc / sw
    if mode == MODE_PRIOR:
        if has_prior:
            pr = prior_probability(
                d, n, dp, np_, params[P_GAMMA], params[P_LAMBDA_D], params[P_LAMBDA_N]
            )
        else:
            pr = 1.0 + params[P_GAMMA]
        return c * c / params[P_ALPHA] - math.log(pr)
    return c


@njit(cache=True)
def _topk_cost(mode, m, e, d, n, has_prior, dp, np_, params, scratch):
    S = m.shape[0]
    for j in range(S):
        v = m[j]
        if mode == MODE_GEO:
            v += params[P_LAMBDA_GEO] * min(e[j], params[P_TAU_GEO])
        scratch[j] = v
    scratch.sort()
    k = int(params[P_TOPK])
    if k > S:
        k = S
    if k < 1:
        k = 1
    c = 0.0
    for j in range(k):
        c += scratch[j]
    c /= k
    if mode == MODE_PRIOR:
        if has_prior:
            pr = prior_probability(
                d, n, dp, np_, params[P_GAMMA], params[P_LAMBDA_D], params[P_LAMBDA_N]
            )
        else:
            pr = 1.0 + params[P_GAMMA]
        return c * c / params[P_ALPHA] - math.log(pr)
    return c


@njit(cache=True)
def view_weights(mc, ncand, x, y, vis, params, w_out, vis_out):
    """View-selection weights from candidate costs ``mc[:ncand]`` and 4-neighbor visibility."""
    h, wd, S = vis.shape
    sigma = params[P_SIGMA]
    eta = params[P_ETA]
    two_s2 = 2.0 * sigma * sigma
    best = -1.0
    best_like = -1.0
    best_like_j = 0
    for j in range(S):
        like = 0.0
        for i in range(ncand):
            like += math.exp(-mc[i, j] * mc[i, j] / two_s2)
        like /= ncand
        sm = 0.0
        cnt = 0
        for k in range(4):
            xx = x + NEIGHBOR4[k, 0]
            yy = y + NEIGHBOR4[k, 1]
            if xx < 0 or yy < 0 or xx >= wd or yy >= h:
                continue
            sm += eta if vis[yy, xx, j] > 0 else 1.0 - eta
            cnt += 1
        if cnt > 0:
            sm /= cnt
        else:
            sm = 1.0
        s = like * sm
        w_out[j] = s
        if s > best:
            best = s
        if like > best_like:
            best_like = like
            best_like_j = j
    if best > 0.0:
        for j in range(S):
            w_out[j] /= best
    else:
        for j in range(S):
            w_out[j] = 0.0
        w_out[best_like_j] = 1.0
    for j in range(S):
        vis_out[j] = 1 if w_out[j] >= VIS_THRESHOLD else 0


# --- sweeps -----------------------------------------------------------------------

@njit(cache=True, parallel=True)
def init_costs(
    mode, depth, normal, cost, ref, srcs, src_w, src_h, M1, vK, Kinv, K_ref, Ks, Ksinv,
    Rrel, trel, src_depths, prior_depth, prior_normal, offsets, params,
):
    """Top-K initial aggregated cost of the current hypotheses at every pixel."""
    h, w = ref.shape
    S = srcs.shape[0]
    nmax = offsets.shape[0] * offsets.shape[0]
    for y in prange(h):
        wx = np.empty(nmax, dtype=np.int64)
        wy = np.empty(nmax, dtype=np.int64)
        wv = np.empty(nmax)
        ray = np.empty(3)
        m = np.empty(S)
        e = np.empty(S)
        scratch = np.empty(S)
        H = np.empty((3, 3))
        n = np.empty(3)
        np_ = np.empty(3)
        for x in range(w):
            nw = gather_window(ref, x, y, offsets, wx, wy, wv)
            sa = 0.0
            saa = 0.0
            for k in range(nw):
                sa += wv[k]
                saa += wv[k] * wv[k]
            _ray(Kinv, float(x), float(y), ray)
            for a in range(3):
                n[a] = normal[y, x, a]
                np_[a] = prior_normal[y, x, a]
            d = depth[y, x]
            _eval_sources(
                d, n, ray, x, y, srcs, src_w, src_h, M1, vK, Kinv, wx, wy, wv, nw, sa, saa,
                mode, K_ref, Ks, Ksinv, Rrel, trel, src_depths, m, e, H,
            )
            cost[y, x] = _topk_cost(
                mode, m, e, d, n, prior_depth[y, x] > 0.0, prior_depth[y, x], np_, params, scratch
            )


@njit(cache=True, parallel=True)
def random_hypotheses(depth, normal, Kinv, params, stream):
    h, w = depth.shape
    dmin = params[P_DMIN]
    dmax = params[P_DMAX]
    for y in prange(h):
        ray = np.empty(3)
        n = np.empty(3)
        for x in range(w):
            key = pixel_key(stream, y * w + x)
            depth[y, x] = dmin + (dmax - dmin) * uniform01(key, 0)
            _ray(Kinv, float(x), float(y), ray)
            random_normal(key, 1, ray, n)
            for a in range(3):
                normal[y, x, a] = n[a]


@njit(cache=True)
def _process_pixel(
    x, y, mode, depth, normal, cost, vis, ref, srcs, src_w, src_h, M1, vK, Kinv, K_ref,
    Ks, Ksinv, Rrel, trel, src_depths, prior_depth, prior_normal, offsets, params,
    stream, do_update, do_refine, scratch_i, scratch_f,
):
    """Candidate update plus refinement for one pixel; writes only that pixel's state.

    Returns the index of the winning propagation candidate (0 = kept current).
    """
    h, w = ref.shape
    S = srcs.shape[0]
    dmin = params[P_DMIN]
    dmax = params[P_DMAX]
    wx, wy = scratch_i[0], scratch_i[1]
    wv = scratch_f[0]
    nw = gather_window(ref, x, y, offsets, wx, wy, wv)
    sa = 0.0
    saa = 0.0
    for k in range(nw):
        sa += wv[k]
        saa += wv[k] * wv[k]
    ray = np.empty(3)
    ray_q = np.empty(3)
    _ray(Kinv, float(x), float(y), ray)

    cd = np.empty(MAX_CAND)
    cn = np.empty((MAX_CAND, 3))
    cd[0] = depth[y, x]
    for a in range(3):
        cn[0, a] = normal[y, x, a]
    ncand = 1
    nreg = REGION_STARTS.shape[0] - 1 if do_update else 0
    for r in range(nreg):
        best = np.inf
        bx = -1
        by = -1
        for k in range(REGION_STARTS[r], REGION_STARTS[r + 1]):
            xx = x + REGION_OFFSETS[k, 0]
            yy = y + REGION_OFFSETS[k, 1]
            if xx < 0 or yy < 0 or xx >= w or yy >= h:
                continue
            if cost[yy, xx] < best:
                best = cost[yy, xx]
                bx = xx
                by = yy
        if bx < 0:
            continue
        _ray(Kinv, float(bx), float(by), ray_q)
        nq = normal[by, bx]
        dnew = transfer_depth(depth[by, bx], nq, ray_q, ray)
        if dnew < dmin or dnew > dmax:
            continue
        cd[ncand] = dnew
        for a in range(3):
            cn[ncand, a] = nq[a]
        ncand += 1

    mc = np.empty((MAX_CAND, S))
    ec = np.empty((MAX_CAND, S))
    H = np.empty((3, 3))
    for i in range(ncand):
        _eval_sources(
            cd[i], cn[i], ray, x, y, srcs, src_w, src_h, M1, vK, Kinv, wx, wy, wv, nw, sa, saa,
            mode, K_ref, Ks, Ksinv, Rrel, trel, src_depths, mc[i], ec[i], H,
        )
    wts = np.empty(S)
    vnew = np.empty(S, dtype=np.uint8)
    view_weights(mc, ncand, x, y, vis, params, wts, vnew)

    has_prior = prior_depth[y, x] > 0.0
    dp = prior_depth[y, x]
    np_ = prior_normal[y, x]
    bi = 0
    bc = np.inf
    for i in range(ncand):
        c = _weighted_cost(mode, wts, mc[i], ec[i], cd[i], cn[i], has_prior, dp, np_, params)
        if c < bc:
            bc = c
            bi = i
    d_c = cd[bi]
    n_c = cn[bi].copy()

    if do_refine:
        key = pixel_key(stream, y * w + x)
        span = dmax - dmin
        d_pert = d_c + (2.0 * uniform01(key, 0) - 1.0) * params[P_DEPTH_PERTURB] * span
        d_pert = min(max(d_pert, dmin), dmax)
        d_rand = dmin + span * uniform01(key, 1)
        n_pert = np.empty(3)
        n_rand = np.empty(3)
        perturb_normal(key, 2, n_c, params[P_NORMAL_PERTURB], ray, n_pert)
        random_normal(key, 4, ray, n_rand)
        rd = np.empty(N_REFINE)
        rn = np.empty((N_REFINE, 3))
        rd[0] = d_pert
        rd[1] = d_rand
        rd[2] = d_c
        rd[3] = d_c
        rd[4] = d_rand
        rd[5] = d_pert
        for a in range(3):
            rn[0, a] = n_c[a]
            rn[1, a] = n_c[a]
            rn[2, a] = n_pert[a]
            rn[3, a] = n_rand[a]
            rn[4, a] = n_rand[a]
            rn[5, a] = n_pert[a]
        m = np.empty(S)
        e = np.empty(S)
        ri = -1
        rc = bc
        for i in range(N_REFINE):
            _eval_sources(
                rd[i], rn[i], ray, x, y, srcs, src_w, src_h, M1, vK, Kinv, wx, wy, wv, nw, sa,
                saa, mode, K_ref, Ks, Ksinv, Rrel, trel, src_depths, m, e, H,
            )
            c = _weighted_cost(mode, wts, m, e, rd[i], rn[i], has_prior, dp, np_, params)
            if c < rc:
                rc = c
                ri = i
        if ri >= 0:
            d_c = rd[ri]
            for a in range(3):
                n_c[a] = rn[ri, a]
            bc = rc

    depth[y, x] = d_c
    for a in range(3):
        normal[y, x, a] = n_c[a]
    cost[y, x] = bc
    for j in range(S):
        vis[y, x, j] = vnew[j]
    return bi


@njit(cache=True, parallel=True)
def sweep_color(
    color, mode, depth, normal, cost, vis, ref, srcs, src_w, src_h, M1, vK, Kinv, K_ref,
    Ks, Ksinv, Rrel, trel, src_depths, prior_depth, prior_normal, offsets, params,
    stream, do_refine,
):
    """Update every pixel with ``(x + y) % 2 == color``; rows run in parallel."""
    h, w = ref.shape
    nmax = offsets.shape[0] * offsets.shape[0]
    for y in prange(h):
        scratch_i = np.empty((2, nmax), dtype=np.int64)
        scratch_f = np.empty((1, nmax))
        for x in range((y + color) % 2, w, 2):
            _process_pixel(
                x, y, mode, depth, normal, cost, vis, ref, srcs, src_w, src_h, M1, vK, Kinv,
                K_ref, Ks, Ksinv, Rrel, trel, src_depths, prior_depth, prior_normal, offsets,
                params, stream, True, do_refine, scratch_i, scratch_f,
            )


@njit(cache=True)
def process_pixels(
    xs, ys, mode, depth, normal, cost, vis, ref, srcs, src_w, src_h, M1, vK, Kinv, K_ref,
    Ks, Ksinv, Rrel, trel, src_depths, prior_depth, prior_normal, offsets, params,
    stream, do_update, do_refine,
):
    """Update an explicit pixel list sequentially (used to test order independence)."""
    nmax = offsets.shape[0] * offsets.shape[0]
    scratch_i = np.empty((2, nmax), dtype=np.int64)
    scratch_f = np.empty((1, nmax))
    chosen = np.empty(xs.shape[0], dtype=np.int64)
    for k in range(xs.shape[0]):
        chosen[k] = _process_pixel(
            xs[k], ys[k], mode, depth, normal, cost, vis, ref, srcs, src_w, src_h, M1, vK, Kinv,
            K_ref, Ks, Ksinv, Rrel, trel, src_depths, prior_depth, prior_normal, offsets, params,
            stream, do_update, do_refine, scratch_i, scratch_f,
        )
    return chosen


# --- rasterization -------------------------------------------------------------------

@njit(cache=True)
def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


@njit(cache=True)
def _owns_edge(ax, ay, bx, by):
    # tie-break equivalent to nudging the sample by (-eps, -eps^2)
    dx = bx - ax
    dy = by - ay
    return dy > 0 or (dy == 0 and dx < 0)


@njit(cache=True)
def rasterize_triangles(pts, tris, skip, h, w, owner, hits):
    """Assign each pixel center to at most one triangle.

    Pass 1 applies a consistent top-left style tie rule so shared edges and
    vertices go to exactly one triangle; pass 2 hands hull-boundary pixels
    left unclaimed to the first triangle whose closed area contains them.
    ``hits`` counts pass-1 claims per pixel (always <= 1 for a valid mesh).
    """
    T = tris.shape[0]
    for pass_ in range(2):
        for t in range(T):
            if skip[t]:
                continue
            ax, ay = pts[tris[t, 0], 0], pts[tris[t, 0], 1]
            bx, by = pts[tris[t, 1], 0], pts[tris[t, 1], 1]
            cx, cy = pts[tris[t, 2], 0], pts[tris[t, 2], 1]
            x0 = max(0, int(math.ceil(min(ax, min(bx, cx)))))
            x1 = min(w - 1, int(math.floor(max(ax, max(bx, cx)))))
            y0 = max(0, int(math.ceil(min(ay, min(by, cy)))))
            y1 = min(h - 1, int(math.floor(max(ay, max(by, cy)))))
            for yy in range(y0, y1 + 1):
                for xx in range(x0, x1 + 1):
                    if pass_ == 1 and owner[yy, xx] >= 0:
                        continue
                    px = float(xx)
                    py = float(yy)
                    e0 = _edge(ax, ay, bx, by, px, py)
                    e1 = _edge(bx, by, cx, cy, px, py)
                    e2 = _edge(cx, cy, ax, ay, px, py)
                    if pass_ == 0:
                        ok = (
                            (e0 > 0 or (e0 == 0 and _owns_edge(ax, ay, bx, by)))
                            and (e1 > 0 or (e1 == 0 and _owns_edge(bx, by, cx, cy)))
                            and (e2 > 0 or (e2 == 0 and _owns_edge(cx, cy, ax, ay)))
                        )
                    else:
                        ok = e0 >= 0 and e1 >= 0 and e2 >= 0
                    if ok:
                        owner[yy, xx] = t
                        if pass_ == 0:
                            hits[yy, xx] += 1
