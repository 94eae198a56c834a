"""Hot inner loops of the PatchMatch engine.

Everything here is nopython-compatible and compiled with numba unless
``PDMVS_NO_NUMBA=1`` selects the interpreted fallback (see accel.py).
All geometry is precomputed per (reference, source) pair and passed in
as flat arrays:

  P1[j]  = K_j R_rel K_i^-1          (homography base)
  P2[j]  = K_j t_rel
  G1[j]  = K_j R_rel                 (projection of reference-frame points)
  Rrel[j], trel[j], Kjinv[j]         (back-projection for reprojection checks)
  c_rel[j]                           (source camera center, reference frame)

A plane hypothesis at pixel p is (n, d) with n a unit normal in the
reference camera frame and d the depth of p; its induced homography into
source j is H = P1[j] + outer(P2[j], K_i^-T n) / (n . d K_i^-1 p).

The reference side of a patch (sample coordinates, intensities and
bilateral weights) is independent of both the candidate hypothesis and
the source view, so the per-pixel loops prepare it once and the inner
loops only warp and accumulate the source side.
"""

import math

import numpy as np

from .accel import njit, prange
from .rng import rand01

COST_MAX = 2.0
_VAR_EPS = 1e-12

# stage tags for the counter-based RNG
_STAGE_INIT = 0
_STAGE_REFINE = 1


@njit(cache=True, fastmath=True)
def _bilinear(img, x, y):
    h, w = img.shape
    x0 = int(math.floor(x))
    y0 = int(math.floor(y))
    if x0 < 0:
        x0 = 0
    if y0 < 0:
        y0 = 0
    if x0 > w - 2:
        x0 = w - 2
    if y0 > h - 2:
        y0 = h - 2
    fx = x - x0
    fy = y - y0
    v00 = img[y0, x0]
    v01 = img[y0, x0 + 1]
    v10 = img[y0 + 1, x0]
    v11 = img[y0 + 1, x0 + 1]
    return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy


@njit(cache=True, fastmath=True)
def _prep_patch(ref, cx, cy, size, stride, sigma_c, xs, ys, wv, wa, waa):
    """Reference-side samples of one patch: clamped coordinates plus the
    bilateral weight w, w*a and w*a*a per sample."""
    hr, wr = ref.shape
    half = size // 2
    center = ref[cy, cx]
    i = 0
    for dy in range(-half, half + 1, stride):
        yy = cy + dy
        if yy < 0:
            yy = 0
        elif yy > hr - 1:
            yy = hr - 1
        for dx in range(-half, half + 1, stride):
            xx = cx + dx
            if xx < 0:
                xx = 0
            elif xx > wr - 1:
                xx = wr - 1
            a = ref[yy, xx]
            w = math.exp(-abs(a - center) / sigma_c)
            xs[i] = xx
            ys[i] = yy
            wv[i] = w
            wa[i] = w * a
            waa[i] = w * a * a
            i += 1
    return i


@njit(cache=True, fastmath=True)
def _patch_ncc_pre(src, H, xs, ys, wv, wa, waa, n):
    """Bilateral-weighted NCC cost of a prepared patch under homography H.

    Samples mapping outside the source image are dropped from both sides
    of the weighted covariance. Degenerate patches (fewer than half the
    samples surviving, or near-zero variance) cost COST_MAX.
    """
    hs, ws = src.shape
    xmax = ws - 1.0
    ymax = hs - 1.0
    h00 = H[0, 0]
    h01 = H[0, 1]
    h02 = H[0, 2]
    h10 = H[1, 0]
    h11 = H[1, 1]
    h12 = H[1, 2]
    h20 = H[2, 0]
    h21 = H[2, 1]
    h22 = H[2, 2]
    sw = 0.0
    sa = 0.0
    sb = 0.0
    saa = 0.0
    sbb = 0.0
    sab = 0.0
    survived = 0
    for i in range(n):
        xx = xs[i]
        yy = ys[i]
        uz = h20 * xx + h21 * yy + h22
        if uz <= 1e-12:
            continue
        inv = 1.0 / uz
        ux = (h00 * xx + h01 * yy + h02) * inv
        uy = (h10 * xx + h11 * yy + h12) * inv
        if ux < 0.0 or ux > xmax or uy < 0.0 or uy > ymax:
            continue
        x0 = int(ux)
        y0 = int(uy)
        if x0 > ws - 2:
            x0 = ws - 2
        if y0 > hs - 2:
            y0 = hs - 2
        fx = ux - x0
        fy = uy - y0
        v00 = src[y0, x0]
        v01 = src[y0, x0 + 1]
        v10 = src[y0 + 1, x0]
        v11 = src[y0 + 1, x0 + 1]
        b = (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy
        w = wv[i]
        sw += w
        sa += wa[i]
        saa += waa[i]
        sb += w * b
        sbb += w * b * b
        sab += wa[i] * b
        survived += 1

    if survived * 2 < n or sw <= 0.0:
        return COST_MAX
    ma = sa / sw
    mb = sb / sw
    var_a = saa / sw - ma * ma
    var_b = sbb / sw - mb * mb
    if var_a < _VAR_EPS or var_b < _VAR_EPS:
        return COST_MAX
    ncc = (sab / sw - ma * mb) / math.sqrt(var_a * var_b)
    cost = 1.0 - ncc
    if cost < 0.0:
        cost = 0.0
    elif cost > COST_MAX:
        cost = COST_MAX
    return cost


@njit(cache=True, fastmath=True)
def patch_ncc(ref, src, H, cx, cy, size, stride, sigma_c):
    """One-off patch cost (prepares the reference side on the fly)."""
    cap = size * size
    xs = np.empty(cap, dtype=np.float64)
    ys = np.empty(cap, dtype=np.float64)
    wv = np.empty(cap)
    wa = np.empty(cap)
    waa = np.empty(cap)
    n = _prep_patch(ref, cx, cy, size, stride, sigma_c, xs, ys, wv, wa, waa)
    return _patch_ncc_pre(src, H, xs, ys, wv, wa, waa, n)


@njit(cache=True, fastmath=True)
def _build_h(P1, P2, Kinv, n0, n1, n2, dist, H):
    # H = P1 + outer(P2, K^-T n) / dist
    q0 = Kinv[0, 0] * n0
    q1 = Kinv[0, 1] * n0 + Kinv[1, 1] * n1
    q2 = Kinv[0, 2] * n0 + Kinv[1, 2] * n1 + Kinv[2, 2] * n2
    for r in range(3):
        H[r, 0] = P1[r, 0] + P2[r] * q0 / dist
        H[r, 1] = P1[r, 1] + P2[r] * q1 / dist
        H[r, 2] = P1[r, 2] + P2[r] * q2 / dist


@njit(cache=True, fastmath=True)
def _ray(Kinv, x, y):
    rx = Kinv[0, 0] * x + Kinv[0, 1] * y + Kinv[0, 2]
    ry = Kinv[1, 1] * y + Kinv[1, 2]
    rz = 1.0
    return rx, ry, rz


@njit(cache=True, fastmath=True)
def _view_cost_pre(
    src, H,
    cxs, cys, cwv, cwa, cwaa, nc,
    n_anchors, anchor_ok, axs, ays, awv, awa, awaa, na_samples,
    anchor_view_w, lam,
):
    """Single-view cost of a prepared pixel: deformable blend of the
    central patch and the usable anchor sub-patches."""
    central = _patch_ncc_pre(src, H, cxs, cys, cwv, cwa, cwaa, nc)
    if n_anchors <= 0:
        return central
    acc = 0.0
    used = 0
    for k in range(n_anchors):
        if not anchor_ok[k]:
            continue
        if anchor_view_w[k] <= 0.0:
            continue
        acc += _patch_ncc_pre(
            src, H, axs[k], ays[k], awv[k], awa[k], awaa[k], na_samples
        )
        used += 1
    if used == 0:
        return central
    cost = lam * central + (1.0 - lam) * acc / used
    if cost > COST_MAX:
        cost = COST_MAX
    return cost


@njit(cache=True, fastmath=True)
def view_cost(
    ref, src, P1, P2, Kinv, x, y, n0, n1, n2, d,
    anchors, n_anchors, w_anchor,
    size, central_stride, anchor_stride, sigma_c, lam, H,
):
    """Single-view matching cost of hypothesis (n, d) at pixel (x, y).

    When anchor sub-patches are supplied (and visible per w_anchor), the
    deformable blend lam * central + (1 - lam) * mean(anchor costs) is
    used; with no usable anchors this reduces to the central patch cost.
    """
    rx, ry, rz = _ray(Kinv, float(x), float(y))
    dist = d * (n0 * rx + n1 * ry + n2 * rz)
    if abs(dist) < 1e-12:
        return COST_MAX
    _build_h(P1, P2, Kinv, n0, n1, n2, dist, H)
    cap = size * size
    cxs = np.empty(cap, dtype=np.float64)
    cys = np.empty(cap, dtype=np.float64)
    cwv = np.empty(cap)
    cwa = np.empty(cap)
    cwaa = np.empty(cap)
    nc = _prep_patch(ref, x, y, size, central_stride, sigma_c, cxs, cys, cwv, cwa, cwaa)
    central = _patch_ncc_pre(src, H, cxs, cys, cwv, cwa, cwaa, nc)
    if n_anchors <= 0:
        return central
    acc = 0.0
    used = 0
    for k in range(n_anchors):
        ax = anchors[k, 0]
        ay = anchors[k, 1]
        if ax < 0:
            continue
        if w_anchor[k] <= 0.0:
            continue
        na = _prep_patch(ref, ax, ay, size, anchor_stride, sigma_c, cxs, cys, cwv, cwa, cwaa)
        acc += _patch_ncc_pre(src, H, cxs, cys, cwv, cwa, cwaa, na)
        used += 1
    if used == 0:
        return central
    cost = lam * central + (1.0 - lam) * acc / used
    if cost > COST_MAX:
        cost = COST_MAX
    return cost


@njit(cache=True, fastmath=True)
def _prep_pixel(
    ref, x, y, size, central_stride, anchor_stride, sigma_c,
    anchors_px, n_anchors,
    cxs, cys, cwv, cwa, cwaa, anchor_ok, axs, ays, awv, awa, awaa,
):
    """Prepare the reference side of one pixel's central patch and of its
    anchor sub-patches (shared across candidates and source views).
    Returns the central and anchor sample counts."""
    nc = _prep_patch(ref, x, y, size, central_stride, sigma_c, cxs, cys, cwv, cwa, cwaa)
    na = 0
    for k in range(n_anchors):
        ax = anchors_px[k, 0]
        ay = anchors_px[k, 1]
        if ax < 0:
            anchor_ok[k] = False
            continue
        anchor_ok[k] = True
        na = _prep_patch(
            ref, ax, ay, size, anchor_stride, sigma_c,
            axs[k], ays[k], awv[k], awa[k], awaa[k],
        )
    return nc, na


@njit(cache=True, fastmath=True)
def _aggregated_cost_pre(
    srcs, P1, P2, Kinv, x, y, n0, n1, n2, d,
    weights_px,
    cxs, cys, cwv, cwa, cwaa, nc, na,
    n_anchors, anchor_ok, axs, ays, awv, awa, awaa,
    anchors_px, anchor_weights, lam, H, scratch_w,
):
    """Visibility-weighted multi-view cost.

    A pixel whose weights are all zero has no visibility estimate at
    all (every view was rejected by the cost cutoff, typically because
    the patch is degenerate). Falling back to the unweighted mean over
    every view keeps such pixels comparable across hypotheses so that
    propagation and refinement can still rescue them; scoring them
    COST_MAX would freeze them forever.
    """
    rx, ry, rz = _ray(Kinv, float(x), float(y))
    dist = d * (n0 * rx + n1 * ry + n2 * rz)
    if abs(dist) < 1e-12:
        return COST_MAX
    nsrc = srcs.shape[0]
    acc = 0.0
    sw = 0.0
    for j in range(nsrc):
        w = weights_px[j]
        if w <= 0.0:
            continue
        _build_h(P1[j], P2[j], Kinv, n0, n1, n2, dist, H)
        for k in range(n_anchors):
            if anchor_ok[k]:
                scratch_w[k] = anchor_weights[anchors_px[k, 1], anchors_px[k, 0], j]
            else:
                scratch_w[k] = 0.0
        m = _view_cost_pre(
            srcs[j], H, cxs, cys, cwv, cwa, cwaa, nc,
            n_anchors, anchor_ok, axs, ays, awv, awa, awaa, na,
            scratch_w, lam,
        )
        acc += w * m
        sw += w
    if sw <= 0.0:
        for j in range(nsrc):
            _build_h(P1[j], P2[j], Kinv, n0, n1, n2, dist, H)
            for k in range(n_anchors):
                if anchor_ok[k]:
                    scratch_w[k] = anchor_weights[
                        anchors_px[k, 1], anchors_px[k, 0], j
                    ]
                else:
                    scratch_w[k] = 0.0
            m = _view_cost_pre(
                srcs[j], H, cxs, cys, cwv, cwa, cwaa, nc,
                n_anchors, anchor_ok, axs, ays, awv, awa, awaa, na,
                scratch_w, lam,
            )
            acc += m
            sw += 1.0
        if sw <= 0.0:
            return COST_MAX
    return acc / sw


@njit(cache=True, fastmath=True)
def _violates_constraints(n0, n1, n2, px_ray_x, px_ray_y, px_ray_z, d,
                          c_rel, weights_px):
    """Normal admissibility: n . v <= 0 for the reference direction and
    every visible source direction at the pixel's 3D point."""
    xx = d * px_ray_x
    xy = d * px_ray_y
    xz = d * px_ray_z
    if n0 * xx + n1 * xy + n2 * xz > 0.0:
        return True
    for j in range(c_rel.shape[0]):
        if weights_px[j] <= 0.0:
            continue
        vx = xx - c_rel[j, 0]
        vy = xy - c_rel[j, 1]
        vz = xz - c_rel[j, 2]
        if n0 * vx + n1 * vy + n2 * vz > 0.0:
            return True
    return False


@njit(cache=True)
def _sort_small(a, m):
    for i in range(1, m):
        key = a[i]
        k = i - 1
        while k >= 0 and a[k] > key:
            a[k + 1] = a[k]
            k -= 1
        a[k + 1] = key


@njit(cache=True, fastmath=True)
def depth_interval(
    x, y, d, G1, P2, Kinv, weights_px, alpha, beta, mu, d_min, d_max, out,
):
    """Aggregated refinement depth intervals (two (lo, hi) pairs in out).

    Per visible view, four depths are recovered at epipolar offsets
    +-alpha and +-(alpha+beta); across views the interval extremes are
    the mu-th order statistics (clamped to the available view count).
    Positive offsets move toward larger disparity (smaller depth).
    """
    nsrc = G1.shape[0]
    dll = np.empty(nsrc)
    dlr = np.empty(nsrc)
    drl = np.empty(nsrc)
    drr = np.empty(nsrc)
    m = 0
    rx, ry, rz = _ray(Kinv, float(x), float(y))
    for j in range(nsrc):
        if weights_px[j] <= 0.0:
            continue
        ax = G1[j, 0, 0] * rx + G1[j, 0, 1] * ry + G1[j, 0, 2] * rz
        ay = G1[j, 1, 0] * rx + G1[j, 1, 1] * ry + G1[j, 1, 2] * rz
        az = G1[j, 2, 0] * rx + G1[j, 2, 1] * ry + G1[j, 2, 2] * rz
        bx = P2[j, 0]
        by = P2[j, 1]
        bz = P2[j, 2]
        uz = d * az + bz
        if uz <= 1e-12:
            continue
        px = (d * ax + bx) / uz
        py = (d * ay + by) / uz
        d2 = d * 1.01
        u2z = d2 * az + bz
        if u2z <= 1e-12:
            continue
        qx = (d2 * ax + bx) / u2z
        qy = (d2 * ay + by) / u2z
        dirx = px - qx
        diry = py - qy
        nrm = math.sqrt(dirx * dirx + diry * diry)
        if nrm < 1e-12:
            continue
        dirx /= nrm
        diry /= nrm
        ok = True
        vals = np.empty(4)
        offs = np.empty(4)
        offs[0] = -(alpha + beta)
        offs[1] = -alpha
        offs[2] = alpha
        offs[3] = alpha + beta
        for k in range(4):
            tx = px + offs[k] * dirx
            ty = py + offs[k] * diry
            den_x = ax - tx * az
            den_y = ay - ty * az
            if abs(den_x) >= abs(den_y):
                den = den_x
                num = tx * bz - bx
            else:
                den = den_y
                num = ty * bz - by
            if abs(den) < 1e-15:
                ok = False
                break
            dn = num / den
            if dn <= 0.0:
                ok = False
                break
            vals[k] = dn
        if not ok:
            continue
        dll[m] = vals[0]
        dlr[m] = vals[1]
        drl[m] = vals[2]
        drr[m] = vals[3]
        m += 1

    if m == 0:
        out[0] = max(d * 0.99, d_min)
        out[1] = min(d * 1.01, d_max)
        out[2] = out[0]
        out[3] = out[1]
        return
    idx = mu
    if idx > m:
        idx = m
    _sort_small(dll, m)
    _sort_small(dlr, m)
    _sort_small(drl, m)
    _sort_small(drr, m)
    left_lo = dll[idx - 1]        # idx-th smallest of the far-left extremes
    left_hi = dlr[m - idx]        # idx-th largest of the near-left extremes
    right_lo = drl[m - idx]       # idx-th largest of the near-right extremes
    right_hi = drr[idx - 1]       # idx-th smallest of the far-right extremes
    if left_lo > left_hi:
        left_lo, left_hi = left_hi, left_lo
    if right_lo > right_hi:
        right_lo, right_hi = right_hi, right_lo
    out[0] = min(max(left_lo, d_min), d_max)
    out[1] = min(max(left_hi, d_min), d_max)
    out[2] = min(max(right_lo, d_min), d_max)
    out[3] = min(max(right_hi, d_min), d_max)
    if out[0] > out[1]:
        out[0] = out[1]
    if out[2] > out[3]:
        out[2] = out[3]


@njit(cache=True, fastmath=True)
def _sample_sphere(u1, u2):
    z = 2.0 * u1 - 1.0
    phi = 2.0 * math.pi * u2
    s = math.sqrt(max(0.0, 1.0 - z * z))
    return s * math.cos(phi), s * math.sin(phi), z


@njit(cache=True, fastmath=True)
def _cone_sample(n0, n1, n2, cos_max, u1, u2):
    # orthonormal basis around n
    if abs(n0) < 0.7:
        t0, t1, t2 = 1.0, 0.0, 0.0
    else:
        t0, t1, t2 = 0.0, 1.0, 0.0
    b0 = n1 * t2 - n2 * t1
    b1 = n2 * t0 - n0 * t2
    b2 = n0 * t1 - n1 * t0
    nb = math.sqrt(b0 * b0 + b1 * b1 + b2 * b2)
    b0 /= nb
    b1 /= nb
    b2 /= nb
    c0 = n1 * b2 - n2 * b1
    c1 = n2 * b0 - n0 * b2
    c2 = n0 * b1 - n1 * b0
    cos_t = cos_max + (1.0 - cos_max) * u1
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * math.pi * u2
    x = cos_t * n0 + sin_t * (math.cos(phi) * b0 + math.sin(phi) * c0)
    y = cos_t * n1 + sin_t * (math.cos(phi) * b1 + math.sin(phi) * c1)
    z = cos_t * n2 + sin_t * (math.cos(phi) * b2 + math.sin(phi) * c2)
    nn = math.sqrt(x * x + y * y + z * z)
    return x / nn, y / nn, z / nn


@njit(cache=True, parallel=True)
def init_hypotheses(
    seed, view, Kinv, width, height, d_min, d_max, normals, depths,
):
    """Random seeded hypotheses: uniform depth, camera-facing unit normal."""
    for y in prange(height):
        for x in range(width):
            pix = y * width + x
            u = rand01(seed, view, pix, _STAGE_INIT, 0)
            depths[y, x] = d_min + u * (d_max - d_min)
            rx, ry, rz = _ray(Kinv, float(x), float(y))
            u1 = rand01(seed, view, pix, _STAGE_INIT, 1)
            u2 = rand01(seed, view, pix, _STAGE_INIT, 2)
            n0, n1, n2 = _sample_sphere(u1, u2)
            if n0 * rx + n1 * ry + n2 * rz > 0.0:
                n0, n1, n2 = -n0, -n1, -n2
            normals[y, x, 0] = n0
            normals[y, x, 1] = n1
            normals[y, x, 2] = n2


@njit(cache=True, parallel=True, fastmath=True)
def compute_view_costs(
    ref, srcs, P1, P2, Kinv,
    normals, depths, anchors, anchor_counts, anchor_weights, use_deform,
    size, central_stride, anchor_stride, sigma_c, lam, out,
):
    """Per-pixel, per-view cost of the current hypothesis."""
    height, width = ref.shape
    nsrc = srcs.shape[0]
    max_anchors = anchors.shape[2]
    ns = size * size
    for y in prange(height):
        H = np.empty((3, 3))
        cxs = np.empty(ns, dtype=np.float64)
        cys = np.empty(ns, dtype=np.float64)
        cwv = np.empty(ns)
        cwa = np.empty(ns)
        cwaa = np.empty(ns)
        anchor_ok = np.zeros(max_anchors, dtype=np.bool_)
        axs = np.empty((max_anchors, ns), dtype=np.float64)
        ays = np.empty((max_anchors, ns), dtype=np.float64)
        awv = np.empty((max_anchors, ns))
        awa = np.empty((max_anchors, ns))
        awaa = np.empty((max_anchors, ns))
        wv = np.empty(max_anchors)
        for x in range(width):
            n0 = normals[y, x, 0]
            n1 = normals[y, x, 1]
            n2 = normals[y, x, 2]
            d = depths[y, x]
            na = anchor_counts[y, x] if use_deform else 0
            n_slots = anchors.shape[2] if na > 0 else 0
            nc_s, na_s = _prep_pixel(
                ref, x, y, size, central_stride, anchor_stride, sigma_c,
                anchors[y, x], n_slots,
                cxs, cys, cwv, cwa, cwaa, anchor_ok, axs, ays, awv, awa, awaa,
            )
            rx, ry, rz = _ray(Kinv, float(x), float(y))
            dist = d * (n0 * rx + n1 * ry + n2 * rz)
            for j in range(nsrc):
                if abs(dist) < 1e-12:
                    out[y, x, j] = COST_MAX
                    continue
                _build_h(P1[j], P2[j], Kinv, n0, n1, n2, dist, H)
                for k in range(n_slots):
                    if anchor_ok[k]:
                        wv[k] = anchor_weights[
                            anchors[y, x, k, 1], anchors[y, x, k, 0], j
                        ]
                    else:
                        wv[k] = 0.0
                out[y, x, j] = _view_cost_pre(
                    srcs[j], H, cxs, cys, cwv, cwa, cwaa, nc_s,
                    n_slots, anchor_ok, axs, ays, awv, awa, awaa, na_s,
                    wv, lam,
                )


@njit(cache=True, parallel=True, fastmath=True)
def restore_visibility_weights(
    depths, src_depths, P1, P2, Rrel, trel, Kjinv, Ki,
    eps_reproj, w_restored, weights,
):
    """Set zero view weights to w_restored where the cross-view
    reprojection round trip lands within eps_reproj pixels."""
    height, width = depths.shape
    nsrc = src_depths.shape[0]
    hs = src_depths.shape[1]
    ws = src_depths.shape[2]
    for y in prange(height):
        for x in range(width):
            d = depths[y, x]
            if d <= 0.0:
                continue
            for j in range(nsrc):
                if weights[y, x, j] > 0.0:
                    continue
                # forward: u ~ d * P1 (x, y, 1) + P2
                ax = P1[j, 0, 0] * x + P1[j, 0, 1] * y + P1[j, 0, 2]
                ay = P1[j, 1, 0] * x + P1[j, 1, 1] * y + P1[j, 1, 2]
                az = P1[j, 2, 0] * x + P1[j, 2, 1] * y + P1[j, 2, 2]
                uz = d * az + P2[j, 2]
                if uz <= 1e-12:
                    continue
                ux = (d * ax + P2[j, 0]) / uz
                uy = (d * ay + P2[j, 1]) / uz
                xj = int(round(ux))
                yj = int(round(uy))
                if xj < 0 or xj >= ws or yj < 0 or yj >= hs:
                    continue
                dj = src_depths[j, yj, xj]
                if dj <= 0.0:
                    continue
                # back-project the mapped pixel with the source depth
                sx = Kjinv[j, 0, 0] * ux + Kjinv[j, 0, 1] * uy + Kjinv[j, 0, 2]
                sy = Kjinv[j, 1, 1] * uy + Kjinv[j, 1, 2]
                sz = 1.0
                Xjx = dj * sx
                Xjy = dj * sy
                Xjz = dj * sz
                tx = Xjx - trel[j, 0]
                ty = Xjy - trel[j, 1]
                tz = Xjz - trel[j, 2]
                Xix = Rrel[j, 0, 0] * tx + Rrel[j, 1, 0] * ty + Rrel[j, 2, 0] * tz
                Xiy = Rrel[j, 0, 1] * tx + Rrel[j, 1, 1] * ty + Rrel[j, 2, 1] * tz
                Xiz = Rrel[j, 0, 2] * tx + Rrel[j, 1, 2] * ty + Rrel[j, 2, 2] * tz
                if Xiz <= 1e-12:
                    continue
                bx = (Ki[0, 0] * Xix + Ki[0, 1] * Xiy + Ki[0, 2] * Xiz) / Xiz
                by = (Ki[1, 1] * Xiy + Ki[1, 2] * Xiz) / Xiz
                err = math.sqrt((bx - x) * (bx - x) + (by - y) * (by - y))
                if err <= eps_reproj:
                    weights[y, x, j] = w_restored


@njit(cache=True, parallel=True)
def search_anchor_pixels(
    reliable, sector_dirs, step, r_max, anchors, anchor_counts,
):
    """Per unreliable pixel, walk each sector bisector outward and record
    the first reliable pixel (or (-1, -1) if the sector is empty)."""
    height, width = reliable.shape
    nsec = sector_dirs.shape[0]
    for y in prange(height):
        for x in range(width):
            if reliable[y, x]:
                anchor_counts[y, x] = 0
                for k in range(nsec):
                    anchors[y, x, k, 0] = -1
                    anchors[y, x, k, 1] = -1
                continue
            cnt = 0
            for k in range(nsec):
                ax = -1
                ay = -1
                t = step
                while t <= r_max:
                    xx = x + int(round(sector_dirs[k, 0] * t))
                    yy = y + int(round(sector_dirs[k, 1] * t))
                    if xx < 0 or xx >= width or yy < 0 or yy >= height:
                        break
                    if reliable[yy, xx]:
                        ax = xx
                        ay = yy
                        break
                    t += step
                anchors[y, x, k, 0] = ax
                anchors[y, x, k, 1] = ay
                if ax >= 0:
                    cnt += 1
            anchor_counts[y, x] = cnt


@njit(cache=True, parallel=True, fastmath=True)
def propagate_phase(
    phase, ref, srcs, P1, P2, Kinv, c_rel,
    normals_in, depths_in, normals_out, depths_out,
    costs_cur, weights, anchors, anchor_counts, anchor_weights,
    reliable, use_deform, constraint_on,
    d_min, d_max, size, central_stride, anchor_stride, sigma_c, lam,
    dirs, dir_steps,
):
    """One checkerboard propagation phase.

    Active pixels ((x + y) % 2 == phase) gather one candidate per
    direction (the lowest-cost neighbor among the strided offsets, the
    adaptive checkerboard pattern), discard candidates violating the
    aggregated normal constraint, and keep the argmin aggregated cost.
    Neighbor hypotheses and costs are read from the pre-phase snapshot
    (neighbors are all of the opposite phase, so costs_cur is stable).
    """
    height, width = ref.shape
    max_anchors = anchors.shape[2]
    ndir = dirs.shape[0]
    nstep = dir_steps.shape[0]
    ns = size * size
    for y in prange(height):
        H = np.empty((3, 3))
        scratch_w = np.empty(max_anchors)
        cn = np.empty((ndir, 4))
        cxs = np.empty(ns, dtype=np.float64)
        cys = np.empty(ns, dtype=np.float64)
        cwv = np.empty(ns)
        cwa = np.empty(ns)
        cwaa = np.empty(ns)
        anchor_ok = np.zeros(max_anchors, dtype=np.bool_)
        axs = np.empty((max_anchors, ns), dtype=np.float64)
        ays = np.empty((max_anchors, ns), dtype=np.float64)
        awv = np.empty((max_anchors, ns))
        awa = np.empty((max_anchors, ns))
        awaa = np.empty((max_anchors, ns))
        for x in range(width):
            if (x + y) % 2 != phase:
                continue
            rx, ry, rz = _ray(Kinv, float(x), float(y))
            best_cost = costs_cur[y, x]
            best_n0 = normals_in[y, x, 0]
            best_n1 = normals_in[y, x, 1]
            best_n2 = normals_in[y, x, 2]
            best_d = depths_in[y, x]
            deform = use_deform and (not reliable[y, x])
            n_slots = max_anchors if deform else 0
            nc_s, na_s = _prep_pixel(
                ref, x, y, size, central_stride, anchor_stride, sigma_c,
                anchors[y, x], n_slots,
                cxs, cys, cwv, cwa, cwaa, anchor_ok, axs, ays, awv, awa, awaa,
            )
            ncand = 0
            for c in range(ndir):
                # adaptive pick: cheapest snapshot cost along the direction
                nx = -1
                ny = -1
                nb_cost = 1e30
                for s in range(nstep):
                    tx = x + dirs[c, 0] * dir_steps[s]
                    ty = y + dirs[c, 1] * dir_steps[s]
                    if tx < 0 or tx >= width or ty < 0 or ty >= height:
                        continue
                    if costs_cur[ty, tx] < nb_cost:
                        nb_cost = costs_cur[ty, tx]
                        nx = tx
                        ny = ty
                if nx < 0:
                    continue
                n0 = normals_in[ny, nx, 0]
                n1 = normals_in[ny, nx, 1]
                n2 = normals_in[ny, nx, 2]
                dn = depths_in[ny, nx]
                # depth of the neighbor's plane along this pixel's ray
                nrx, nry, nrz = _ray(Kinv, float(nx), float(ny))
                dist_nb = dn * (n0 * nrx + n1 * nry + n2 * nrz)
                denom = n0 * rx + n1 * ry + n2 * rz
                if abs(denom) < 1e-12:
                    continue
                d_cand = dist_nb / denom
                if d_cand < d_min or d_cand > d_max:
                    continue
                # skip exact duplicates (including the incumbent)
                if (
                    n0 == best_n0 and n1 == best_n1 and n2 == best_n2
                    and abs(d_cand - best_d) < 1e-12 * best_d
                ):
                    continue
                dup = False
                for q in range(ncand):
                    if (
                        cn[q, 0] == n0 and cn[q, 1] == n1 and cn[q, 2] == n2
                        and abs(cn[q, 3] - d_cand) < 1e-12 * d_cand
                    ):
                        dup = True
                        break
                if dup:
                    continue
                if constraint_on and _violates_constraints(
                    n0, n1, n2, rx, ry, rz, d_cand, c_rel, weights[y, x]
                ):
                    continue
                cn[ncand, 0] = n0
                cn[ncand, 1] = n1
                cn[ncand, 2] = n2
                cn[ncand, 3] = d_cand
                ncand += 1
            for q in range(ncand):
                cost = _aggregated_cost_pre(
                    srcs, P1, P2, Kinv, x, y,
                    cn[q, 0], cn[q, 1], cn[q, 2], cn[q, 3],
                    weights[y, x],
                    cxs, cys, cwv, cwa, cwaa, nc_s, na_s,
                    n_slots, anchor_ok, axs, ays, awv, awa, awaa,
                    anchors[y, x], anchor_weights, lam, H, scratch_w,
                )
                if cost < best_cost:
                    best_cost = cost
                    best_n0 = cn[q, 0]
                    best_n1 = cn[q, 1]
                    best_n2 = cn[q, 2]
                    best_d = cn[q, 3]
            normals_out[y, x, 0] = best_n0
            normals_out[y, x, 1] = best_n1
            normals_out[y, x, 2] = best_n2
            depths_out[y, x] = best_d
            costs_cur[y, x] = best_cost


@njit(cache=True, parallel=True, fastmath=True)
def refine_all(
    it, seed, view, ref, srcs, P1, P2, G1, Kinv, c_rel,
    normals, depths, costs_cur, weights, anchors, anchor_counts,
    anchor_weights, reliable, use_deform, constraint_on,
    d_min, d_max, alpha, beta, mu,
    size, central_stride, anchor_stride, sigma_c, lam, forced,
):
    """Refinement pass: perturbed / random / mixed candidates per pixel,
    depths drawn from the aggregated epipolar interval and normals
    restricted to the admissible hemisphere intersection."""
    height, width = ref.shape
    max_anchors = anchors.shape[2]
    cos_cone = math.cos(math.radians(10.0))
    ns = size * size
    for y in prange(height):
        H = np.empty((3, 3))
        scratch_w = np.empty(max_anchors)
        interval = np.empty(4)
        cxs = np.empty(ns, dtype=np.float64)
        cys = np.empty(ns, dtype=np.float64)
        cwv = np.empty(ns)
        cwa = np.empty(ns)
        cwaa = np.empty(ns)
        anchor_ok = np.zeros(max_anchors, dtype=np.bool_)
        axs = np.empty((max_anchors, ns), dtype=np.float64)
        ays = np.empty((max_anchors, ns), dtype=np.float64)
        awv = np.empty((max_anchors, ns))
        awa = np.empty((max_anchors, ns))
        awaa = np.empty((max_anchors, ns))
        for x in range(width):
            pix = y * width + x
            rx, ry, rz = _ray(Kinv, float(x), float(y))
            cur_n0 = normals[y, x, 0]
            cur_n1 = normals[y, x, 1]
            cur_n2 = normals[y, x, 2]
            cur_d = depths[y, x]
            deform = use_deform and (not reliable[y, x])
            n_slots = max_anchors if deform else 0
            nc_s, na_s = _prep_pixel(
                ref, x, y, size, central_stride, anchor_stride, sigma_c,
                anchors[y, x], n_slots,
                cxs, cys, cwv, cwa, cwaa, anchor_ok, axs, ays, awv, awa, awaa,
            )

            depth_interval(
                x, y, cur_d, G1, P2, Kinv, weights[y, x],
                alpha, beta, mu, d_min, d_max, interval,
            )
            len_l = interval[1] - interval[0]
            len_r = interval[3] - interval[2]
            total = len_l + len_r

            ctr = 0

            # perturbed depth from the interval union
            u = rand01(seed, view, pix, it * 8 + _STAGE_REFINE, ctr)
            ctr += 1
            if total > 0.0:
                t = u * total
                if t <= len_l:
                    d_pert = interval[0] + t
                else:
                    d_pert = interval[2] + (t - len_l)
            else:
                d_pert = interval[0]

            # perturbed normal: 10-degree cone, rejected against constraints
            pn0, pn1, pn2 = cur_n0, cur_n1, cur_n2
            for _ in range(32):
                u1 = rand01(seed, view, pix, it * 8 + _STAGE_REFINE, ctr)
                u2 = rand01(seed, view, pix, it * 8 + _STAGE_REFINE, ctr + 1)
                ctr += 2
                t0, t1, t2 = _cone_sample(cur_n0, cur_n1, cur_n2, cos_cone, u1, u2)
                if t0 * rx + t1 * ry + t2 * rz > 0.0:
                    continue
                if constraint_on and _violates_constraints(
                    t0, t1, t2, rx, ry, rz, d_pert, c_rel, weights[y, x]
                ):
                    continue
                pn0, pn1, pn2 = t0, t1, t2
                break

            # random depth and admissible random normal
            u = rand01(seed, view, pix, it * 8 + _STAGE_REFINE, ctr)
            ctr += 1
            d_rand = d_min + u * (d_max - d_min)
            rn0, rn1, rn2 = cur_n0, cur_n1, cur_n2
            for _ in range(32):
                u1 = rand01(seed, view, pix, it * 8 + _STAGE_REFINE, ctr)
                u2 = rand01(seed, view, pix, it * 8 + _STAGE_REFINE, ctr + 1)
                ctr += 2
                t0, t1, t2 = _sample_sphere(u1, u2)
                if t0 * rx + t1 * ry + t2 * rz > 0.0:
                    t0, t1, t2 = -t0, -t1, -t2
                if constraint_on and _violates_constraints(
                    t0, t1, t2, rx, ry, rz, d_rand, c_rel, weights[y, x]
                ):
                    continue
                rn0, rn1, rn2 = t0, t1, t2
                break

            # when the incumbent normal violates the (newly active)
            # constraints, the best admissible candidate replaces it
            # even at a higher cost
            force = constraint_on and _violates_constraints(
                cur_n0, cur_n1, cur_n2, rx, ry, rz, cur_d, c_rel, weights[y, x]
            )
            forced[y, x] = force
            best_cost = 1e30 if force else costs_cur[y, x]
            best_n0, best_n1, best_n2 = cur_n0, cur_n1, cur_n2
            best_d = cur_d
            selected = False

            for cand in range(3):
                if cand == 0:
                    n0, n1, n2, d = pn0, pn1, pn2, d_pert
                elif cand == 1:
                    n0, n1, n2, d = rn0, rn1, rn2, d_rand
                else:
                    n0, n1, n2, d = rn0, rn1, rn2, d_pert
                if d < d_min or d > d_max:
                    continue
                if constraint_on and _violates_constraints(
                    n0, n1, n2, rx, ry, rz, d, c_rel, weights[y, x]
                ):
                    continue
                cost = _aggregated_cost_pre(
                    srcs, P1, P2, Kinv, x, y, n0, n1, n2, d,
                    weights[y, x],
                    cxs, cys, cwv, cwa, cwaa, nc_s, na_s,
                    n_slots, anchor_ok, axs, ays, awv, awa, awaa,
                    anchors[y, x], anchor_weights, lam, H, scratch_w,
                )
                if cost < best_cost:
                    best_cost = cost
                    best_n0, best_n1, best_n2, best_d = n0, n1, n2, d
                    selected = True

            if not selected:
                best_cost = costs_cur[y, x]

            normals[y, x, 0] = best_n0
            normals[y, x, 1] = best_n1
            normals[y, x, 2] = best_n2
            depths[y, x] = best_d
            costs_cur[y, x] = best_cost
