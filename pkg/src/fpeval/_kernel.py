"""Compiled core of the built-in minutiae matcher.

Templates arrive as ``(n, 4)`` int64 arrays of x, y, angle (integer degrees)
and quality. Angles are integers, so rotation uses a per-degree lookup table.
"""

import numpy as np
from numba import njit

COS_TABLE = np.cos(np.deg2rad(np.arange(360, dtype=np.float64)))
SIN_TABLE = np.sin(np.deg2rad(np.arange(360, dtype=np.float64)))

# key packing: translation bins are offset into [0, _SPAN)
_OFFSET = 100000
_SPAN = 2 * _OFFSET + 1


@njit(cache=True)
def _unpack(key, n_theta):
    b = key % n_theta
    rest = key // n_theta
    by = rest % _SPAN - _OFFSET
    bx = rest // _SPAN - _OFFSET
    if b > n_theta // 2:
        b -= n_theta
    return bx, by, b


@njit(cache=True)
def paired_count(probe, gallery, bin_xy, bin_theta, r_pair, theta_pair, quality_weighted, cos_t, sin_t):
    """Hough-align ``probe`` onto ``gallery`` and return the (weighted) number of paired minutiae."""
    n_p = probe.shape[0]
    n_g = gallery.shape[0]
    n_theta = int(round(360.0 / bin_theta))
    n_votes = n_p * n_g

    size = 1
    while size < 2 * n_votes:
        size *= 2
    mask = size - 1
    slot_key = np.full(size, -1, np.int64)
    slot_count = np.zeros(size, np.int64)

    vdx = np.empty(n_votes)
    vdy = np.empty(n_votes)
    vdt = np.empty(n_votes, np.int64)
    vkey = np.empty(n_votes, np.int64)

    # 1. every probe x gallery pair votes for the rigid transform mapping one onto the other
    v = 0
    for i in range(n_p):
        px = probe[i, 0]
        py = probe[i, 1]
        pt = probe[i, 2]
        for j in range(n_g):
            t = gallery[j, 2] - pt
            if t < 0:
                t += 360
            c = cos_t[t]
            s = sin_t[t]
            dx = gallery[j, 0] - (c * px - s * py)
            dy = gallery[j, 1] - (s * px + c * py)
            bx = int(np.floor(dx / bin_xy + 0.5))
            by = int(np.floor(dy / bin_xy + 0.5))
            bt = int(np.floor(t / bin_theta + 0.5)) % n_theta
            key = ((bx + _OFFSET) * _SPAN + (by + _OFFSET)) * n_theta + bt
            vdx[v] = dx
            vdy[v] = dy
            vdt[v] = t
            vkey[v] = key
            h = (key * 2654435761) & mask
            while slot_key[h] != -1 and slot_key[h] != key:
                h = (h + 1) & mask
            slot_key[h] = key
            slot_count[h] += 1
            v += 1

    # 2. best bin; ties -> smallest |dx|+|dy|, then |dtheta|, then packed key
    best_key = -1
    best_n = 0
    best_c1 = 0
    best_c2 = 0
    for h in range(size):
        key = slot_key[h]
        if key < 0:
            continue
        cnt = slot_count[h]
        bx, by, bt = _unpack(key, n_theta)
        c1 = abs(bx) + abs(by)
        c2 = abs(bt)
        if (
            cnt > best_n
            or (cnt == best_n and c1 < best_c1)
            or (cnt == best_n and c1 == best_c1 and c2 < best_c2)
            or (cnt == best_n and c1 == best_c1 and c2 == best_c2 and key < best_key)
        ):
            best_key = key
            best_n = cnt
            best_c1 = c1
            best_c2 = c2

    # refine inside the winning bin with per-component medians
    centre = (best_key % n_theta) * bin_theta
    sx = np.empty(best_n)
    sy = np.empty(best_n)
    st = np.empty(best_n)
    q = 0
    for v in range(n_votes):
        if vkey[v] == best_key:
            sx[q] = vdx[v]
            sy[q] = vdy[v]
            st[q] = (vdt[v] - centre + 180.0) % 360.0 - 180.0
            q += 1
    tx = np.median(sx)
    ty = np.median(sy)
    tt = centre + np.median(st)
    rad = np.deg2rad(tt)
    c = np.cos(rad)
    s = np.sin(rad)

    # 3. greedy pairing in probe order, nearest free gallery minutia, ties -> lower index
    used = np.zeros(n_g, np.bool_)
    r2 = r_pair * r_pair
    paired = 0.0
    for i in range(n_p):
        x = c * probe[i, 0] - s * probe[i, 1] + tx
        y = s * probe[i, 0] + c * probe[i, 1] + ty
        a = (probe[i, 2] + tt) % 360.0
        pick = -1
        pick_d = 0.0
        for j in range(n_g):
            if used[j]:
                continue
            ex = x - gallery[j, 0]
            ey = y - gallery[j, 1]
            d = ex * ex + ey * ey
            if d > r2:
                continue
            if abs((a - gallery[j, 2] + 180.0) % 360.0 - 180.0) > theta_pair:
                continue
            if pick < 0 or d < pick_d:
                pick = j
                pick_d = d
        if pick >= 0:
            used[pick] = True
            if quality_weighted:
                paired += min(probe[i, 3], gallery[pick, 3]) / 100.0
            else:
                paired += 1.0
    return paired
