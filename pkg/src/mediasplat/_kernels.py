"""Per-pixel compositing kernels (numba).

Each call processes a band of image rows. Medium-aware color per pixel is accumulated as

    c_med + sum_i w_i (c_i exp(-att z_i) - c_med exp(-bs z_i)),   w_i = alpha_i T_i,

which equals the direct + segment-backscatter + tail form term for term once the
backscatter segments are telescoped.
"""

import numpy as np
from numba import njit

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.999
T_MIN = 1e-4
DEPTH_GUARD = 1e-6

# column layout of the per-primitive gradient buffer
G_MEAN = 0       # 2
G_CONIC = 2      # 3 (a, b, c)
G_OPACITY = 5
G_COLOR = 6      # 3
G_DEPTH = 9
G_ABS = 10       # 2
G_HITS = 12
G_COLS = 13


@njit(nogil=True, cache=True)
def _candidates(order, bbox, ylo, yhi, out):
    n = 0
    for k in range(order.size):
        g = order[k]
        if bbox[g, 3] >= ylo and bbox[g, 2] <= yhi:
            out[n] = g
            n += 1
    return n


@njit(nogil=True, cache=True)
def forward_rows(row0, row1, width, order, mean2d, conic, opacity, bbox, colors, depth,
                 cmed, satt, sbs, early_stop, out_color, out_restored, out_depth, out_trans):
    band = np.empty(order.size, np.int64)
    nb = _candidates(order, bbox, row0 + 0.5, row1 - 0.5, band)
    row_list = np.empty(max(nb, 1), np.int64)
    for row in range(row0, row1):
        py = row + 0.5
        nr = _candidates(band[:nb], bbox, py, py, row_list)
        for col in range(width):
            px = col + 0.5
            p = row * width + col
            T = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            r0 = 0.0
            r1 = 0.0
            r2 = 0.0
            dnum = 0.0
            for m in range(nr):
                g = row_list[m]
                if px < bbox[g, 0] or px > bbox[g, 1]:
                    continue
                dx = px - mean2d[g, 0]
                dy = py - mean2d[g, 1]
                q = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy + conic[g, 2] * dy * dy
                alpha = opacity[g] * np.exp(-0.5 * q)
                if alpha < ALPHA_MIN:
                    continue
                if alpha > ALPHA_MAX:
                    alpha = ALPHA_MAX
                w = alpha * T
                z = depth[g]
                k0 = colors[g, 0]
                k1 = colors[g, 1]
                k2 = colors[g, 2]
                c0 += w * (k0 * np.exp(-satt[p, 0] * z) - cmed[p, 0] * np.exp(-sbs[p, 0] * z))
                c1 += w * (k1 * np.exp(-satt[p, 1] * z) - cmed[p, 1] * np.exp(-sbs[p, 1] * z))
                c2 += w * (k2 * np.exp(-satt[p, 2] * z) - cmed[p, 2] * np.exp(-sbs[p, 2] * z))
                r0 += w * k0
                r1 += w * k1
                r2 += w * k2
                dnum += w * z
                T *= 1.0 - alpha
                if early_stop and T < T_MIN:
                    break
            out_color[p, 0] = c0 + cmed[p, 0]
            out_color[p, 1] = c1 + cmed[p, 1]
            out_color[p, 2] = c2 + cmed[p, 2]
            out_restored[p, 0] = r0
            out_restored[p, 1] = r1
            out_restored[p, 2] = r2
            out_trans[p] = T
            acc = 1.0 - T
            out_depth[p] = dnum / acc if acc >= DEPTH_GUARD else 0.0


@njit(nogil=True, cache=True)
def backward_rows(row0, row1, width, order, mean2d, conic, opacity, bbox, colors, depth,
                  cmed, satt, sbs, early_stop, g_color, g_restored, g_depth, g_trans,
                  gbuf, g_cmed, g_satt, g_sbs):
    band = np.empty(order.size, np.int64)
    nb = _candidates(order, bbox, row0 + 0.5, row1 - 0.5, band)
    row_list = np.empty(max(nb, 1), np.int64)
    f_idx = np.empty(max(nb, 1), np.int64)
    f_alpha = np.empty(max(nb, 1))
    f_T = np.empty(max(nb, 1))
    f_G = np.empty(max(nb, 1))
    f_dx = np.empty(max(nb, 1))
    f_dy = np.empty(max(nb, 1))
    f_clamped = np.empty(max(nb, 1), np.bool_)
    ea = np.empty(3)
    eb = np.empty(3)
    for row in range(row0, row1):
        py = row + 0.5
        nr = _candidates(band[:nb], bbox, py, py, row_list)
        for col in range(width):
            px = col + 0.5
            p = row * width + col
            T = 1.0
            dnum = 0.0
            cnt = 0
            for m in range(nr):
                g = row_list[m]
                if px < bbox[g, 0] or px > bbox[g, 1]:
                    continue
                dx = px - mean2d[g, 0]
                dy = py - mean2d[g, 1]
                q = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy + conic[g, 2] * dy * dy
                G = np.exp(-0.5 * q)
                alpha = opacity[g] * G
                if alpha < ALPHA_MIN:
                    continue
                clamped = alpha > ALPHA_MAX
                if clamped:
                    alpha = ALPHA_MAX
                f_idx[cnt] = g
                f_alpha[cnt] = alpha
                f_T[cnt] = T
                f_G[cnt] = G
                f_dx[cnt] = dx
                f_dy[cnt] = dy
                f_clamped[cnt] = clamped
                cnt += 1
                dnum += alpha * T * depth[g]
                T *= 1.0 - alpha
                if early_stop and T < T_MIN:
                    break
            acc = 1.0 - T
            if acc >= DEPTH_GUARD:
                dval = dnum / acc
                gdn = g_depth[p] / acc
            else:
                dval = 0.0
                gdn = 0.0
            gt = g_trans[p]
            suffix = 0.0
            sum_wb0 = 0.0
            sum_wb1 = 0.0
            sum_wb2 = 0.0
            att0 = 0.0
            att1 = 0.0
            att2 = 0.0
            bs0 = 0.0
            bs1 = 0.0
            bs2 = 0.0
            for m in range(cnt - 1, -1, -1):
                g = f_idx[m]
                alpha = f_alpha[m]
                Ti = f_T[m]
                w = alpha * Ti
                z = depth[g]
                phi = gdn * (z - dval) - gt
                gz = gdn
                for ch in range(3):
                    ea[ch] = np.exp(-satt[p, ch] * z)
                    eb[ch] = np.exp(-sbs[p, ch] * z)
                    c = colors[g, ch]
                    gc = g_color[p, ch]
                    gr = g_restored[p, ch]
                    phi += gc * (c * ea[ch] - cmed[p, ch] * eb[ch]) + gr * c
                    gbuf[g, G_COLOR + ch] += w * (gc * ea[ch] + gr)
                    gz += gc * (-satt[p, ch] * c * ea[ch] + sbs[p, ch] * cmed[p, ch] * eb[ch])
                gbuf[g, G_DEPTH] += w * gz
                sum_wb0 += w * eb[0]
                sum_wb1 += w * eb[1]
                sum_wb2 += w * eb[2]
                att0 += w * colors[g, 0] * z * ea[0]
                att1 += w * colors[g, 1] * z * ea[1]
                att2 += w * colors[g, 2] * z * ea[2]
                bs0 += w * z * eb[0]
                bs1 += w * z * eb[1]
                bs2 += w * z * eb[2]
                d_alpha = Ti * phi - suffix / (1.0 - alpha)
                suffix += w * phi
                gbuf[g, G_HITS] += 1.0
                if f_clamped[m]:
                    continue
                G = f_G[m]
                gbuf[g, G_OPACITY] += d_alpha * G
                dq = -0.5 * G * opacity[g] * d_alpha
                dx = f_dx[m]
                dy = f_dy[m]
                gmx = -dq * (2.0 * conic[g, 0] * dx + 2.0 * conic[g, 1] * dy)
                gmy = -dq * (2.0 * conic[g, 1] * dx + 2.0 * conic[g, 2] * dy)
                gbuf[g, G_MEAN] += gmx
                gbuf[g, G_MEAN + 1] += gmy
                gbuf[g, G_ABS] += abs(gmx)
                gbuf[g, G_ABS + 1] += abs(gmy)
                gbuf[g, G_CONIC] += dq * dx * dx
                gbuf[g, G_CONIC + 1] += dq * 2.0 * dx * dy
                gbuf[g, G_CONIC + 2] += dq * dy * dy
            g_cmed[p, 0] = g_color[p, 0] * (1.0 - sum_wb0)
            g_cmed[p, 1] = g_color[p, 1] * (1.0 - sum_wb1)
            g_cmed[p, 2] = g_color[p, 2] * (1.0 - sum_wb2)
            g_satt[p, 0] = -g_color[p, 0] * att0
            g_satt[p, 1] = -g_color[p, 1] * att1
            g_satt[p, 2] = -g_color[p, 2] * att2
            g_sbs[p, 0] = g_color[p, 0] * cmed[p, 0] * bs0
            g_sbs[p, 1] = g_color[p, 1] * cmed[p, 1] * bs1
            g_sbs[p, 2] = g_color[p, 2] * cmed[p, 2] * bs2
