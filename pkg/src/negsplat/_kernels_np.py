"""Pure-NumPy splatting kernels (fallback for the compiled extension).

Both backends receive identical pre-packed inputs, sorted in compositing
order: per-splat position, principal-frame cos/sin, inverse principal
variances, opacity, signed color, and a conservative integer pixel bbox of
the cutoff ellipse.  Compositing is per-pixel ordered; tiles only schedule
work, so renders are bitwise identical for any tile size.
"""

import numpy as np


def _tile_splats(bbox, tx0, tx1, ty0, ty1):
    hit = (
        (bbox[:, 0] < tx1)
        & (bbox[:, 1] > tx0)
        & (bbox[:, 2] < ty1)
        & (bbox[:, 3] > ty0)
    )
    return np.nonzero(hit)[0]


def forward(
    pos, cos_t, sin_t, invl0, invl1, alpha, ucolor, bbox,
    background, height, width, tile, cutoff_q, t_stop,
):
    out = np.empty((height, width, 3))
    n = pos.shape[0]
    for ty0 in range(0, height, tile):
        ty1 = min(ty0 + tile, height)
        for tx0 in range(0, width, tile):
            tx1 = min(tx0 + tile, width)
            th, tw = ty1 - ty0, tx1 - tx0
            acc = np.zeros((th, tw, 3))
            trans = np.ones((th, tw))
            for k in _tile_splats(bbox, tx0, tx1, ty0, ty1):
                x0 = max(int(bbox[k, 0]), tx0)
                x1 = min(int(bbox[k, 1]), tx1)
                y0 = max(int(bbox[k, 2]), ty0)
                y1 = min(int(bbox[k, 3]), ty1)
                sl = (slice(y0 - ty0, y1 - ty0), slice(x0 - tx0, x1 - tx0))
                cx = np.arange(x0, x1, dtype=np.float64) + 0.5 - pos[k, 0]
                cy = np.arange(y0, y1, dtype=np.float64) + 0.5 - pos[k, 1]
                dx = cx[None, :]
                dy = cy[:, None]
                e0 = cos_t[k] * dx + sin_t[k] * dy
                e1 = -sin_t[k] * dx + cos_t[k] * dy
                q = e0 * e0 * invl0[k] + e1 * e1 * invl1[k]
                t_in = trans[sl]
                a = np.where(
                    (q <= cutoff_q) & (t_in >= t_stop),
                    alpha[k] * np.exp(-0.5 * q),
                    0.0,
                )
                acc[sl] += ucolor[k] * (a * t_in)[..., None]
                trans[sl] = t_in * (1.0 - a)
            out[ty0:ty1, tx0:tx1] = acc + background * trans[..., None]
    return out


def backward(
    pos, cos_t, sin_t, invl0, invl1, alpha, ucolor, bbox,
    background, grad, height, width, tile, cutoff_q, t_stop,
):
    n = pos.shape[0]
    d_pos = np.zeros((n, 2))
    d_log_scales = np.zeros((n, 2))
    d_rot = np.zeros(n)
    d_logit = np.zeros(n)
    d_ucolor = np.zeros((n, 3))
    for ty0 in range(0, height, tile):
        ty1 = min(ty0 + tile, height)
        for tx0 in range(0, width, tile):
            tx1 = min(tx0 + tile, width)
            th, tw = ty1 - ty0, tx1 - tx0
            sel = _tile_splats(bbox, tx0, tx1, ty0, ty1)
            g_tile = grad[ty0:ty1, tx0:tx1]
            if sel.size == 0 or not np.any(g_tile):
                continue
            # replay the forward sweep, keeping per-splat responses and
            # incoming transmittances
            resp = np.zeros((sel.size, th, tw))
            t_pre = np.empty((sel.size, th, tw))
            trans = np.ones((th, tw))
            geom = []
            for j, k in enumerate(sel):
                x0 = max(int(bbox[k, 0]), tx0)
                x1 = min(int(bbox[k, 1]), tx1)
                y0 = max(int(bbox[k, 2]), ty0)
                y1 = min(int(bbox[k, 3]), ty1)
                sl = (slice(y0 - ty0, y1 - ty0), slice(x0 - tx0, x1 - tx0))
                geom.append(sl)
                cx = np.arange(x0, x1, dtype=np.float64) + 0.5 - pos[k, 0]
                cy = np.arange(y0, y1, dtype=np.float64) + 0.5 - pos[k, 1]
                e0 = cos_t[k] * cx[None, :] + sin_t[k] * cy[:, None]
                e1 = -sin_t[k] * cx[None, :] + cos_t[k] * cy[:, None]
                q = e0 * e0 * invl0[k] + e1 * e1 * invl1[k]
                t_in = trans[sl]
                a = np.where(
                    (q <= cutoff_q) & (t_in >= t_stop),
                    alpha[k] * np.exp(-0.5 * q),
                    0.0,
                )
                resp[j][sl] = a
                t_pre[j] = trans
                trans[sl] = t_in * (1.0 - a)
            # back-to-front: behind[c] = sum of contributions composited
            # after the current splat, plus the background term
            behind = background[None, None, :] * trans[..., None]
            for j in range(sel.size - 1, -1, -1):
                k = sel[j]
                sl = geom[j]
                a = resp[j][sl]
                t_in = t_pre[j][sl]
                g_sl = g_tile[sl]
                weight = a * t_in
                d_ucolor[k] += np.einsum("yx,yxc->c", weight, g_sl)
                g_dot_u = g_sl @ ucolor[k]
                g_dot_behind = np.einsum("yxc,yxc->yx", g_sl, behind[sl])
                da = g_dot_u * t_in - g_dot_behind / (1.0 - a)
                dl_da_a = da * a
                d_logit[k] += float(np.sum(dl_da_a)) * (1.0 - alpha[k])
                dqc = -0.5 * dl_da_a
                x0, x1 = sl[1].start + tx0, sl[1].stop + tx0
                y0, y1 = sl[0].start + ty0, sl[0].stop + ty0
                cx = np.arange(x0, x1, dtype=np.float64) + 0.5 - pos[k, 0]
                cy = np.arange(y0, y1, dtype=np.float64) + 0.5 - pos[k, 1]
                e0 = cos_t[k] * cx[None, :] + sin_t[k] * cy[:, None]
                e1 = -sin_t[k] * cx[None, :] + cos_t[k] * cy[:, None]
                d_log_scales[k, 0] += -2.0 * invl0[k] * float(np.sum(dqc * e0 * e0))
                d_log_scales[k, 1] += -2.0 * invl1[k] * float(np.sum(dqc * e1 * e1))
                d_rot[k] += 2.0 * (invl0[k] - invl1[k]) * float(np.sum(dqc * e0 * e1))
                v0 = invl0[k] * e0
                v1 = invl1[k] * e1
                d_pos[k, 0] += -2.0 * float(np.sum(dqc * (cos_t[k] * v0 - sin_t[k] * v1)))
                d_pos[k, 1] += -2.0 * float(np.sum(dqc * (sin_t[k] * v0 + cos_t[k] * v1)))
                behind[sl] += ucolor[k] * weight[..., None]
    return d_pos, d_log_scales, d_rot, d_logit, d_ucolor
