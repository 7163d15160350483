"""Compiled inner loops.

``alignment_sums`` fuses top-view warping, thresholding and the fitness
reductions so no intermediate raster is allocated. Per pixel it repeats the
arithmetic of ``imaging.warp_to_topview`` operation for operation; the test
suite checks the two routes against each other.
"""

import numba as nb
import numpy as np

_EPS = 1e-12
TILE = 8
BLOCK = 4


def support_table(mask: np.ndarray) -> np.ndarray:
    """Summed-area table of pixels whose bilinear 2x2 neighbourhood is nonzero."""
    nz = np.asarray(mask) != 0
    d = nz.copy()
    d[:-1] |= nz[1:]
    d[:, :-1] |= d[:, 1:].copy()
    sat = np.zeros((d.shape[0] + 1, d.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = d.cumsum(axis=0).cumsum(axis=1)
    return sat


@nb.njit(cache=True, nogil=True)
def _tile_is_empty(sat, h, scale, ox, oy, u0, u1, v0, v1, xmax, ymax):
    # conservative: True only if every sample in the tile reads zeros
    lo_x = np.inf
    hi_x = -np.inf
    lo_y = np.inf
    hi_y = -np.inf
    behind = 0
    for c in range(4):
        cu = u0 if c % 2 == 0 else u1
        cv = v0 if c < 2 else v1
        x = (cu - ox) / scale
        y = (cv - oy) / scale
        qw = h[2, 0] * x + h[2, 1] * y + h[2, 2]
        if not qw > _EPS:
            behind += 1
            continue
        sx = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / qw
        sy = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / qw
        lo_x = min(lo_x, sx)
        hi_x = max(hi_x, sx)
        lo_y = min(lo_y, sy)
        hi_y = max(hi_y, sy)
    # the homogeneous scale is affine over the tile: all corners behind means
    # every pixel is behind; a tile straddling the horizon must be sampled
    if behind == 4:
        return True
    if behind > 0:
        return False
    if hi_x < -1.0 or hi_y < -1.0 or lo_x > xmax + 1.0 or lo_y > ymax + 1.0:
        return True
    a0 = max(int(np.floor(lo_x)) - 1, 0)
    a1 = min(int(np.floor(hi_x)) + 1, int(xmax))
    b0 = max(int(np.floor(lo_y)) - 1, 0)
    b1 = min(int(np.floor(hi_y)) + 1, int(ymax))
    return sat[b1 + 1, a1 + 1] - sat[b0, a1 + 1] - sat[b1 + 1, a0] + sat[b0, a0] == 0


@nb.njit(cache=True, nogil=True, inline="always")
def _tile_sums(mask, template, h, scale, ox, oy, u0, u1, v0, v1, xmax, ymax):
    mh, mw = mask.shape
    num = 0.0
    den = 0.0
    for v in range(v0, v1 + 1):
        y = (v - oy) / scale
        cx = h[0, 1] * y + h[0, 2]
        cy = h[1, 1] * y + h[1, 2]
        cw = h[2, 1] * y + h[2, 2]
        for u in range(u0, u1 + 1):
            x = (u - ox) / scale
            qw = h[2, 0] * x + cw
            if not qw > _EPS:
                continue
            inv = 1.0 / qw
            sx = (h[0, 0] * x + cx) * inv
            sy = (h[1, 0] * x + cy) * inv
            if not (sx >= 0.0 and sx <= xmax and sy >= 0.0 and sy <= ymax):
                continue
            x0 = min(int(sx), mw - 2)
            y0 = min(int(sy), mh - 2)
            fx = sx - x0
            fy = sy - y0
            top = (1.0 - fx) * mask[y0, x0] + fx * mask[y0, x0 + 1]
            bottom = (1.0 - fx) * mask[y0 + 1, x0] + fx * mask[y0 + 1, x0 + 1]
            val = (1.0 - fy) * top + fy * bottom
            if val > 0.5:
                d = val - template[v, u]
                den += 1.0
            else:
                d = val
            num += d * d
    return num, den


@nb.njit(cache=True, nogil=True)
def alignment_sums(mask, sat, template, h, scale, ox, oy):
    """Return ``(sum((W - T*B)^2), sum(B))`` for the warp of ``mask`` under ``h``.

    ``W`` is ``mask`` resampled on the template grid (world ``x = (u - ox) /
    scale``, ``y = (v - oy) / scale``) and ``B = W > 0.5``. Template tiles
    whose source footprint holds no mask support are skipped; they would
    only add zeros.
    """
    th, tw = template.shape
    mh, mw = mask.shape
    xmax = mw - 1.0
    ymax = mh - 1.0
    num = 0.0
    den = 0.0
    # two-level culling: blocks of BLOCK x BLOCK tiles, then single tiles
    step = TILE * BLOCK
    for bv0 in range(0, th, step):
        bv1 = min(bv0 + step, th) - 1
        for bu0 in range(0, tw, step):
            bu1 = min(bu0 + step, tw) - 1
            if _tile_is_empty(sat, h, scale, ox, oy, bu0, bu1, bv0, bv1, xmax, ymax):
                continue
            for v0 in range(bv0, bv1 + 1, TILE):
                v1 = min(v0 + TILE - 1, bv1)
                for u0 in range(bu0, bu1 + 1, TILE):
                    u1 = min(u0 + TILE - 1, bu1)
                    if _tile_is_empty(sat, h, scale, ox, oy, u0, u1, v0, v1, xmax, ymax):
                        continue
                    n, d = _tile_sums(mask, template, h, scale, ox, oy, u0, u1, v0, v1, xmax, ymax)
                    num += n
                    den += d
    return num, den
