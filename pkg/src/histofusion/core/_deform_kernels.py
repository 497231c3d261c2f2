"""Compiled loops for modulated deformable sampling (channels-last layout)."""
from __future__ import annotations

import math

from numba import njit


@njit(cache=True, inline="always")
def _corners(px, py, h, w):
    fx = math.floor(px)
    fy = math.floor(py)
    lx = px - fx
    ly = py - fy
    ix = int(fx)
    iy = int(fy)
    vx0 = 0 <= ix < w
    vx1 = 0 <= ix + 1 < w
    vy0 = 0 <= iy < h
    vy1 = 0 <= iy + 1 < h
    # clamp indices so reads stay in bounds; invalid corners carry zero weight
    x0 = min(max(ix, 0), w - 1)
    x1 = min(max(ix + 1, 0), w - 1)
    y0 = min(max(iy, 0), h - 1)
    y1 = min(max(iy + 1, 0), h - 1)
    return lx, ly, x0, x1, y0, y1, vx0 and vy0, vx1 and vy0, vx0 and vy1, vx1 and vy1


@njit(cache=True, fastmath=True, error_model="numpy")
def deform_forward(xt, off, mod, base, groups, out):
    # every array is channels-last: xt, out (N, H, W, C); off (N, H, W, 2GK) ordered
    # (g, k, [dx, dy]); mod (N, H, W, GK)
    n_, h, w, c = xt.shape
    k_ = base.shape[0]
    cg = c // groups
    for n in range(n_):
        for y in range(h):
            for x in range(w):
                for g in range(groups):
                    c0 = g * cg
                    for k in range(k_):
                        gk = g * k_ + k
                        px = x + base[k, 1] + off[n, y, x, 2 * gk]
                        py = y + base[k, 0] + off[n, y, x, 2 * gk + 1]
                        m = mod[n, y, x, gk]
                        lx, ly, x0, x1, y0, y1, v00, v01, v10, v11 = _corners(px, py, h, w)
                        w00 = m * (1 - ly) * (1 - lx) if v00 else 0.0
                        w01 = m * (1 - ly) * lx if v01 else 0.0
                        w10 = m * ly * (1 - lx) if v10 else 0.0
                        w11 = m * ly * lx if v11 else 0.0
                        for j in range(c0, c0 + cg):
                            out[n, y, x, j] += (w00 * xt[n, y0, x0, j] + w01 * xt[n, y0, x1, j]
                                                + w10 * xt[n, y1, x0, j] + w11 * xt[n, y1, x1, j])


@njit(cache=True, fastmath=True, error_model="numpy")
def deform_backward(xt, off, mod, base, groups, gout, gx, goff, gmod):
    # gout, gx: (N, H, W, C); goff, gmod laid out like off, mod
    n_, h, w, c = xt.shape
    k_ = base.shape[0]
    cg = c // groups
    for n in range(n_):
        for y in range(h):
            for x in range(w):
                for g in range(groups):
                    c0 = g * cg
                    for k in range(k_):
                        gk = g * k_ + k
                        px = x + base[k, 1] + off[n, y, x, 2 * gk]
                        py = y + base[k, 0] + off[n, y, x, 2 * gk + 1]
                        m = mod[n, y, x, gk]
                        lx, ly, x0, x1, y0, y1, v00, v01, v10, v11 = _corners(px, py, h, w)
                        f00 = 1.0 if v00 else 0.0
                        f01 = 1.0 if v01 else 0.0
                        f10 = 1.0 if v10 else 0.0
                        f11 = 1.0 if v11 else 0.0
                        w00 = f00 * (1 - ly) * (1 - lx)
                        w01 = f01 * (1 - ly) * lx
                        w10 = f10 * ly * (1 - lx)
                        w11 = f11 * ly * lx
                        gm = 0.0
                        gpx = 0.0
                        gpy = 0.0
                        for j in range(c0, c0 + cg):
                            a = f00 * xt[n, y0, x0, j]
                            b = f01 * xt[n, y0, x1, j]
                            cc = f10 * xt[n, y1, x0, j]
                            d = f11 * xt[n, y1, x1, j]
                            go = gout[n, y, x, j]
                            gm += go * ((1 - ly) * ((1 - lx) * a + lx * b) + ly * ((1 - lx) * cc + lx * d))
                            gpx += go * ((1 - ly) * (b - a) + ly * (d - cc))
                            gpy += go * ((1 - lx) * (cc - a) + lx * (d - b))
                            mg = m * go
                            gx[n, y0, x0, j] += w00 * mg
                            gx[n, y0, x1, j] += w01 * mg
                            gx[n, y1, x0, j] += w10 * mg
                            gx[n, y1, x1, j] += w11 * mg
                        gmod[n, y, x, gk] += gm
                        goff[n, y, x, 2 * gk] += m * gpx
                        goff[n, y, x, 2 * gk + 1] += m * gpy
