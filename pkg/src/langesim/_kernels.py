"""Compiled hot path: d=2, scalar-mass Strang stepping with integer-dispatched
potential/force evaluation. fastmath stays off; bit-exact reproducibility of
outputs under a fixed seed is part of the contract.
"""

import math
from functools import lru_cache

import numpy as np
from numba import njit

_POT_IDS = {"zero": 0, "cos2d": 1, "separable-1d": 2}


def pot_id(pot):
    return _POT_IDS.get(pot.descriptor)


def force_id(field_):
    """Map a ForceField to (fid, mode_n), or None when not kernel-supported."""
    kind = field_.kind
    if kind == "zero":
        return (0, 0)
    if kind == "cosine-mode":
        return (1, field_.mode_n)
    if kind == "nm":
        return (2, 0)
    if kind == "sr":
        return (1, 2)
    if kind == "constant-dir":
        return (3, 0)
    if kind == "gradient":
        w = field_.w_name
        if w == "0":
            return (0, 0)
        if w == "cos(x)":
            return (4, 0)
        if w == "cos(x)+cos(y)":
            return (5, 0)
    return None


@lru_cache(maxsize=64)
def cosine_table(I):
    return np.cos(2.0 * np.pi * np.arange(I) / I)


@njit(cache=True, nogil=True)
def eval_g(x, y, phase_cos, beta, eta, pid, fid, mode_n):
    """Return (gx, gy, f0x, f0y): g = -grad V + eta*phase_cos*F_spatial and
    the raw spatial force (mode-0 part for unmodulated fields)."""
    sx = math.sin(x)
    cx = math.cos(x)
    sy = math.sin(y)
    cy = math.cos(y)
    cos2x = 2.0 * cx * cx - 1.0
    if pid == 1:
        sin2x = 2.0 * sx * cx
        sinxy = sx * cy - cx * sy
        cosxy = cx * cy + sx * sy
        V = 2.0 * cos2x + cy + cosxy
        gx = 4.0 * sin2x + sinxy
        gy = sy - sinxy
    elif pid == 2:
        V = cx + cy
        gx = sx
        gy = sy
    else:
        V = 0.0
        gx = 0.0
        gy = 0.0
    f0x = 0.0
    f0y = 0.0
    if fid == 1:
        if mode_n == 0:
            cnx = 1.0
        elif mode_n == 1:
            cnx = cx
        else:
            ckm1 = cx
            ck = cos2x
            for _ in range(mode_n - 2):
                ckm1, ck = ck, 2.0 * cx * ck - ckm1
            cnx = ck
        f0x = math.exp(beta * V) * cnx
    elif fid == 2:
        f0x = math.exp(beta * V) * (-1.0 + 3.0 * cos2x)
    elif fid == 3:
        f0x = 1.0
    elif fid == 4:
        f0x = sx
    elif fid == 5:
        f0x = sx
        f0y = sy
    gx += eta * phase_cos * f0x
    gy += eta * phase_cos * f0y
    return gx, gy, f0x, f0y


@njit(cache=True, nogil=True)
def strang_chunk(
    vec, g_cache, step0, nsteps,
    dt, a_coef, s_coef, beta, m, eta,
    pid, fid, mode_n, modulated, I, cos_tab,
    cellx, celly, noise,
    binsum, binsumsq, bincnt, acc_vel, acc_vsum, acc_force, out,
):
    """Advance nsteps; returns -1, or the chunk-relative index of a blow-up.

    vec = [x, y, px, py, Qx, Qy]; g_cache carries -grad V + eta*F at the
    current (t^n, q^n) so each step evaluates forces once. binsum/binsumsq/
    bincnt accumulate post-step velocities per phase bin; out gets the chunk
    sums (vx, vy, f0x, f0y) for batch-mean bookkeeping.
    """
    x = vec[0]
    y = vec[1]
    px = vec[2]
    py = vec[3]
    Qx = vec[4]
    Qy = vec[5]
    g0x = g_cache[0]
    g0y = g_cache[1]
    hdt = 0.5 * dt
    minv = 1.0 / m
    vsx = 0.0
    vsy = 0.0
    fsx = 0.0
    fsy = 0.0
    for k in range(nsteps):
        i1 = (step0 + k + 1) % I
        phx = a_coef * px + hdt * g0x + s_coef * noise[k, 0, 0]
        phy = a_coef * py + hdt * g0y + s_coef * noise[k, 0, 1]
        dx = dt * minv * phx
        dy = dt * minv * phy
        x = (x + dx) % cellx
        y = (y + dy) % celly
        Qx += dx
        Qy += dy
        pc = cos_tab[i1] if modulated else 1.0
        g0x, g0y, f0x, f0y = eval_g(x, y, pc, beta, eta, pid, fid, mode_n)
        px = a_coef * phx + hdt * g0x + s_coef * noise[k, 1, 0]
        py = a_coef * phy + hdt * g0y + s_coef * noise[k, 1, 1]
        if not (abs(px) < 1e100 and abs(py) < 1e100 and x == x and y == y):
            vec[0] = x
            vec[1] = y
            vec[2] = px
            vec[3] = py
            vec[4] = Qx
            vec[5] = Qy
            return k
        vx = px * minv
        vy = py * minv
        if acc_vel:
            binsum[i1, 0] += vx
            binsum[i1, 1] += vy
            binsumsq[i1, 0] += vx * vx
            binsumsq[i1, 1] += vy * vy
            bincnt[i1] += 1
        if acc_vsum:
            vsx += vx
            vsy += vy
        if acc_force:
            fsx += f0x
            fsy += f0y
    vec[0] = x
    vec[1] = y
    vec[2] = px
    vec[3] = py
    vec[4] = Qx
    vec[5] = Qy
    g_cache[0] = g0x
    g_cache[1] = g0y
    out[0] = vsx
    out[1] = vsy
    out[2] = fsx
    out[3] = fsy
    return -1
