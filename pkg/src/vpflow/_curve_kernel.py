"""Compiled single pass geometry for curves (n = 1).

Same formulas as the array code in :mod:`vpflow.geometry`, fused with the
periodic fourth order stencils so one call replaces a few dozen array
operations.  Strict IEEE arithmetic (no fastmath), so results are
reproducible bit for bit.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def curve_geometry(u, hx, psi, pt, px, s, st, sx):
    N = u.shape[0]
    du = np.empty(N)
    ddu = np.empty(N)
    q = np.empty(N)
    v = np.empty(N)
    g = np.empty(N)
    sqrtg = np.empty(N)
    chris = np.empty(N)
    h = np.empty(N)
    nu0 = np.empty(N)
    nu1 = np.empty(N)
    c1 = 12.0 * hx
    c2 = 12.0 * hx * hx
    for i in range(N):
        fp1 = u[(i + 1) % N]
        fm1 = u[(i - 1) % N]
        fp2 = u[(i + 2) % N]
        fm2 = u[(i - 2) % N]
        d = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / c1
        dd = (16.0 * (fp1 + fm1) - (fp2 + fm2) - 30.0 * u[i]) / c2
        du[i] = d
        ddu[i] = dd
        ub = d / s[i]
        qi = ub * d
        q[i] = qi
        vi = math.sqrt(1.0 - qi) if qi < 1.0 else math.nan
        v[i] = vi
        ep = math.exp(psi[i])
        e2 = ep * ep
        w = s[i] - d * d
        gi = e2 * w
        g[i] = gi
        sqrtg[i] = ep * math.sqrt(s[i]) * vi
        dg = e2 * (2.0 * (pt[i] * d + px[i]) * w + st[i] * d + sx[i] - 2.0 * d * dd)
        ch = 0.5 * dg * (1.0 / gi)
        chris[i] = ch
        br = -(dd - ch * d) - pt[i] * d * d - 2.0 * px[i] * d - (pt[i] * s[i] + 0.5 * st[i])
        h[i] = ep * vi * br
        c = -1.0 / (ep * vi)
        nu0[i] = c
        nu1[i] = c * ub
    return du, ddu, q, v, g, sqrtg, chris, h, nu0, nu1
