"""Geometry of spacelike graphs ``{t = u(x)}`` over the torus.

Sign convention: all curvatures are taken with respect to the past directed
unit normal ``nu = -e^{-psi} v^{-1} (1, sigma^{ij} u_j)``.  With this choice
the slice ``u = c`` of a metric with ``sigma = delta`` and ``psi = psi(t)`` has
every principal curvature equal to ``-e^{-psi(c)} psi'(c)``; for
``e^psi = (-t)^{-p}`` that is ``-p (-t)^{p-1}``, positive when ``p < 0``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import ambient as amb
from .errors import NotSpacelike, NotSupported
from .grid import Grid, ScalarField, d1, gradient_and_hessian
from .linalg import det_small, inv_small, principal_curvatures  # noqa: F401  (re-exported)

SPACELIKE_MARGIN = 1e-6
CHUNK_ALIGN = 16


@dataclass
class GraphGeometry:
    """Per-node geometry; arrays have the grid shape plus trailing index axes."""

    grid: Grid
    u: np.ndarray
    Du: np.ndarray          # u_i
    ubreve: np.ndarray      # sigma^{ij} u_j
    v: np.ndarray
    g: np.ndarray           # g_ij
    ginv: np.ndarray        # g^{ij}
    sqrtg: np.ndarray
    nu: np.ndarray          # contravariant, index 0 is time
    h: np.ndarray           # h_ij
    kappa: np.ndarray       # ascending
    christoffel: np.ndarray  # [..., k, i, j] = Gamma^k_ij of g
    psi: np.ndarray
    du_norm2_sigma: np.ndarray

    @property
    def vtilde(self):
        return 1.0 / self.v

    @property
    def n(self):
        return self.grid.n


def _chunks(size, workers):
    if workers <= 1 or size <= CHUNK_ALIGN:
        return [(0, size)]
    step = -(-size // workers)
    step = -(-step // CHUNK_ALIGN) * CHUNK_ALIGN
    return [(s, min(s + step, size)) for s in range(0, size, step)]


def _map_chunks(fn, arrays, size, workers):
    """Apply ``fn`` to row blocks of the flat ``arrays`` and reassemble."""
    spans = _chunks(size, workers)
    if len(spans) == 1:
        return fn(*arrays)
    parts_in = [[a[s:e] for a in arrays] for s, e in spans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda args: fn(*args), parts_in))
    return {k: np.concatenate([p[k] for p in parts], axis=0) for k in parts[0]}


def _pointwise(spec, u, x, Du, DDu):
    """Geometry at a block of nodes given ``u``, ``Du``, ``D^2 u``."""
    n = spec.n
    psi, pt, px = spec.psi_all(u, x, check=False)
    s, st, sx = spec.sigma_all(u, x, check=False)
    if n == 1:
        return _pointwise_curve(psi, pt, px[..., 0], s[..., 0, 0], st[..., 0, 0], sx[..., 0, 0, 0],
                                Du[..., 0], DDu[..., 0, 0])
    sinv, _ = inv_small(s)
    ub = np.einsum("...ij,...j->...i", sinv, Du)
    q = np.einsum("...i,...i->...", ub, Du)
    with np.errstate(invalid="ignore"):
        v = np.sqrt(1.0 - q)
    e2 = np.exp(2.0 * psi)
    uu = Du[..., :, None] * Du[..., None, :]
    g = e2[..., None, None] * (s - uu)
    ginv = np.exp(-2.0 * psi)[..., None, None] * (sinv + ub[..., :, None] * ub[..., None, :] / (v * v)[..., None, None])
    sqrtg = np.exp(n * psi) * np.sqrt(det_small(s)) * v

    # total derivatives along the graph: D_k f = f_t u_k + f_{x_k}
    Dpsi = pt[..., None] * Du + px
    Dsig = st[..., :, :, None] * Du[..., None, None, :] + sx
    # dg[..., k, i, j] = d_k g_ij
    dg = e2[..., None, None, None] * (
        2.0 * Dpsi[..., :, None, None] * (s - uu)[..., None, :, :]
        + np.moveaxis(Dsig, -1, -3)
        - np.einsum("...ik,...j->...kij", DDu, Du)
        - np.einsum("...i,...jk->...kij", Du, DDu))
    low = 0.5 * (np.swapaxes(dg, -3, -2) + np.moveaxis(dg, -3, -1) - dg)  # [l, i, j]
    chris = np.einsum("...kl,...lij->...kij", ginv, low)

    cov_hess = DDu - np.einsum("...kij,...k->...ij", chris, Du)
    g0ij = pt[..., None, None] * s + 0.5 * st
    bracket = (-cov_hess - pt[..., None, None] * uu
               - px[..., :, None] * Du[..., None, :] - Du[..., :, None] * px[..., None, :] - g0ij)
    h = (np.exp(psi) * v)[..., None, None] * bracket
    h = 0.5 * (h + np.swapaxes(h, -1, -2))

    nu = np.empty(u.shape + (n + 1,))
    c = -np.exp(-psi) / v
    nu[..., 0] = c
    nu[..., 1:] = c[..., None] * ub
    return {"psi": psi, "ub": ub, "q": q, "v": v, "g": g, "ginv": ginv, "sqrtg": sqrtg,
            "chris": chris, "h": h, "nu": nu}


def _pointwise_curve(psi, pt, px, s, st, sx, du, ddu):
    # the n = 1 case of _pointwise with scalars in place of 1x1 matrices
    ub = du / s
    q = ub * du
    with np.errstate(invalid="ignore"):
        v = np.sqrt(1.0 - q)
    ep = np.exp(psi)
    e2 = ep * ep
    w = s - du * du
    g = e2 * w
    ginv = 1.0 / g
    sqrtg = ep * np.sqrt(s) * v
    dg = e2 * (2.0 * (pt * du + px) * w + st * du + sx - 2.0 * du * ddu)
    chris = 0.5 * dg * ginv
    bracket = -(ddu - chris * du) - pt * du * du - 2.0 * px * du - (pt * s + 0.5 * st)
    h = ep * v * bracket
    c = -1.0 / (ep * v)
    m = psi.shape
    return {"psi": psi, "ub": ub.reshape(m + (1,)), "q": q, "v": v, "g": g.reshape(m + (1, 1)),
            "ginv": ginv.reshape(m + (1, 1)), "sqrtg": sqrtg, "chris": chris.reshape(m + (1, 1, 1)),
            "h": h.reshape(m + (1, 1)), "nu": np.stack([c, c * ub], axis=-1)}


def _curve_compiled(spec, u, x):
    from ._curve_kernel import curve_geometry

    psi, pt, px = spec.psi_all(u, x, check=False)
    s, st, sx = spec.sigma_all(u, x, check=False)
    du, ddu, q, v, g, sqrtg, chris, h, nu0, nu1 = curve_geometry(
        u, spec.periods[0] / u.shape[0], psi, pt, np.ascontiguousarray(px[:, 0]),
        np.ascontiguousarray(s[:, 0, 0]), np.ascontiguousarray(st[:, 0, 0]),
        np.ascontiguousarray(sx[:, 0, 0, 0]))
    M = u.shape[0]
    return du.reshape(M, 1), ddu.reshape(M, 1, 1), {
        "psi": psi, "ub": (du / s[:, 0, 0]).reshape(M, 1), "q": q, "v": v,
        "g": g.reshape(M, 1, 1), "ginv": (1.0 / g).reshape(M, 1, 1), "sqrtg": sqrtg,
        "chris": chris.reshape(M, 1, 1, 1), "h": h.reshape(M, 1, 1),
        "nu": np.stack([nu0, nu1], axis=-1)}


def graph_geometry(spec, u: ScalarField, margin: float = SPACELIKE_MARGIN, workers: int = 1,
                   compiled: bool = True) -> GraphGeometry:
    """All per-node geometric quantities of ``graph u``.

    Derivatives of ``u`` come from the periodic fourth order stencils; the
    remaining work is pointwise and split across ``workers`` threads in
    blocks whose boundaries do not affect any bit of the result.  Curves
    (``n = 1``) go through a compiled single pass kernel unless
    ``compiled`` is false; the array path is kept as its reference.
    """
    grid = u.grid
    if grid.n != spec.n:
        raise NotSupported("grid and ambient dimensions differ", grid=grid.n, ambient=spec.n)
    spec.check_time(u.values)
    n, M = grid.n, grid.size
    x = grid.coords().reshape(M, n)
    if n == 1 and compiled and grid.periods[0] == spec.periods[0]:
        Du, DDu, res = _curve_compiled(spec, np.ascontiguousarray(u.values, dtype=float), x)
        Du = Du.reshape(grid.shape + (1,))
    else:
        Du, DDu = gradient_and_hessian(u.values, grid.spacing)
        flat = [u.values.reshape(M), x, Du.reshape(M, n), DDu.reshape(M, n, n)]
        res = _map_chunks(lambda *a: _pointwise(spec, *a), flat, M, workers)

    q = res["q"]
    bad = ~(q < 1.0 - margin)
    if np.any(bad):
        worst = int(np.argmax(np.where(np.isfinite(q), q, np.inf)))
        raise NotSpacelike("graph is not spacelike", node=np.unravel_index(worst, grid.shape),
                           du_norm=float(np.sqrt(max(q[worst], 0.0))), margin=margin)
    kappa = principal_curvatures(res["h"], res["g"])
    shp = grid.shape
    return GraphGeometry(
        grid=grid, u=u.values, Du=Du, ubreve=res["ub"].reshape(shp + (n,)),
        v=res["v"].reshape(shp), g=res["g"].reshape(shp + (n, n)),
        ginv=res["ginv"].reshape(shp + (n, n)), sqrtg=res["sqrtg"].reshape(shp),
        nu=res["nu"].reshape(shp + (n + 1,)), h=res["h"].reshape(shp + (n, n)),
        kappa=kappa.reshape(shp + (n,)), christoffel=res["chris"].reshape(shp + (n, n, n)),
        psi=res["psi"].reshape(shp), du_norm2_sigma=q.reshape(shp))


def du_norm2_induced(geom: GraphGeometry):
    """``g^{ij} u_i u_j``."""
    return np.einsum("...ij,...i,...j->...", geom.ginv, geom.Du, geom.Du)


# -- independent second fundamental form (test oracle) -------------------------

def _c1(f, h, axis):
    return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2.0 * h)


def _c2(f, h, axis):
    return (np.roll(f, -1, axis) - 2.0 * f + np.roll(f, 1, axis)) / (h * h)


def embedding_oracle_h(spec, u: ScalarField, margin: float = SPACELIKE_MARGIN):
    """Second fundamental form from the embedding ``x(xi) = (u(xi), xi)``.

    Uses second order differences, the full ambient connection, an induced
    connection differenced from ``g_ij = <x_i, x_j>`` and a normal obtained by
    raising ``dt - u_i dx^i``; then ``h_ij = -<x_;ij, nu>``.
    """
    grid = u.grid
    n, hs = grid.n, grid.spacing
    U = u.values
    spec.check_time(U)
    x = grid.coords()
    n1 = n + 1
    # tangent vectors X[..., i, alpha]
    X = np.zeros(grid.shape + (n, n1))
    for i in range(n):
        X[..., i, 0] = _c1(U, hs[i], i)
        X[..., i, 1 + i] = 1.0
    Xij = np.zeros(grid.shape + (n, n, n1))
    for i in range(n):
        for j in range(n):
            if i == j:
                Xij[..., i, j, 0] = _c2(U, hs[i], i)
            else:
                Xij[..., i, j, 0] = _c1(_c1(U, hs[i], i), hs[j], j)
    G = amb.christoffels(spec, U, x)
    gbar = amb.metric(spec, U, x)
    gind = np.einsum("...ia,...ab,...jb->...ij", X, gbar, X)
    if np.any(np.linalg.eigvalsh(gind)[..., 0] <= 0):
        raise NotSpacelike("graph is not spacelike")
    dg = np.stack([_c1(gind, hs[k], k) for k in range(n)], axis=-3)  # [..., k, i, j]
    low = 0.5 * (np.swapaxes(dg, -3, -2) + np.moveaxis(dg, -3, -1) - dg)
    chris = np.einsum("...kl,...lij->...kij", np.linalg.inv(gind), low)

    acc = (Xij + np.einsum("...abc,...ib,...jc->...ija", G, X, X)
           - np.einsum("...kij,...ka->...ija", chris, X))
    covec = np.zeros(grid.shape + (n1,))
    covec[..., 0] = 1.0
    for i in range(n):
        covec[..., 1 + i] = -X[..., i, 0]
    nu = np.einsum("...ab,...b->...a", np.linalg.inv(gbar), covec)
    norm2 = np.einsum("...a,...a->...", nu, covec)
    if np.any(~(norm2 < 0)):
        raise NotSpacelike("graph is not spacelike")
    nu = nu / np.sqrt(-norm2)[..., None]
    nu = np.where(nu[..., :1] < 0, nu, -nu)
    h = -np.einsum("...ija,...ab,...b->...ij", acc, gbar, nu)
    return 0.5 * (h + np.swapaxes(h, -1, -2))


def induced_scalar_curvature(u: ScalarField, geometry: GraphGeometry) -> ScalarField:
    """Scalar curvature of the induced metric (n = 2) from its Christoffels."""
    grid = u.grid
    if grid.n != 2:
        raise NotSupported("induced scalar curvature is implemented for n = 2 only", n=grid.n)
    G = geometry.christoffel
    dG = np.stack([d1(G, grid.spacing[m], m) for m in range(2)], axis=-4)  # [..., m, a, b, c]
    # Ric_bd = d_a G^a_db - d_d G^a_ab + G^a_ae G^e_db - G^a_de G^e_ab
    ric = (np.einsum("...aadb->...bd", dG) - np.einsum("...daab->...bd", dG)
           + np.einsum("...aae,...edb->...bd", G, G) - np.einsum("...ade,...eab->...bd", G, G))
    R = np.einsum("...bd,...bd->...", geometry.ginv, ric)
    return ScalarField(grid, R)
