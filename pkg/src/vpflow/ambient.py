"""Ambient Lorentzian metrics in Gaussian form.

The metric is ``e^{2 psi} (-dt^2 + sigma_ij dx^i dx^j)`` on ``(a, b) x T^n``
with a flat torus of the given periods as Cauchy surface.  Index 0 is the
time coordinate throughout.  Curvature conventions: ``R^a_{bcd} =
d_c G^a_{db} - d_d G^a_{cb} + G^a_{ce} G^e_{db} - G^a_{de} G^e_{cb}``, so a
space of constant sectional curvature ``K`` has
``R_{abcd} = K (g_ac g_bd - g_ad g_bc)`` and de Sitter has ``K = +1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import norm, qmc

from .errors import DomainError, InvalidArgument, NumericalInstability, SingularMetric
from .linalg import det_small

TOL_SYM = 1e-6
CONDITION_TOL = -1e-7


@dataclass(frozen=True)
class AmbientSpec:
    """Metric data ``(psi, sigma)`` plus the torus geometry.

    ``psi(t, x)`` takes ``t`` of shape ``S`` and ``x`` of shape ``S + (n,)``
    and returns shape ``S``; ``sigma`` returns ``S + (n, n)``.  The optional
    derivative closures return ``(psi_t, psi_x)`` and ``(sigma_t, sigma_x)``
    with ``sigma_x[..., i, j, k] = d_k sigma_ij``.  Missing derivatives fall
    back to centered differences with relative step ``h_amb``.
    """

    n: int
    time_interval: tuple
    periods: tuple
    psi: Callable
    sigma: Callable
    dpsi: Optional[Callable] = None
    dsigma: Optional[Callable] = None
    h_amb: float = 1e-4
    name: str = "custom"
    t_ref: float = 0.0
    params: dict = field(default_factory=dict)
    # closed form curvature of the slices {t = const}, homogeneous presets only
    slice_curvature: Optional[Callable] = None
    slice_inverse: Optional[Callable] = None

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise InvalidArgument("spatial dimension must be 1, 2 or 3", n=self.n)
        if len(self.periods) != self.n or min(self.periods) <= 0:
            raise InvalidArgument("need n positive torus periods", periods=self.periods)
        a, b = self.time_interval
        if not a < self.t_ref < b:
            raise InvalidArgument("reference time must lie inside the time interval", t_ref=self.t_ref)

    @property
    def homogeneous(self):
        return self.slice_curvature is not None

    # -- evaluation -------------------------------------------------------

    def check_time(self, t, margin=0.0):
        t = np.asarray(t, dtype=float)
        a, b = self.time_interval
        if t.size:
            lo, hi = float(t.min()), float(t.max())
            ok_lo = lo > a + margin if a != -math.inf else lo == lo
            ok_hi = hi < b - margin if b != math.inf else hi == hi
            if not (ok_lo and ok_hi and math.isfinite(lo) and math.isfinite(hi)):
                bad = t[~((t > a + margin) & (t < b - margin) & np.isfinite(t))]
                raise DomainError("time outside the ambient interval", interval=(a, b),
                                  value=float(bad.ravel()[0]) if bad.size else float("nan"))
        return t

    def time_step(self, t):
        return self.h_amb * np.maximum(1.0, np.abs(t))

    def space_step(self, i):
        return self.h_amb * self.periods[i]

    def psi_all(self, t, x, check=True):
        """Return ``psi, psi_t, psi_x`` at the given points."""
        t = self.check_time(t) if check else np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        p = np.asarray(self.psi(t, x), dtype=float)
        if self.dpsi is not None:
            pt, px = self.dpsi(t, x)
            return p, np.asarray(pt, dtype=float), np.asarray(px, dtype=float)
        ht = self.time_step(t)
        pt = (self.psi(t + ht, x) - self.psi(t - ht, x)) / (2 * ht)
        px = np.empty(x.shape)
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = self.space_step(i)
            px[..., i] = (self.psi(t, x + e) - self.psi(t, x - e)) / (2 * e[i])
        return p, pt, px

    def sigma_all(self, t, x, check=True):
        """Return ``sigma, sigma_t, sigma_x`` at the given points."""
        t = self.check_time(t) if check else np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        s = np.asarray(self.sigma(t, x), dtype=float)
        if self.dsigma is not None:
            st, sx = self.dsigma(t, x)
            return s, np.asarray(st, dtype=float), np.asarray(sx, dtype=float)
        ht = self.time_step(t)[..., None, None]
        st = (self.sigma(t + ht[..., 0, 0], x) - self.sigma(t - ht[..., 0, 0], x)) / (2 * ht)
        sx = np.empty(s.shape + (self.n,))
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = self.space_step(i)
            sx[..., i] = (self.sigma(t, x + e) - self.sigma(t, x - e)) / (2 * e[i])
        return s, st, sx


# -- metric and connection -----------------------------------------------------

def metric(spec: AmbientSpec, t, x):
    """Full ambient metric ``g_ab`` with shape ``S + (n+1, n+1)``."""
    psi, _, _ = spec.psi_all(t, x)
    s, _, _ = spec.sigma_all(t, x)
    return _assemble_metric(psi, s)


def _assemble_metric(psi, s):
    n = s.shape[-1]
    e2 = np.exp(2 * psi)
    g = np.zeros(psi.shape + (n + 1, n + 1))
    g[..., 0, 0] = -e2
    g[..., 1:, 1:] = e2[..., None, None] * s
    return g


def metric_derivatives(spec: AmbientSpec, t, x):
    """Return ``g`` and ``dg[..., m, a, b] = d_m g_ab`` from the closures."""
    psi, pt, px = spec.psi_all(t, x)
    s, st, sx = spec.sigma_all(t, x)
    n = spec.n
    g = _assemble_metric(psi, s)
    e2 = np.exp(2 * psi)
    dpsi = np.concatenate([pt[..., None], px], axis=-1)
    ds = np.concatenate([st[..., None], sx], axis=-1)  # [..., i, j, m]
    dg = np.zeros(psi.shape + (n + 1, n + 1, n + 1))
    for m in range(n + 1):
        dg[..., m, 0, 0] = -2 * e2 * dpsi[..., m]
        dg[..., m, 1:, 1:] = e2[..., None, None] * (2 * dpsi[..., m, None, None] * s + ds[..., m])
    return g, dg


def _check_sigma(s):
    d = det_small(s)
    if np.any(~(d > 0)):
        raise SingularMetric("sigma is not positive definite", min_det=float(np.min(d)))
    return d


@dataclass
class TimeChristoffels:
    g000: np.ndarray
    g00i: np.ndarray
    g0ij: np.ndarray


def christoffel_time(spec: AmbientSpec, t, x) -> TimeChristoffels:
    """The ``alpha = 0`` Christoffel symbols of the Gaussian metric."""
    _, pt, px = spec.psi_all(t, x)
    s, st, _ = spec.sigma_all(t, x)
    _check_sigma(s)
    return TimeChristoffels(g000=pt, g00i=px, g0ij=pt[..., None, None] * s + 0.5 * st)


def christoffels(spec: AmbientSpec, t, x):
    """All Christoffel symbols ``G[..., a, b, c] = Gamma^a_{bc}``."""
    g, dg = metric_derivatives(spec, t, x)
    _check_sigma(g[..., 1:, 1:])
    ginv = np.linalg.inv(g)
    # lowered: G_{d b c} = (d_b g_dc + d_c g_db - d_d g_bc) / 2
    low = 0.5 * (np.swapaxes(dg, -3, -2) + np.moveaxis(dg, -3, -1) - dg)
    return np.einsum("...ad,...dbc->...abc", ginv, low)


@dataclass
class RiemannSample:
    point: tuple
    R: np.ndarray            # all indices down, shape (n+1,)*4
    raw_violation: float     # symmetry defect before projection, relative


def riemann_batch(spec: AmbientSpec, t, x):
    """Curvature tensors at many points: ``t`` shape ``(M,)``, ``x`` shape ``(M, n)``.

    Returns ``(R, raw)`` with ``R`` of shape ``(M,) + (n+1,)*4`` (all indices
    down, symmetries projected) and the relative pre-projection defect.
    """
    t = np.asarray(t, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(t.size, spec.n)
    ht = spec.time_step(t)
    spec.check_time(t, margin=2 * float(np.max(ht)))
    n1 = spec.n + 1
    G = christoffels(spec, t, x)
    dG = np.empty((t.size,) + (n1,) * 4)  # [M, m, a, b, c] = d_m Gamma^a_bc
    for m in range(n1):
        if m == 0:
            h = ht[:, None, None, None]
            dG[:, 0] = (christoffels(spec, t + ht, x) - christoffels(spec, t - ht, x)) / (2 * h)
        else:
            h = spec.space_step(m - 1)
            e = np.zeros(spec.n)
            e[m - 1] = h
            dG[:, m] = (christoffels(spec, t, x + e) - christoffels(spec, t, x - e)) / (2 * h)
    # R^a_{bcd} = d_c G^a_{db} - d_d G^a_{cb} + G^a_{ce} G^e_{db} - G^a_{de} G^e_{cb}
    Rup = (np.einsum("...cadb->...abcd", dG) - np.einsum("...dacb->...abcd", dG)
           + np.einsum("...ace,...edb->...abcd", G, G) - np.einsum("...ade,...ecb->...abcd", G, G))
    g = metric(spec, t, x)
    R = np.einsum("...ae,...ebcd->...abcd", g, Rup)
    scale = np.maximum(np.max(np.abs(R), axis=(1, 2, 3, 4)), 1.0)
    d1 = np.max(np.abs(R + np.swapaxes(R, 1, 2)), axis=(1, 2, 3, 4))
    d2 = np.max(np.abs(R + np.swapaxes(R, 3, 4)), axis=(1, 2, 3, 4))
    d3 = np.max(np.abs(R - np.transpose(R, (0, 3, 4, 1, 2))), axis=(1, 2, 3, 4))
    raw = np.maximum(np.maximum(d1, d2), d3) / scale
    R = 0.5 * (R - np.swapaxes(R, 1, 2))
    R = 0.5 * (R - np.swapaxes(R, 3, 4))
    R = 0.5 * (R + np.transpose(R, (0, 3, 4, 1, 2)))
    return R, raw


def riemann(spec: AmbientSpec, t, x) -> RiemannSample:
    """Curvature tensor by centered differences of the Christoffel symbols."""
    t = float(t)
    x = np.asarray(x, dtype=float).reshape(spec.n)
    R, raw = riemann_batch(spec, np.array([t]), x[None, :])
    if raw[0] > TOL_SYM:
        raise NumericalInstability("curvature tensor symmetry violated", violation=float(raw[0]),
                                   point=(t, x.tolist()))
    return RiemannSample(point=(t, tuple(x.tolist())), R=R[0], raw_violation=float(raw[0]))


def ricci(sample: RiemannSample, spec: AmbientSpec):
    """``Ric_bd = g^{ac} R_abcd``."""
    t, x = sample.point
    ginv = np.linalg.inv(metric(spec, np.array(t), np.array(x)))
    return np.einsum("ac,abcd->bd", ginv, sample.R)


def enclosed_volume_density(spec: AmbientSpec, t, x):
    """Integrand ``e^{(n+1) psi} sqrt(det sigma)`` of the enclosed volume."""
    t = spec.check_time(t)
    x = np.asarray(x, dtype=float)
    psi = np.asarray(spec.psi(t, x), dtype=float)
    s = np.asarray(spec.sigma(t, x), dtype=float)
    d = _check_sigma(s)
    return np.exp((spec.n + 1) * psi) * np.sqrt(d)


# -- energy condition sampling -----------------------------------------------

@dataclass
class ConditionReport:
    kind: str
    values: np.ndarray
    points: np.ndarray
    min_value: float
    violating_fraction: float
    tolerance: float = CONDITION_TOL

    @property
    def n_samples(self):
        return len(self.values)

    def to_dict(self):
        return {"kind": self.kind, "samples": self.n_samples, "min_value": self.min_value,
                "violating_fraction": self.violating_fraction, "tolerance": self.tolerance}


def _region_points(spec, region, samples, extra_dims, seed):
    if samples < 1:
        raise InvalidArgument("need at least one sample", samples=samples)
    (t0, t1), xbox = _normalize_region(spec, region)
    dims = 1 + spec.n + extra_dims
    sampler = qmc.Halton(d=dims, scramble=True, seed=seed)
    z = sampler.random(samples)
    if t1 > t0:
        margin = 2.5 * float(spec.time_step(max(abs(t0), abs(t1))))
        lo, hi = t0 + margin, t1 - margin
        if hi <= lo:
            lo = hi = 0.5 * (t0 + t1)
        tt = lo + (hi - lo) * z[:, 0]
    else:
        tt = np.full(samples, float(t0))
    xx = np.empty((samples, spec.n))
    for i, (x0, x1) in enumerate(xbox):
        xx[:, i] = x0 + (x1 - x0) * z[:, 1 + i]
    return tt, xx, z[:, 1 + spec.n:]


def _normalize_region(spec, region):
    if region is None:
        a, b = spec.time_interval
        raise InvalidArgument("a time window is required for condition sampling", interval=(a, b))
    if isinstance(region, dict):
        tbox = tuple(region["t"])
        xbox = region.get("x") or [(0.0, L) for L in spec.periods]
    else:
        tbox, xbox = region[0], (region[1] if len(region) > 1 and region[1] is not None
                                 else [(0.0, L) for L in spec.periods])
    return (float(tbox[0]), float(tbox[1])), [tuple(map(float, b)) for b in xbox]


def _frame(spec, t, x):
    """Orthonormal frame (columns) at a point: ``e_0`` timelike future."""
    psi = float(spec.psi(np.array(t), x))
    s = np.asarray(spec.sigma(np.array(t), x), dtype=float)
    L = np.linalg.cholesky(s)
    E = np.zeros((spec.n + 1, spec.n + 1))
    E[0, 0] = math.exp(-psi)
    E[1:, 1:] = math.exp(-psi) * np.linalg.inv(L).T
    return E


def _unit_gaussian(z):
    return norm.ppf(np.clip(z, 1e-12, 1 - 1e-12))


def _past_timelike(spec, t, x, zr, zdir, rmax=1.5):
    E = _frame(spec, t, x)
    r = rmax * zr
    d = _unit_gaussian(zdir)
    nd = np.linalg.norm(d)
    d = d / nd if nd > 0 else np.eye(spec.n)[0]
    comp = np.concatenate([[-math.cosh(r)], math.sinh(r) * d])
    return E @ comp


def tcc_sample(spec: AmbientSpec, region, samples: int, seed: int = 20110412) -> ConditionReport:
    """Sample ``Ric(V, V)`` over unit past-directed timelike ``V``."""
    tt, xx, z = _region_points(spec, region, samples, 1 + spec.n, seed)
    vals = np.empty(samples)
    for s in range(samples):
        smp = riemann(spec, tt[s], xx[s])
        V = _past_timelike(spec, tt[s], xx[s], z[s, 0], z[s, 1:])
        vals[s] = V @ ricci(smp, spec) @ V
    return _report("tcc", vals, tt, xx)


def nptsc_sample(spec: AmbientSpec, region, samples: int, seed: int = 20110412) -> ConditionReport:
    """Sample ``R(V, W, V, W)`` for timelike ``V`` and unit spacelike ``W``, ``<V,W> = 0``."""
    tt, xx, z = _region_points(spec, region, samples, 1 + spec.n + spec.n + 1, seed)
    vals = np.empty(samples)
    for s in range(samples):
        smp = riemann(spec, tt[s], xx[s])
        V = _past_timelike(spec, tt[s], xx[s], z[s, 0], z[s, 1:1 + spec.n])
        g = metric(spec, np.array(tt[s]), xx[s])
        E = _frame(spec, tt[s], xx[s])
        Y = E @ _unit_gaussian(z[s, 1 + spec.n:])
        W = Y + (Y @ g @ V) * V
        W = W / math.sqrt(W @ g @ W)
        vals[s] = np.einsum("abcd,a,b,c,d->", smp.R, V, W, V, W)
    return _report("nptsc", vals, tt, xx)


def _report(kind, vals, tt, xx):
    return ConditionReport(kind=kind, values=vals, points=np.column_stack([tt, xx]),
                           min_value=float(np.min(vals)),
                           violating_fraction=float(np.mean(vals < CONDITION_TOL)))


# -- presets -------------------------------------------------------------------

def _flat_sigma(n):
    def sigma(t, x):
        t = np.asarray(t)
        return np.broadcast_to(np.eye(n), t.shape + (n, n)).copy()

    def dsigma(t, x):
        t = np.asarray(t)
        return np.zeros(t.shape + (n, n)), np.zeros(t.shape + (n, n, n))

    return sigma, dsigma


def minkowski_torus(n=1, periods=None, h_amb=1e-4):
    periods = tuple(periods or [2 * math.pi] * n)
    sigma, dsigma = _flat_sigma(n)
    return AmbientSpec(
        n=n, time_interval=(-math.inf, math.inf), periods=periods,
        psi=lambda t, x: np.zeros(np.shape(t)),
        dpsi=lambda t, x: (np.zeros(np.shape(t)), np.zeros(np.shape(t) + (n,))),
        sigma=sigma, dsigma=dsigma, h_amb=h_amb, name="minkowski-torus", t_ref=0.0,
        slice_curvature=lambda t: np.zeros(np.shape(t)),
    )


def conformal_powerlaw(n=1, periods=None, p=-1.0, h_amb=1e-4, t_ref=-1.0):
    """``e^psi = (-t)^(-p)`` on ``t < 0``; slices are umbilic with
    ``kappa(t) = -p (-t)^(p-1)``.  ``p < 0`` gives a crunching universe whose
    slices have positive curvature increasing towards the future."""
    periods = tuple(periods or [2 * math.pi] * n)
    sigma, dsigma = _flat_sigma(n)
    p = float(p)
    if p == 0:
        raise InvalidArgument("p = 0 is the flat case; use minkowski-torus")

    def psi(t, x):
        return -p * np.log(-np.asarray(t, dtype=float))

    def dpsi(t, x):
        t = np.asarray(t, dtype=float)
        return -p / t, np.zeros(t.shape + (n,))

    def kappa(t):
        return -p * (-np.asarray(t, dtype=float)) ** (p - 1)

    def kappa_inv(k):
        k = np.asarray(k, dtype=float)
        if np.any(k * (-p) <= 0):
            raise DomainError("no slice carries this curvature", value=float(np.ravel(k)[0]))
        return -(k / (-p)) ** (1.0 / (p - 1))

    return AmbientSpec(
        n=n, time_interval=(-math.inf, 0.0), periods=periods, psi=psi, dpsi=dpsi,
        sigma=sigma, dsigma=dsigma, h_amb=h_amb,
        name="conformal-desitter" if p == 1 else "conformal-powerlaw",
        t_ref=t_ref, params={"p": p}, slice_curvature=kappa, slice_inverse=kappa_inv,
    )


def conformal_desitter(n=1, periods=None, h_amb=1e-4, t_ref=-1.0):
    return conformal_powerlaw(n=n, periods=periods, p=1.0, h_amb=h_amb, t_ref=t_ref)


def warped_general(t_grid, psi_table, sigma_table, periods, h_amb=1e-4, t_ref=None):
    """Tabulated ``psi`` and ``sigma`` on a ``(t, x)`` grid, cubic interpolation.

    ``psi_table`` has shape ``(Nt, N_1, ..., N_n)`` sampled at
    ``x_i = j L_i / N_i``; ``sigma_table`` appends ``(n, n)``.  The tables are
    padded periodically in ``x``; derivatives use the difference fallback.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    psi_table = np.asarray(psi_table, dtype=float)
    sigma_table = np.asarray(sigma_table, dtype=float)
    n = psi_table.ndim - 1
    periods = tuple(float(L) for L in periods)
    if len(periods) != n or sigma_table.shape != psi_table.shape + (n, n):
        raise InvalidArgument("table shapes do not match the dimension",
                              psi=psi_table.shape, sigma=sigma_table.shape)
    if not np.allclose(sigma_table, np.swapaxes(sigma_table, -1, -2)):
        raise InvalidArgument("sigma table must be symmetric")
    pad = 3
    axes = [t_grid]
    psi_p, sig_p = psi_table, sigma_table
    for i in range(n):
        N = psi_table.shape[1 + i]
        h = periods[i] / N
        axes.append(h * np.arange(-pad, N + pad))
        psi_p = np.concatenate([np.take(psi_p, range(N - pad, N), axis=1 + i), psi_p,
                                np.take(psi_p, range(pad), axis=1 + i)], axis=1 + i)
        sig_p = np.concatenate([np.take(sig_p, range(N - pad, N), axis=1 + i), sig_p,
                                np.take(sig_p, range(pad), axis=1 + i)], axis=1 + i)
    ip = RegularGridInterpolator(axes, psi_p, method="cubic")
    isg = RegularGridInterpolator(axes, sig_p, method="cubic")
    Lv = np.asarray(periods)

    def _pts(t, x):
        t = np.asarray(t, dtype=float)
        x = np.mod(np.asarray(x, dtype=float), Lv)
        x = np.broadcast_to(x, t.shape + (n,))
        return np.concatenate([t[..., None], x], axis=-1).reshape(-1, n + 1), t.shape

    def psi(t, x):
        pts, shp = _pts(t, x)
        return ip(pts).reshape(shp)

    def sigma(t, x):
        pts, shp = _pts(t, x)
        s = isg(pts).reshape(shp + (n, n))
        return 0.5 * (s + np.swapaxes(s, -1, -2))

    margin = 4 * h_amb * max(1.0, float(np.max(np.abs(t_grid))))
    interval = (float(t_grid[0]) + margin, float(t_grid[-1]) - margin)
    if t_ref is None:
        t_ref = 0.5 * (interval[0] + interval[1])
    return AmbientSpec(n=n, time_interval=interval, periods=periods, psi=psi, sigma=sigma,
                       h_amb=h_amb, name="warped-general", t_ref=float(t_ref),
                       params={"table_shape": list(psi_table.shape)})


def preset(name, n=1, periods=None, h_amb=1e-4, **params):
    """Build a named preset: ``minkowski-torus``, ``conformal-desitter``,
    ``conformal-powerlaw`` (param ``p``) or ``warped-general`` (params
    ``t_grid``, ``psi_table``, ``sigma_table``)."""
    if name == "minkowski-torus":
        return minkowski_torus(n, periods, h_amb)
    if name == "conformal-desitter":
        return conformal_desitter(n, periods, h_amb, t_ref=params.get("t_ref", -1.0))
    if name == "conformal-powerlaw":
        return conformal_powerlaw(n, periods, p=params.get("p", -1.0), h_amb=h_amb,
                                  t_ref=params.get("t_ref", -1.0))
    if name == "warped-general":
        return warped_general(params["t_grid"], params["psi_table"], params["sigma_table"],
                              periods, h_amb=h_amb, t_ref=params.get("t_ref"))
    raise InvalidArgument(f"unknown ambient preset {name!r}")
