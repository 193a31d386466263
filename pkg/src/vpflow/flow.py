"""Volume preserving curvature flow of spacelike graphs.

The hypersurface moves by ``dx/dt = (Phi(F) - f) nu``.  As a graph
``t = u(x)`` this is ``u_t = -e^{-psi} v (Phi(F) - f)``, stepped with the
classical four stage Runge-Kutta method.  The global term ``f`` is either
the ``H_k`` weighted mean of ``Phi(F)`` (mode ``preserve(k)``) or a constant
``Phi(c)`` (mode ``constant(c)``).  It is recomputed at every stage.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .ambient import AmbientSpec, enclosed_volume_density, metric
from .curvfun import CurvatureFunctionSpec, SupplementarySpec, elementary_symmetric
from .errors import (DegenerateGlobalTerm, InsufficientData, InvalidArgument,
                     TimeStepUnderflow, ValidationError)
from .geometry import GraphGeometry, graph_geometry
from .grid import Grid, ScalarField, d1
from .linalg import det_small, sym_eigvals
from .reduce import pairwise_rows, pairwise_sum

DIAGNOSTIC_FIELDS = ("t", "step", "f", "phi_sup", "phi_inf", "eta", "volume", "area",
                     "mixed_volume", "max_vtilde", "kappa_min", "kappa_max", "u_min", "u_max", "dt")


# -- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class ForceMode:
    kind: str = "preserve"     # "preserve" or "constant"
    k: int = 0
    c: Optional[float] = None

    @classmethod
    def parse(cls, text):
        """``preserve(k)`` or ``constant(c)``."""
        s = str(text).replace(" ", "")
        try:
            if s.startswith("preserve(") and s.endswith(")"):
                return cls("preserve", int(s[9:-1]))
            if s.startswith("constant(") and s.endswith(")"):
                return cls("constant", 0, float(s[9:-1]))
        except ValueError:
            pass
        raise InvalidArgument(f"cannot parse force mode {text!r}")

    def label(self):
        return f"preserve({self.k})" if self.kind == "preserve" else f"constant({self.c:g})"


def legality_errors(F: CurvatureFunctionSpec, phi: SupplementarySpec, force: ForceMode):
    """Messages for every rule of the admissible (F, cone, Phi, k) table that fails."""
    errs = []
    n = F.n
    cone = F.cone_index
    if force.kind not in ("preserve", "constant"):
        return [f"unknown force mode {force.kind!r}"]
    k = force.k
    if F.kind == "mean":
        if force.kind == "preserve" and k not in (0, 1):
            errs.append(f"F = H is only well defined with k in {{0, 1}}, got k = {k}")
        if force.kind == "preserve" and k == 1 and cone != 1:
            errs.append("F = H with k = 1 requires the cone Gamma1")
        if phi.kind != "identity" and cone != 1:
            errs.append("F = H with a non-identity Phi requires the cone Gamma1")
        if force.kind == "preserve" and k == 0 and phi.kind != "identity":
            errs.append("F = H with k = 0 requires Phi(x) = x")
    elif F.kind == "sqrtH2":
        if phi.kind not in ("identity", "neg-reciprocal"):
            errs.append("F = sqrt(H2) requires Phi(x) = x or Phi(x) = -1/x")
        if force.kind == "preserve" and k not in (0, 1, 2):
            errs.append(f"F = sqrt(H2) is only well defined with k in {{0, 1, 2}}, got k = {k}")
    else:
        if phi.kind != "log":
            errs.append(f"F = {F.label()} requires Phi(x) = log(x)")
        if force.kind == "preserve" and not 0 <= k <= n:
            errs.append(f"F = {F.label()} requires k in 0..{n}, got k = {k}")
    if force.kind == "constant":
        if force.c is None or not math.isfinite(force.c):
            errs.append("constant force needs a finite target c")
        elif phi.positive_domain and force.c <= 0:
            errs.append(f"target c = {force.c} is outside the domain of Phi = {phi.kind}")
    return errs


@dataclass
class FlowConfig:
    ambient: AmbientSpec
    grid: Grid
    F: CurvatureFunctionSpec
    phi: SupplementarySpec
    force: ForceMode = field(default_factory=ForceMode)
    c_safe: float = 0.1
    tol_eta: float = 1e-9
    T_max: float = 100.0
    dt_min: float = 1e-12
    eps_den: float = 1e-10
    cadence: int = 10
    workers: int = 1
    max_steps: Optional[int] = None
    margin: float = 1e-6

    def __post_init__(self):
        errs = legality_errors(self.F, self.phi, self.force)
        if self.F.n != self.grid.n or self.ambient.n != self.grid.n:
            errs.append("grid, ambient and curvature function dimensions differ")
        if not self.c_safe > 0:
            errs.append("c_safe must be positive")
        if not self.tol_eta > 0:
            errs.append("tol_eta must be positive")
        if not self.T_max > 0:
            errs.append("T_max must be positive")
        if not self.dt_min > 0:
            errs.append("dt_min must be positive")
        if not self.eps_den > 0:
            errs.append("eps_den must be positive")
        if int(self.cadence) < 1:
            errs.append("cadence must be at least 1")
        if int(self.workers) < 1:
            errs.append("workers must be at least 1")
        if errs:
            raise ValidationError(errs)

    @property
    def k(self):
        return self.force.k if self.force.kind == "preserve" else None

    def describe(self):
        return {"ambient": {"name": self.ambient.name, "n": self.ambient.n,
                            "periods": list(self.ambient.periods), "params": dict(self.ambient.params),
                            "t_ref": self.ambient.t_ref, "h_amb": self.ambient.h_amb},
                "grid": {"points": list(self.grid.points), "periods": list(self.grid.periods)},
                "F": self.F.label(), "cone": self.F.cone, "phi": self.phi.kind,
                "force": self.force.label(), "c_safe": self.c_safe, "tol_eta": self.tol_eta,
                "T_max": self.T_max, "dt_min": self.dt_min, "eps_den": self.eps_den,
                "cadence": self.cadence, "workers": self.workers, "max_steps": self.max_steps}


# -- state evaluation ------------------------------------------------------------

@dataclass
class Evaluation:
    """Everything the flow needs at one graph."""

    geometry: GraphGeometry
    F: np.ndarray
    dF: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    f: float
    numerator: float
    denominator: float


@dataclass
class FlowState:
    t: float
    u: ScalarField
    ev: Evaluation
    dt_last: float = 0.0
    steps: int = 0

    @property
    def geometry(self):
        return self.ev.geometry

    @property
    def f(self):
        return self.ev.f


def integrate(field_values, geometry: GraphGeometry):
    """``int phi dmu`` as a fixed-tree sum of ``phi sqrt(g)`` times the cell volume."""
    vals = field_values.values if isinstance(field_values, ScalarField) else np.asarray(field_values)
    return pairwise_sum(vals * geometry.sqrtg) * geometry.grid.cell_volume


def area(geometry: GraphGeometry):
    return pairwise_sum(geometry.sqrtg) * geometry.grid.cell_volume


def global_term(geometry: GraphGeometry, phi_values, k, eps_den=1e-10):
    """``(f_k, int H_k Phi dmu, int H_k dmu)``."""
    w = geometry.sqrtg.reshape(-1)
    phi_values = np.asarray(phi_values).reshape(-1)
    if k == 0:
        rows = np.stack([phi_values * w, w])
    else:
        Hk = elementary_symmetric(k, geometry.kappa).reshape(-1)
        rows = np.stack([Hk * phi_values * w, Hk * w, w])
    sums = pairwise_rows(rows) * geometry.grid.cell_volume
    num, den, ar = float(sums[0]), float(sums[1]), float(sums[-1])
    floor = eps_den * ar
    if not abs(den) >= floor:
        raise DegenerateGlobalTerm("weight integral below the floor", k=k, denominator=den, floor=floor)
    return num / den, num, den


def evaluate(config: FlowConfig, u: ScalarField) -> Evaluation:
    geom = graph_geometry(config.ambient, u, margin=config.margin, workers=config.workers)
    F, dF = config.F.value_grad(geom.kappa)
    phi = config.phi.value(F)
    dphi = config.phi.derivative(F)
    if config.force.kind == "preserve":
        f, num, den = global_term(geom, phi, config.force.k, config.eps_den)
    else:
        f, num, den = float(config.phi.value(config.force.c)), float("nan"), float("nan")
    return Evaluation(geom, np.asarray(F), dF, np.asarray(phi), np.asarray(dphi), float(f), num, den)


def speed(ev: Evaluation):
    """``du/dt`` at an evaluated graph."""
    g = ev.geometry
    return -np.exp(-g.psi) * g.v * (ev.phi - ev.f)


def rhs(config: FlowConfig, state_or_u) -> ScalarField:
    if isinstance(state_or_u, FlowState):
        ev = state_or_u.ev
        grid = state_or_u.u.grid
    else:
        ev = evaluate(config, state_or_u)
        grid = state_or_u.grid
    return ScalarField(grid, speed(ev))


def initial_state(config: FlowConfig, u0: ScalarField, t0: float = 0.0) -> FlowState:
    if u0.grid != config.grid:
        raise InvalidArgument("initial field lives on a different grid")
    return FlowState(t=t0, u=u0.copy(), ev=evaluate(config, u0))


def dt_select(config: FlowConfig, state: FlowState, remaining: float = math.inf):
    """Parabolic step ``c_safe h^2 / max(Phi' sum_a F_a lambda_max(g^-1))``."""
    ev = state.ev
    lam = _lambda_max(ev.geometry.ginv)
    rate = float(np.max(ev.dphi * np.sum(ev.dF, axis=-1) * lam))
    hmin = min(config.grid.spacing)
    dt = config.c_safe * hmin * hmin / rate if rate > 0 else math.inf
    dt = min(dt, remaining)
    if not dt >= config.dt_min:
        if remaining < config.dt_min and dt == remaining:
            return dt
        raise TimeStepUnderflow("time step below dt_min", dt=dt, dt_min=config.dt_min)
    return dt


def _lambda_max(A):
    n = A.shape[-1]
    if n == 1:
        return A[..., 0, 0]
    if n == 2:
        a, b, c = A[..., 0, 0], A[..., 0, 1], A[..., 1, 1]
        return 0.5 * (a + c) + np.hypot(0.5 * (a - c), b)
    return sym_eigvals(A)[..., -1]


def step(config: FlowConfig, state: FlowState, dt: Optional[float] = None) -> FlowState:
    """One classical Runge-Kutta step; every stage re-evaluates geometry and ``f``."""
    if dt is None:
        dt = dt_select(config, state)
    grid = config.grid
    u = state.u.values
    k1 = speed(state.ev)
    k2 = speed(evaluate(config, ScalarField(grid, u + 0.5 * dt * k1)))
    k3 = speed(evaluate(config, ScalarField(grid, u + 0.5 * dt * k2)))
    k4 = speed(evaluate(config, ScalarField(grid, u + dt * k3)))
    unew = ScalarField(grid, u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    return FlowState(t=state.t + dt, u=unew, ev=evaluate(config, unew), dt_last=dt,
                     steps=state.steps + 1)


# -- volumes -----------------------------------------------------------------------

def _simpson_batch(fun, a, b, tol, max_depth=50):
    """Adaptive Simpson for many independent intervals ``[a_m, b_m]``.

    ``fun(t, idx)`` evaluates the integrand of interval ``idx`` at ``t``.
    Accepted panels get the Richardson correction; accumulation per interval
    is by ``bincount`` in a fixed order.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = a.size
    total = np.zeros(m)
    idx = np.arange(m)
    fa, fb = fun(a, idx), fun(b, idx)
    c = 0.5 * (a + b)
    fc = fun(c, idx)
    whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb)
    tl = np.full(m, float(tol))
    for depth in range(max_depth + 1):
        if idx.size == 0:
            break
        d = 0.5 * (a + c)
        e = 0.5 * (c + b)
        fd, fe = fun(d, idx), fun(e, idx)
        left = (c - a) / 6.0 * (fa + 4.0 * fd + fc)
        right = (b - c) / 6.0 * (fc + 4.0 * fe + fb)
        delta = left + right - whole
        done = (np.abs(delta) <= 15.0 * tl) | (depth == max_depth)
        if np.any(done):
            total += np.bincount(idx[done], weights=(left + right + delta / 15.0)[done], minlength=m)
        keep = ~done
        idx = np.concatenate([idx[keep], idx[keep]])
        a, c, b = (np.concatenate([a[keep], c[keep]]), np.concatenate([d[keep], e[keep]]),
                   np.concatenate([c[keep], b[keep]]))
        fa, fc, fb = (np.concatenate([fa[keep], fc[keep]]), np.concatenate([fd[keep], fe[keep]]),
                      np.concatenate([fc[keep], fb[keep]]))
        whole = np.concatenate([left[keep], right[keep]])
        tl = np.concatenate([tl[keep], tl[keep]]) * 0.5
    return total


def adaptive_simpson(fun, a, b, tol=1e-10):
    """Scalar convenience wrapper around the batched integrator."""
    return float(_simpson_batch(lambda t, idx: fun(t), np.array([a]), np.array([b]), tol)[0])


def node_volumes(spec: AmbientSpec, u: ScalarField, tol=1e-10):
    """``int_{t_ref}^{u(x)} e^{(n+1) psi} sqrt(det sigma) dt`` at every node (signed)."""
    grid = u.grid
    vals = u.values.reshape(-1)
    spec.check_time(vals)
    x = grid.coords().reshape(-1, grid.n)

    def dens(t, idx):
        return enclosed_volume_density(spec, t, x[idx])

    t0 = np.full(vals.shape, spec.t_ref)
    return _simpson_batch(dens, t0, vals, tol).reshape(grid.shape)


def enclosed_volume(spec: AmbientSpec, u: ScalarField, tol=1e-10):
    """Signed volume between the reference slice ``t_ref`` and ``graph u``."""
    return pairwise_sum(node_volumes(spec, u, tol)) * u.grid.cell_volume


def absolute_volume(spec: AmbientSpec, u: ScalarField, tol=1e-10):
    """Unsigned counterpart of :func:`enclosed_volume`; scale for drift measurements."""
    return pairwise_sum(np.abs(node_volumes(spec, u, tol))) * u.grid.cell_volume


def mixed_volume(state_or_geometry, k):
    """``int H_{k-1} dmu / ((n+1) C(n,k))`` for ``k >= 1``."""
    geom = state_or_geometry.geometry if isinstance(state_or_geometry, FlowState) else state_or_geometry
    n = geom.n
    if not 1 <= k <= n:
        raise InvalidArgument("mixed volume index must satisfy 1 <= k <= n", k=k, n=n)
    Hk1 = np.ones(geom.grid.shape) if k == 1 else elementary_symmetric(k - 1, geom.kappa)
    return integrate(Hk1, geom) / ((n + 1) * math.comb(n, k))


# -- volume element residual ----------------------------------------------------------

def volume_element_check(config: FlowConfig, state: FlowState, dt_probe: float):
    """Residual of ``d sqrt(g)/dt = (Phi - f) H sqrt(g)`` along one normal Euler step.

    Positions are moved along ``(Phi - f) nu``; both densities come from the
    same difference scheme on the spatially periodic part of the embedding.
    """
    grid = config.grid
    ev = state.ev
    g = ev.geometry
    xi = grid.coords()
    # work with the periodic displacement so the stencils see a smooth periodic array
    base = np.concatenate([g.u[..., None], np.zeros(grid.shape + (grid.n,))], axis=-1)
    disp = (ev.phi - ev.f)[..., None] * g.nu
    s0 = _periodic_density(config.ambient, grid, base, xi)
    s1 = _periodic_density(config.ambient, grid, base + dt_probe * disp, xi)
    H = np.sum(g.kappa, axis=-1)
    resid = np.abs((s1 - s0) / dt_probe - (ev.phi - ev.f) * H * g.sqrtg)
    return ScalarField(grid, resid)


def _periodic_density(spec, grid, P, xi):
    # P holds (t, x - xi); the tangent is d_i P + e_i
    n = grid.n
    T = np.empty(grid.shape + (n, n + 1))
    for i in range(n):
        T[..., i, :] = d1(P, grid.spacing[i], i)
        T[..., i, 1 + i] += 1.0
    gbar = metric(spec, P[..., 0], P[..., 1:] + xi)
    gm = np.einsum("...ia,...ab,...jb->...ij", T, gbar, T)
    return np.sqrt(det_small(gm))


# -- diagnostics and runs ---------------------------------------------------------------

@dataclass
class DiagnosticsRecord:
    t: float
    step: int
    f: float
    phi_sup: float
    phi_inf: float
    eta: float
    volume: float
    area: float
    mixed_volume: Optional[float]
    max_vtilde: float
    kappa_min: float
    kappa_max: float
    u_min: float
    u_max: float
    dt: float

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=False)


def diagnostics(config: FlowConfig, state: FlowState, volume_tol=1e-10) -> DiagnosticsRecord:
    ev = state.ev
    g = ev.geometry
    k = config.k
    mv = None
    if k is not None and k >= 1:
        mv = mixed_volume(g, k)
    return DiagnosticsRecord(
        t=float(state.t), step=int(state.steps), f=float(ev.f),
        phi_sup=float(np.max(ev.phi)), phi_inf=float(np.min(ev.phi)),
        eta=float(np.max(ev.phi) - np.min(ev.phi)),
        volume=float(enclosed_volume(config.ambient, state.u, volume_tol)),
        area=float(area(g)), mixed_volume=None if mv is None else float(mv),
        max_vtilde=float(np.max(1.0 / g.v)), kappa_min=float(np.min(g.kappa)),
        kappa_max=float(np.max(g.kappa)), u_min=float(np.min(state.u.values)),
        u_max=float(np.max(state.u.values)), dt=float(state.dt_last))


def stationarity(config: FlowConfig, ev: Evaluation):
    """Stopping quantity: oscillation ``eta`` (preserve) or ``sup|Phi - f|`` (constant)."""
    if config.force.kind == "preserve":
        return float(np.max(ev.phi) - np.min(ev.phi))
    return float(np.max(np.abs(ev.phi - ev.f)))


@dataclass
class ConvergenceReport:
    status: str                 # "converged" or "no-convergence"
    stop_reason: str
    t: float
    steps: int
    eta: float
    c0: Optional[float]
    sup_F_minus_c0: Optional[float]
    delta: Optional[float]
    amplitude: Optional[float]
    r2: Optional[float]
    drifts: dict
    phi_monotone: dict

    def to_dict(self):
        return asdict(self)


def _relative_drifts(records, scales):
    out = {}
    for key in ("volume", "area", "mixed_volume"):
        vals = [getattr(r, key) for r in records if getattr(r, key) is not None]
        if not vals:
            continue
        scale = scales.get(key) or max(abs(vals[0]), 1e-300)
        out[key] = float(max(abs(v - vals[0]) for v in vals) / scale)
    return out


def monotonicity_audit(records, slack_factor=1e-7, target=None):
    """Largest sample-to-sample rise of ``phi_sup`` and fall of ``phi_inf``.

    With a constant force the bounds are ``max(phi_sup, Phi(c))`` and
    ``min(phi_inf, Phi(c))``; pass ``target = Phi(c)`` to audit those.
    """
    if not records:
        return {"scale": 0.0, "sup_rise": 0.0, "inf_fall": 0.0, "ok": True}
    sup = [r.phi_sup for r in records]
    inf = [r.phi_inf for r in records]
    if target is not None:
        sup = [max(s, target) for s in sup]
        inf = [min(i, target) for i in inf]
    scale = max(sup[0] - inf[0], 0.0)
    sup_rise = max([b - a for a, b in zip(sup, sup[1:])] or [0.0])
    inf_fall = max([a - b for a, b in zip(inf, inf[1:])] or [0.0])
    tol = slack_factor * scale
    return {"scale": scale, "sup_rise": float(sup_rise), "inf_fall": float(inf_fall),
            "tolerance": tol, "ok": bool(sup_rise <= tol and inf_fall <= tol)}


def run(config: FlowConfig, u0: ScalarField, sink=None, t0: float = 0.0, record_every_step=False):
    """Flow until the stopping quantity drops below ``tol_eta`` or ``T_max``.

    ``sink`` receives every :class:`DiagnosticsRecord` as it is produced.
    Returns ``(records, final_state, report)``.
    """
    state = initial_state(config, u0, t0)
    records = []

    def emit(st):
        rec = diagnostics(config, st)
        records.append(rec)
        if sink is not None:
            sink(rec)

    emit(state)
    scales = {"volume": absolute_volume(config.ambient, state.u), "area": records[0].area}
    if records[0].mixed_volume:
        scales["mixed_volume"] = abs(records[0].mixed_volume)
    t_end = t0 + config.T_max
    reason = None
    while True:
        eta = stationarity(config, state.ev)
        if eta <= config.tol_eta:
            reason = "tolerance"
            break
        if state.t >= t_end - 1e-14 * max(1.0, abs(t_end)):
            reason = "T_max"
            break
        if config.max_steps is not None and state.steps >= config.max_steps:
            reason = "max_steps"
            break
        dt = dt_select(config, state, remaining=t_end - state.t)
        state = step(config, state, dt)
        if record_every_step or state.steps % config.cadence == 0:
            emit(state)
    if records[-1].step != state.steps:
        emit(state)
    return records, state, build_report(config, records, state, reason, scales)


def _force_target(config):
    if config.force.kind == "constant":
        return float(config.phi.value(config.force.c))
    return None


def build_report(config, records, state, reason, scales=None):
    ev = state.ev
    eta = stationarity(config, ev)
    converged = reason == "tolerance"
    try:
        c0 = float(config.phi.inverse(ev.f))
        sup = float(np.max(np.abs(ev.F - c0)))
    except Exception:  # f outside the range of Phi
        c0, sup = None, None
    delta = amp = r2 = None
    try:
        delta, amp, r2 = fit_decay([(r.t, r.eta) for r in records])
    except InsufficientData:
        pass
    return ConvergenceReport(
        status="converged" if converged else "no-convergence", stop_reason=reason,
        t=float(state.t), steps=int(state.steps), eta=eta, c0=c0, sup_F_minus_c0=sup,
        delta=delta, amplitude=amp, r2=r2, drifts=_relative_drifts(records, scales or {}),
        phi_monotone=monotonicity_audit(records, target=_force_target(config)))


def fit_decay(trajectory, window=0.5, min_samples=10):
    """Least squares fit ``log eta = log A - delta t`` over the trailing window.

    ``trajectory`` is a sequence of ``(t, eta)`` pairs or of records.  The
    window is the trailing fraction of the usable samples (``eta`` above ten
    machine epsilons).  Returns ``(delta, A, R^2)``.
    """
    pts = [(r.t, r.eta) if hasattr(r, "eta") else (float(r[0]), float(r[1])) for r in trajectory]
    pts = [(t, e) for t, e in pts if e > 10 * np.finfo(float).eps and math.isfinite(e)]
    if not 0 < window <= 1:
        raise InvalidArgument("window must lie in (0, 1]", window=window)
    m = int(math.ceil(window * len(pts)))
    tail = pts[len(pts) - m:]
    if len(tail) < min_samples:
        raise InsufficientData("not enough samples to fit a decay rate", samples=len(tail),
                               required=min_samples)
    t = np.array([p[0] for p in tail])
    y = np.log(np.array([p[1] for p in tail]))
    A = np.column_stack([np.ones_like(t), t])
    (c, slope), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (c + slope * t)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), float(math.exp(c)), r2


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
