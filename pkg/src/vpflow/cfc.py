"""Constant F-curvature (CFC) graphs, foliations and their stability.

CFC graphs are found by running the flow with the constant force ``Phi(c)``
until ``sup |Phi(F) - Phi(c)|`` falls below the tolerance.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from . import flow as fl
from .ambient import riemann_batch
from .curvfun import F_tensor
from .errors import EigenSolveFailure, InvalidArgument, NoConvergence, NotSupported
from .geometry import graph_geometry
from .grid import ScalarField, save_field


# -- CFC solve ---------------------------------------------------------------------

@dataclass
class CfcResult:
    c: float
    u_c: ScalarField
    residual: float          # sup |F - c|
    steps: int
    time: float
    report: Optional[fl.ConvergenceReport] = None

    def to_dict(self):
        return {"c": self.c, "residual": self.residual, "steps": self.steps, "time": self.time,
                "report": None if self.report is None else self.report.to_dict()}


def constant_config(config: fl.FlowConfig, c: float) -> fl.FlowConfig:
    return dataclasses.replace(config, force=fl.ForceMode("constant", 0, float(c)))


def preserve_config(config: fl.FlowConfig, k: int) -> fl.FlowConfig:
    return dataclasses.replace(config, force=fl.ForceMode("preserve", int(k)))


def solve_cfc(c, u0: ScalarField, config: fl.FlowConfig, sink=None) -> CfcResult:
    """Relax ``u0`` to the graph with ``F = c`` by the constant force flow."""
    cfg = constant_config(config, c)
    records, state, report = fl.run(cfg, u0, sink=sink)
    residual = float(np.max(np.abs(state.ev.F - c)))
    if report.status != "converged":
        raise NoConvergence("constant curvature flow did not become stationary", c=c,
                            t=report.t, residual=residual, stop_reason=report.stop_reason)
    return CfcResult(c=float(c), u_c=state.u, residual=residual, steps=report.steps, time=report.t,
                     report=report)


def slice_solution(config: fl.FlowConfig, c):
    """Closed form CFC slice time of a homogeneous preset: ``F(kappa,...,kappa) = c``."""
    spec = config.ambient
    if spec.slice_inverse is None:
        raise NotSupported("preset has no closed form slice curvature inverse", preset=spec.name)
    return float(spec.slice_inverse(c / config.F.at_identity()))


def barrier_check(u: ScalarField, c, side, config: fl.FlowConfig):
    """Future barrier: ``F >= c`` everywhere; past barrier: ``F <= c``."""
    if side not in ("future", "past"):
        raise InvalidArgument("side must be 'future' or 'past'", side=side)
    geom = graph_geometry(config.ambient, u, margin=config.margin, workers=config.workers)
    F, _ = config.F.value_grad(geom.kappa)
    slack = F - c if side == "future" else c - F
    return {"side": side, "c": float(c), "min_slack": float(np.min(slack)),
            "max_slack": float(np.max(slack)), "is_barrier": bool(np.min(slack) >= 0.0)}


# -- foliation ---------------------------------------------------------------------

@dataclass
class FoliationResult:
    taus: list
    graphs: list
    ordering_margins: list       # min over nodes of u(tau_{j+1}) - u(tau_j)
    areas: list
    volumes: list
    residuals: list
    violations: list = field(default_factory=list)

    @property
    def area_margins(self):
        return [a - b for a, b in zip(self.areas, self.areas[1:])]

    @property
    def volume_margins(self):
        return [b - a for a, b in zip(self.volumes, self.volumes[1:])]

    def audit(self):
        return {"ordering_min_margin": min(self.ordering_margins),
                "area_min_decrease": min(self.area_margins),
                "volume_min_increase": min(self.volume_margins),
                "ordered": min(self.ordering_margins) > 0,
                "area_decreasing": min(self.area_margins) > 0,
                "volume_increasing": min(self.volume_margins) > 0,
                "violations": self.violations}

    def manifest(self):
        return {"taus": self.taus, "ordering_margins": self.ordering_margins, "areas": self.areas,
                "volumes": self.volumes, "residuals": self.residuals, "audit": self.audit(),
                "files": [f"tau_{j:03d}.vpf" for j in range(len(self.taus))]}


def foliate(c1, c2, m, config: fl.FlowConfig, u_start: ScalarField):
    """CFC graphs for ``m`` equally spaced ``tau`` in ``[c1, c2]``, warm started."""
    if not (0 < c1 < c2):
        raise InvalidArgument("need 0 < c1 < c2", c1=c1, c2=c2)
    if int(m) < 2:
        raise InvalidArgument("need at least two leaves", m=m)
    if config.ambient.name == "minkowski-torus":
        raise NotSupported("all slices of the flat torus have F = 0; no window 0 < c1 < c2 exists")
    taus = [float(x) for x in np.linspace(c1, c2, int(m))]
    graphs, areas, volumes, residuals = [], [], [], []
    u = u_start
    for tau in taus:
        res = solve_cfc(tau, u, config)
        u = res.u_c
        geom = graph_geometry(config.ambient, u, margin=config.margin, workers=config.workers)
        graphs.append(u)
        areas.append(fl.area(geom))
        volumes.append(fl.enclosed_volume(config.ambient, u))
        residuals.append(res.residual)
    margins, violations = [], []
    for j in range(len(taus) - 1):
        diff = graphs[j + 1].values - graphs[j].values
        margins.append(float(np.min(diff)))
        if margins[-1] <= 0:
            worst = np.unravel_index(int(np.argmin(diff)), diff.shape)
            violations.append({"kind": "MonotonicityViolation", "pair": [j, j + 1],
                               "node": [int(i) for i in worst], "margin": margins[-1]})
    for j in range(len(taus) - 1):
        if areas[j + 1] >= areas[j]:
            violations.append({"kind": "AreaNotDecreasing", "pair": [j, j + 1]})
        if volumes[j + 1] <= volumes[j]:
            violations.append({"kind": "VolumeNotIncreasing", "pair": [j, j + 1]})
    return FoliationResult(taus=taus, graphs=graphs, ordering_margins=margins, areas=areas,
                           volumes=volumes, residuals=residuals, violations=violations)


def save_foliation(result: FoliationResult, directory, extra=None):
    """One field file per leaf plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    man = result.manifest()
    for j, (tau, u) in enumerate(zip(result.taus, result.graphs)):
        save_field(u, d / man["files"][j], meta={"tau": tau})
    if extra:
        man.update(extra)
    (d / "manifest.json").write_text(json.dumps(man, indent=2, default=float), encoding="utf-8")
    return d


# -- linearized operator --------------------------------------------------------------

def _periodic_stencil(N, h, order):
    """Sparse 1-d periodic fourth order first (``order=1``) or second derivative."""
    if order == 1:
        offs, coef = [-2, -1, 1, 2], np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * h)
    else:
        offs, coef = [-2, -1, 0, 1, 2], np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    rows, cols, vals = [], [], []
    for o, c in zip(offs, coef):
        i = np.arange(N)
        rows.append(i)
        cols.append((i + o) % N)
        vals.append(np.full(N, c))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, N))


def _axis_operator(grid, axis, order):
    mats = [sp.identity(N, format="csr") for N in grid.points]
    mats[axis] = _periodic_stencil(grid.points[axis], grid.spacing[axis], order)
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


@dataclass
class StabilityOperator:
    B: sp.csr_matrix
    zeroth: np.ndarray       # F^{ij} h_ik h^k_j + F^{ij} Rbar(nu, x_i, nu, x_j) per node
    weight: np.ndarray       # sqrt(g) per node, the measure B is self-adjoint for
    symmetry_defect: float   # ||W B W^-1 - (W B W^-1)^T|| / ||W B W^-1|| (Frobenius)
    riemann_defect: float

    def symmetrized(self):
        w = np.sqrt(self.weight.reshape(-1))
        S = sp.diags(w) @ self.B @ sp.diags(1.0 / w)
        return ((S + S.T) * 0.5).tocsr()


def stability_operator(u_c: ScalarField, config: fl.FlowConfig) -> StabilityOperator:
    """``B w = -F^{ij} w_;ij + (F^{ij} h_ik h^k_j + F^{ij} Rbar(nu, x_i, nu, x_j)) w``."""
    spec = config.ambient
    grid = u_c.grid
    n, M = grid.n, grid.size
    geom = graph_geometry(spec, u_c, margin=config.margin, workers=config.workers)
    Fij = F_tensor(config.F, geom.h, geom.g).reshape(M, n, n)
    kappa = geom.kappa.reshape(M, n)
    _, dF = config.F.value_grad(kappa)
    second = np.sum(dF * kappa * kappa, axis=-1)

    X = np.zeros((M, n, n + 1))
    X[:, :, 0] = geom.Du.reshape(M, n)
    for i in range(n):
        X[:, i, 1 + i] = 1.0
    nu = geom.nu.reshape(M, n + 1)
    R, raw = riemann_batch(spec, u_c.values.reshape(M), grid.coords().reshape(M, n))
    S = np.einsum("mabcd,ma,mib,mc,mjd->mij", R, nu, X, nu, X)
    curv = np.einsum("mij,mij->m", Fij, S)
    q = second + curv

    D1 = [_axis_operator(grid, a, 1) for a in range(n)]
    chris = geom.christoffel.reshape(M, n, n, n)
    B = sp.diags(q)
    for i in range(n):
        for j in range(n):
            if i == j:
                Dij = _axis_operator(grid, i, 2)
            else:
                a, b = sorted((i, j))
                Dij = D1[b] @ D1[a]
            B = B - sp.diags(Fij[:, i, j]) @ Dij
    first = np.einsum("mij,mkij->mk", Fij, chris)
    for k in range(n):
        B = B + sp.diags(first[:, k]) @ D1[k]
    B = B.tocsr()
    w = np.sqrt(geom.sqrtg.reshape(-1))
    Sm = sp.diags(w) @ B @ sp.diags(1.0 / w)
    nrm = sp.linalg.norm(Sm)
    defect = float(sp.linalg.norm(Sm - Sm.T) / nrm) if nrm > 0 else 0.0
    return StabilityOperator(B=B, zeroth=q.reshape(grid.shape), weight=geom.sqrtg.copy(),
                             symmetry_defect=defect, riemann_defect=float(np.max(raw)))


# -- smallest eigenvalue -------------------------------------------------------------------

class _ShiftedSolver:
    """Factorization of ``A - s I`` with inertia, dense for small, sparse otherwise."""

    DENSE_LIMIT = 1024

    def __init__(self, A, s):
        self.m = A.shape[0]
        self.dense = self.m <= self.DENSE_LIMIT
        if self.dense:
            Ad = (A.toarray() if sp.issparse(A) else np.asarray(A)) - s * np.eye(self.m)
            self._lu = sla.lu_factor(Ad, check_finite=False)
            self._Ad = Ad
        else:
            As = (sp.csc_matrix(A) - s * sp.identity(self.m, format="csc")).tocsc()
            self._lu = spla.splu(As, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})

    def solve(self, b):
        if self.dense:
            return sla.lu_solve(self._lu, b, check_finite=False)
        return self._lu.solve(b)

    def negative_count(self):
        """Number of eigenvalues of the symmetric ``A`` below the shift."""
        if self.dense:
            _, D, _ = sla.ldl(self._Ad)
            return int(np.sum(np.linalg.eigvalsh(D) < 0))
        if not np.array_equal(self._lu.perm_r, self._lu.perm_c):
            raise EigenSolveFailure("factorization pivoted off the diagonal; inertia unavailable")
        return int(np.sum(self._lu.U.diagonal() < 0))


def _gershgorin_lower(A):
    A = sp.csr_matrix(A)
    d = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
    return float(np.min(d - off))


def lambda_min(B, tol=1e-8, max_iter=200):
    """Smallest eigenvalue of the symmetric part of ``B`` and its eigenvector.

    Inverse iteration from the constant vector with a shift below the
    Gershgorin bound, bisection on the inertia of ``A - s I`` to bring the
    shift just under the lowest eigenvalue, then Rayleigh quotient
    iteration to the residual tolerance.  The result is certified by a
    final inertia count.  Returns ``(lambda, vector, info)``.
    """
    if isinstance(B, StabilityOperator):
        A = B.symmetrized()
    else:
        A = sp.csr_matrix(B)
        A = ((A + A.T) * 0.5).tocsr()
    m = A.shape[0]
    norm_a = float(abs(A).sum(axis=1).max())
    x = np.ones(m) / math.sqrt(m)

    def rq(vec):
        y = A @ vec
        lam = float(vec @ y)
        return lam, float(np.linalg.norm(y - lam * vec))

    lam, res = rq(x)
    lo = _gershgorin_lower(A) - 1.0
    hi = lam
    if res > tol * max(1.0, abs(lam)):
        solver = _ShiftedSolver(A, lo)
        for _ in range(5):
            x = solver.solve(x)
            x /= np.linalg.norm(x)
        lam, res = rq(x)
        hi = min(hi, lam)
        # bisect the shift towards the bottom of the spectrum
        gap_tol = 1e-3 * max(1.0, abs(hi))
        while hi - lo > gap_tol:
            mid = 0.5 * (lo + hi)
            if _ShiftedSolver(A, mid).negative_count() == 0:
                lo = mid
            else:
                hi = mid
        solver = _ShiftedSolver(A, lo)
        for _ in range(max_iter):
            x = solver.solve(x)
            x /= np.linalg.norm(x)
            lam, res = rq(x)
            if res <= 1e-3 * max(1.0, abs(lam)):
                break
        for _ in range(max_iter):
            if res <= tol * max(1.0, abs(lam)):
                break
            try:
                y = _ShiftedSolver(A, lam).solve(x)
            except (RuntimeError, ValueError, np.linalg.LinAlgError):
                break  # shift hit an eigenvalue exactly
            if not np.all(np.isfinite(y)):
                break
            x = y / np.linalg.norm(y)
            lam, res = rq(x)
    if not res <= tol * max(1.0, abs(lam)):
        raise EigenSolveFailure("eigenpair residual above tolerance", residual=res, eigenvalue=lam)
    margin = max(10.0 * res, 1e-10 * max(1.0, norm_a))
    below = _ShiftedSolver(A, lam - margin).negative_count()
    if below != 0:
        raise EigenSolveFailure("converged eigenvalue is not the smallest", eigenvalue=lam,
                                eigenvalues_below=below)
    return lam, x, {"residual": res, "relative_residual": res / max(1.0, abs(lam)),
                    "size": m, "certified_below": lam - margin}


@dataclass
class StabilityReport:
    size: int
    nnz: int
    lambda1: float
    residual: float
    symmetry_defect: float
    zeroth_min: float
    zeroth_max: float
    strictly_stable: bool

    def to_dict(self):
        return dataclasses.asdict(self)


def stability_report(u_c: ScalarField, config: fl.FlowConfig) -> StabilityReport:
    op = stability_operator(u_c, config)
    lam, _, info = lambda_min(op)
    return StabilityReport(size=op.B.shape[0], nnz=int(op.B.nnz), lambda1=lam,
                           residual=info["residual"], symmetry_defect=op.symmetry_defect,
                           zeroth_min=float(np.min(op.zeroth)), zeroth_max=float(np.max(op.zeroth)),
                           strictly_stable=bool(lam > 0))


# -- recovery of a CFC graph from a perturbed start --------------------------------------------

def perturbation_mode(grid, mode=1):
    """Fixed smooth zero-mean test modes on the torus."""
    x = grid.coords()
    X = [2 * math.pi * x[..., i] / grid.periods[i] for i in range(grid.n)]
    if mode == 1:
        w = np.cos(X[0])
        for Xi in X[1:]:
            w = w + np.cos(Xi)
    elif mode == 2:
        w = np.sin(2 * X[0]) + 0.5 * np.cos(X[0])
        for Xi in X[1:]:
            w = w * np.cos(Xi)
    else:
        raise InvalidArgument("perturbation mode must be 1 or 2", mode=mode)
    return w - np.mean(w)


def _conserved(config, u, k):
    if k == 0:
        return fl.enclosed_volume(config.ambient, u)
    geom = graph_geometry(config.ambient, u, margin=config.margin, workers=config.workers)
    return fl.area(geom)


def recover_cfc(u_c: ScalarField, amplitude, k, config: fl.FlowConfig, mode=1, sink=None):
    """Perturb ``u_c``, match its volume (``k = 0``) or area (``k = 1``) by a
    constant shift, and flow back with ``preserve(k)``."""
    if k not in (0, 1):
        raise NotSupported("recovery matches the enclosed volume (k = 0) or the area (k = 1)", k=k)
    grid = u_c.grid
    target = _conserved(config, u_c, k)
    if amplitude == 0:
        return {"amplitude": 0.0, "k": k, "mode": mode, "shift": 0.0, "sup_distance": 0.0,
                "drift": 0.0, "status": "converged", "u_final": u_c, "report": None}
    base = u_c.values + amplitude * perturbation_mode(grid, mode)

    def mismatch(s):
        return _conserved(config, ScalarField(grid, base + s), k) - target

    span = 2.0 * abs(amplitude) + 1e-12
    lo, hi = -span, span
    for _ in range(60):
        if mismatch(lo) * mismatch(hi) <= 0:
            break
        lo, hi = 2 * lo, 2 * hi
    scale = max(abs(target), 1.0)
    shift = brentq(mismatch, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    u0 = ScalarField(grid, base + shift)
    matched = mismatch(shift)
    if abs(matched) > 1e-12 * scale:
        raise NoConvergence("could not match the conserved quantity", mismatch=matched)
    records, state, report = fl.run(preserve_config(config, k), u0, sink=sink)
    key = "volume" if k == 0 else "area"
    drift = report.drifts.get(key)
    return {"amplitude": float(amplitude), "k": k, "mode": mode, "shift": float(shift),
            "matched_mismatch": float(matched),
            "sup_distance": float(np.max(np.abs(state.u.values - u_c.values))),
            "drift": drift, "status": report.status, "u_final": state.u, "report": report}
