"""Property suites run by ``vpflow check`` and ``vpflow oracle``.

Each suite returns a :class:`SuiteResult`; a suite passes when it records no
violation beyond its stated tolerance.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import flow as fl
from .ambient import conformal_desitter, conformal_powerlaw, minkowski_torus
from .curvfun import (CurvatureFunctionSpec, F_tensor, SupplementarySpec, check_FH_inequality,
                      check_maclaurin, cone_contains)
from .geometry import embedding_oracle_h, graph_geometry, induced_scalar_curvature
from .grid import Grid, ScalarField

MACLAURIN_TOL = 1e-12
FH_TOL = 1e-12
EULER_TOL = 1e-10


@dataclass
class SuiteResult:
    name: str
    passed: bool
    samples: int
    violations: int
    worst: float
    tolerance: float
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def sample_cone(cone, n, size, rng):
    """``size`` curvature vectors strictly inside ``cone``.

    Mixes three populations: lognormal positive vectors, shifted Gaussians
    (which reach the non-convex parts of ``Gamma_k``) and near-umbilic points
    where the inequalities are nearly sharp.
    """
    out = np.empty((0, n))
    while out.shape[0] < size:
        m = max(size, 1024)
        pos = np.exp(rng.normal(0.0, 1.0, (m // 3, n)))
        mu = rng.uniform(0.0, 3.0, (m // 3, 1))
        shifted = mu + rng.normal(0.0, 1.0, (m // 3, n))
        base = rng.uniform(0.1, 5.0, (m - 2 * (m // 3), 1))
        umbilic = base * (1.0 + 1e-4 * rng.normal(size=(m - 2 * (m // 3), n)))
        cand = np.concatenate([pos, shifted, umbilic])
        inside, _ = cone_contains(cone, cand)
        out = np.concatenate([out, cand[inside]])
    return out[:size]


def maclaurin_suite(samples=100000, seed=7, dims=(2, 3)):
    """``sigma~_k >= sigma~_{k+1}`` on ``Gamma_{k+1}`` for every pair that applies."""
    rng = np.random.default_rng(seed)
    checked = viol = 0
    worst = 0.0
    per_dim = {}
    for n in dims:
        kappa = sample_cone("Gamma2", n, samples, rng)
        _, slack = check_maclaurin(kappa, MACLAURIN_TOL)
        scale = np.maximum(1.0, np.abs(np.sum(kappa, axis=-1) / n))[:, None]
        rel = slack / scale
        valid = np.isfinite(rel)
        bad = valid & (rel < -MACLAURIN_TOL)
        checked += int(np.sum(valid))
        viol += int(np.sum(bad))
        worst = min(worst, float(np.min(np.where(valid, rel, 0.0))))
        per_dim[n] = {"points": samples, "comparisons": int(np.sum(valid)),
                      "violations": int(np.sum(bad))}
    return SuiteResult("maclaurin", viol == 0, samples * len(dims), viol, worst, MACLAURIN_TOL,
                       {"comparisons": checked, "per_dimension": per_dim})


def _families(n):
    fams = [CurvatureFunctionSpec("mean", n, "Gamma1"), CurvatureFunctionSpec("sigmaN", n),
            CurvatureFunctionSpec("kstar-product", n, a=0.5)]
    if n >= 2:
        fams.append(CurvatureFunctionSpec("sqrtH2", n))
    return fams


def fh_suite(samples=100000, seed=11, dims=(2, 3)):
    """``F <= F(1,...,1) H / n`` for every curvature function on its cone."""
    rng = np.random.default_rng(seed)
    viol = total = 0
    worst = 0.0
    per = {}
    for n in dims:
        for F in _families(n):
            kappa = sample_cone(F.cone, n, samples, rng)
            slack = check_FH_inequality(F, kappa)
            rel = slack / np.maximum(1.0, F.at_identity() * np.sum(kappa, axis=-1) / n)
            bad = int(np.sum(rel < -FH_TOL))
            viol += bad
            total += samples
            worst = min(worst, float(np.min(rel)))
            per[f"{F.label()}/n={n}"] = bad
    return SuiteResult("F<=F(1)H/n", viol == 0, total, viol, worst, FH_TOL, {"violations": per})


def random_pairs(F, size, rng):
    """Random SPD ``g`` and symmetric ``h`` whose eigenvalues relative to ``g`` lie in ``F``'s cone."""
    n = F.n
    L = np.eye(n) + 0.3 * rng.normal(size=(size, n, n))
    g = L @ np.swapaxes(L, -1, -2) + 0.1 * np.eye(n)
    C = np.linalg.cholesky(g)
    kappa = sample_cone(F.cone, n, size, rng)
    Q, _ = np.linalg.qr(rng.normal(size=(size, n, n)))
    S = np.einsum("mia,ma,mja->mij", Q, kappa, Q)
    h = C @ S @ np.swapaxes(C, -1, -2)
    return 0.5 * (h + np.swapaxes(h, -1, -2)), g, kappa


def euler_trace_suite(samples=10000, seed=13, dims=(2, 3)):
    """``F^{ij} h_ij = F`` (degree one homogeneity) through the tensor form."""
    rng = np.random.default_rng(seed)
    viol = total = 0
    worst = 0.0
    for n in dims:
        for F in _families(n):
            h, g, kappa = random_pairs(F, samples, rng)
            Fij = F_tensor(F, h, g)
            lhs = np.einsum("mij,mij->m", Fij, h)
            val, _ = F.value_grad(kappa)
            err = np.abs(lhs - val) / np.maximum(1.0, np.abs(val))
            viol += int(np.sum(err > EULER_TOL))
            total += samples
            worst = max(worst, float(np.max(err)))
    return SuiteResult("euler-trace", viol == 0, total, viol, worst, EULER_TOL)


def conservation_suite(points=32, T=1.0, tol=1e-5):
    """Short preserve(0) and preserve(1) runs; drift of the conserved quantity."""
    out = {}
    g = Grid((points,), (2 * math.pi,))
    x = g.coords()[..., 0]
    cases = [("volume", minkowski_torus(1), CurvatureFunctionSpec("mean", 1),
              fl.ForceMode("preserve", 0), 0.1 * np.sin(x)),
             ("area", conformal_powerlaw(1), CurvatureFunctionSpec("mean", 1, "Gamma1"),
              fl.ForceMode("preserve", 1), -1.5 + 0.1 * np.sin(x))]
    worst = 0.0
    monotone = True
    for key, spec, F, force, u0 in cases:
        cfg = fl.FlowConfig(spec, g, F, SupplementarySpec("identity"), force, c_safe=0.4,
                            T_max=T, tol_eta=1e-14, cadence=5)
        _, _, rep = fl.run(cfg, ScalarField(g, u0))
        out[key] = rep.drifts[key]
        worst = max(worst, rep.drifts[key])
        monotone = monotone and rep.phi_monotone["ok"]
    return SuiteResult("conservation", worst <= tol and monotone, len(cases), int(worst > tol),
                       worst, tol, {"drifts": out, "phi_bounds_monotone": monotone})


def run_property_suites(samples=100000, euler_samples=10000, seed=7):
    return [maclaurin_suite(samples, seed), fh_suite(samples, seed + 4),
            euler_trace_suite(euler_samples, seed + 6), conservation_suite()]


# -- geometry oracle convergence ---------------------------------------------------

def oracle_cases():
    """Three (ambient, graph) pairs with distinct metrics and dimensions."""
    two_pi = 2 * math.pi
    return [
        ("minkowski-2d", minkowski_torus(2),
         lambda x: 0.2 * np.sin(x[..., 0]) * np.cos(x[..., 1])),
        ("powerlaw-1d", conformal_powerlaw(1),
         lambda x: -1.5 + 0.1 * np.sin(x[..., 0]) + 0.05 * np.cos(2 * x[..., 0])),
        ("desitter-2d", conformal_desitter(2, [two_pi, two_pi]),
         lambda x: -1.2 + 0.1 * np.sin(x[..., 0]) + 0.05 * np.cos(2 * x[..., 1])),
    ]


def _orders(errors):
    return [float(math.log2(a / b)) for a, b in zip(errors, errors[1:])]


def oracle_h_study(points=(32, 64, 128)):
    """Max difference between the graph formula for ``h_ij`` and the embedding oracle."""
    out = {}
    for name, spec, fn in oracle_cases():
        errs = []
        for N in points:
            grid = Grid((N,) * spec.n, spec.periods)
            u = ScalarField(grid, fn(grid.coords()))
            geom = graph_geometry(spec, u)
            errs.append(float(np.max(np.abs(geom.h - embedding_oracle_h(spec, u)))))
        out[name] = {"points": list(points), "errors": errs, "orders": _orders(errs)}
    return out


def gauss_study(points=(16, 32, 64)):
    """``max |R + 2 kappa_1 kappa_2|`` for a graph in the flat 2-torus."""
    spec = minkowski_torus(2)
    errs = []
    for N in points:
        grid = Grid((N, N), spec.periods)
        x = grid.coords()
        u = ScalarField(grid, 0.2 * np.sin(x[..., 0]) * np.cos(x[..., 1]) + 0.1 * np.cos(x[..., 1]))
        geom = graph_geometry(spec, u)
        R = induced_scalar_curvature(u, geom).values
        errs.append(float(np.max(np.abs(R + 2 * geom.kappa[..., 0] * geom.kappa[..., 1]))))
    return {"points": list(points), "errors": errs, "orders": _orders(errs)}


def run_oracle_suites(points=(32, 64, 128), min_order=1.9):
    h = oracle_h_study(tuple(points))
    gs = gauss_study()
    results = []
    for name, rec in h.items():
        ok = all(o >= min_order for o in rec["orders"])
        results.append(SuiteResult(f"oracle-h/{name}", ok, len(rec["points"]), 0 if ok else 1,
                                   min(rec["orders"]), min_order, rec))
    ok = all(o >= min_order for o in gs["orders"])
    results.append(SuiteResult("gauss-equation", ok, len(gs["points"]), 0 if ok else 1,
                               min(gs["orders"]), min_order, gs))
    return results
