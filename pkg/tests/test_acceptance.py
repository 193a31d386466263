"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION k: PASS|FAIL ...`` line and then asserts.
Expensive runs live in module fixtures so later criteria can audit them.
"""

import math
import time

import numpy as np
import pytest

from conftest import TWO_PI
from vpflow import cfc
from vpflow import flow as fl
from vpflow.ambient import conformal_powerlaw, minkowski_torus
from vpflow.checks import run_oracle_suites, run_property_suites
from vpflow.curvfun import CurvatureFunctionSpec, SupplementarySpec, parse_curvature_function
from vpflow.errors import NotAdmissible
from vpflow.geometry import graph_geometry
from vpflow.grid import Grid, ScalarField


def emit(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}")


def grid_for(n, N):
    return Grid((N,) * n, (TWO_PI,) * n)


def config(spec, N, F, phi, force, **kw):
    F = F if isinstance(F, CurvatureFunctionSpec) else parse_curvature_function(F, spec.n)
    kw.setdefault("c_safe", 0.4)
    return fl.FlowConfig(spec, grid_for(spec.n, N), F, SupplementarySpec(phi), force, **kw)


def perturbed(grid, offset, amp=0.1, second=0.05):
    x = grid.coords()
    u = offset + amp * np.sin(x[..., 0])
    if grid.n == 2:
        u = offset + amp * np.sin(x[..., 0]) * np.cos(x[..., 1]) + second * np.cos(x[..., 1])
    return ScalarField(grid, u)


def timed_run(cfg, u0):
    start = time.perf_counter()
    records, state, report = fl.run(cfg, u0)
    return {"records": records, "state": state, "report": report, "config": cfg,
            "elapsed": time.perf_counter() - start}


# -- shared runs -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def conservation_runs():
    out = {}
    cfg = config(minkowski_torus(1), 256, "mean", "identity", fl.ForceMode("preserve", 0),
                 cadence=200)
    out["flat-volume"] = timed_run(cfg, perturbed(cfg.grid, 0.0, second=0.0))
    cfg = config(conformal_powerlaw(1), 256, CurvatureFunctionSpec("mean", 1, "Gamma1"),
                 "identity", fl.ForceMode("preserve", 1), cadence=200)
    out["conformal-area"] = timed_run(cfg, perturbed(cfg.grid, -1.5))
    return out


@pytest.fixture(scope="module")
def mixed_runs():
    out = {}
    for k in (0, 1):
        cfg = config(conformal_powerlaw(2), 64, "sqrtH2", "identity", fl.ForceMode("preserve", k),
                     cadence=100)
        out[k] = timed_run(cfg, perturbed(cfg.grid, -1.5, second=0.0))
    return out


DECAY_FAMILIES = [("mean", "identity", 1, (32, 64)),
                  ("sqrtH2", "neg-reciprocal", 2, (16, 32)),
                  ("sigmaN", "log", 2, (16, 32)),
                  ("kstar-product:a=0.5", "log", 2, (16, 32))]


@pytest.fixture(scope="module")
def decay_runs():
    out = {}
    for F, phi, n, grids in DECAY_FAMILIES:
        for N in grids:
            cfg = config(conformal_powerlaw(n), N, F, phi, fl.ForceMode("preserve", 0),
                         cadence=5, tol_eta=1e-10)
            out[(F, N)] = timed_run(cfg, perturbed(cfg.grid, -1.5))
    return out


CFC_CASES = [("mean", "identity", 1, 64), ("sigmaN", "log", 2, 16)]


@pytest.fixture(scope="module")
def cfc_solutions():
    out = {}
    for F, phi, n, N in CFC_CASES:
        cfg = config(conformal_powerlaw(n), N, F, phi, fl.ForceMode("preserve", 0),
                     tol_eta=1e-10, T_max=200.0)
        out[F] = (cfg, cfc.solve_cfc(0.5, perturbed(cfg.grid, -1.5, amp=0.05, second=0.02), cfg))
    return out


@pytest.fixture(scope="module")
def recoveries(cfc_solutions):
    out = {}
    for F, (cfg, sol) in cfc_solutions.items():
        start = time.perf_counter()
        modes = [cfc.recover_cfc(sol.u_c, 0.02, 0, cfg, mode=m) for m in (1, 2)]
        out[F] = (modes, time.perf_counter() - start)
    return out


# -- criteria -----------------------------------------------------------------------------

def dt_refinement(spec, F, k, offset, key, c_safes=(0.4, 0.2, 0.1, 0.05)):
    """Conserved quantity at ``T = 3`` for a sequence of halved time steps."""
    finals, drifts = [], []
    for cs in c_safes:
        cfg = config(spec, 64, F, "identity", fl.ForceMode("preserve", k), c_safe=cs,
                     cadence=10 ** 9, T_max=3.0)
        x = cfg.grid.coords()[..., 0]
        u0 = ScalarField(cfg.grid, offset + 0.1 * np.sin(x) + 0.05 * np.cos(2 * x))
        records, _, report = fl.run(cfg, u0)
        scale = fl.absolute_volume(spec, u0) if key == "volume" else records[0].area
        finals.append(getattr(records[-1], key) / scale)
        drifts.append(report.drifts[key])
    # the part of the drift due to time stepping: differences between successive refinements
    steps = [abs(a - b) for a, b in zip(finals, finals[1:])]
    return drifts, steps


def refinement_orders(values, floor):
    return [math.log2(a / b) for a, b in zip(values, values[1:]) if b > floor]


def test_criterion_1_conservation(capsys, conservation_runs):
    flat = conservation_runs["flat-volume"]
    conf = conservation_runs["conformal-area"]
    flat_drift = flat["report"].drifts["volume"]
    area_drift = conf["report"].drifts["area"]
    floor = 1e-14
    # flat ambient: the discrete scheme conserves the volume up to rounding at every dt
    flat_drifts, _ = dt_refinement(minkowski_torus(1), CurvatureFunctionSpec("mean", 1), 0, 0.0,
                                   "volume")
    vol_drifts, vol_steps = dt_refinement(conformal_powerlaw(1), CurvatureFunctionSpec("mean", 1),
                                          0, -1.5, "volume")
    area_drifts, area_steps = dt_refinement(conformal_powerlaw(1),
                                            CurvatureFunctionSpec("mean", 1, "Gamma1"), 1, -1.5,
                                            "area")
    vol_orders = refinement_orders(vol_drifts, floor)
    area_orders = refinement_orders(area_steps, floor)
    checks = {
        "flat drift": flat_drift <= 1e-5,
        "flat runtime": flat["elapsed"] <= 60.0,
        "flat at rounding for every dt": max(flat_drifts) <= floor,
        "area drift": area_drift <= 1e-5,
        "area runtime": conf["elapsed"] <= 60.0,
        "volume dt order": len(vol_orders) >= 2 and min(vol_orders) >= 3.0,
        "area dt order": len(area_orders) >= 2 and min(area_orders) >= 3.0,
    }
    ok = all(checks.values())
    emit(capsys, 1, ok,
         f"flat V drift {flat_drift:.2e} ({flat['elapsed']:.1f}s, per-dt drifts "
         f"{max(flat_drifts):.1e} max); area drift {area_drift:.2e} ({conf['elapsed']:.1f}s); "
         f"dt orders volume {[round(o, 2) for o in vol_orders]} "
         f"area {[round(o, 2) for o in area_orders]}; failed {[k for k, v in checks.items() if not v]}")
    assert ok


def test_criterion_2_mixed_volume(capsys, mixed_runs):
    # flat sigma_2: with R = -2 sigma_2 and a flat torus, the integral of sigma_2 vanishes,
    # so no graph has kappa in Gamma_2 everywhere; try the auxiliary construction anyway
    aux_spec = conformal_powerlaw(2)
    flat_spec = minkowski_torus(2)
    F2 = CurvatureFunctionSpec("sqrtH2", 2)
    blocked, aux_admissible, integrals = True, True, []
    for N in (32, 64):
        grid = grid_for(2, N)
        aux = perturbed(grid, -1.5, second=0.0)
        aux_admissible = aux_admissible and bool(np.all(graph_geometry(aux_spec, aux).kappa > 0))
        for eps in (1.0, 0.3, 0.1):
            u = ScalarField(grid, eps * (aux.values - np.mean(aux.values)))
            if eps == 1.0:
                geom = graph_geometry(flat_spec, u)
                s2 = geom.kappa[..., 0] * geom.kappa[..., 1]
                integrals.append(abs(fl.integrate(s2, geom)) / fl.integrate(np.abs(s2), geom))
            try:
                fl.run(config(flat_spec, N, F2, "identity", fl.ForceMode("preserve", 2)), u)
                blocked = False
            except NotAdmissible:
                pass
    # the integral of sigma_2 tends to zero under refinement
    vanishing = math.log2(integrals[0] / integrals[1]) >= 1.9
    drifts = {}
    for k, run in mixed_runs.items():
        key = "volume" if k == 0 else "mixed_volume"
        drifts[k] = run["report"].drifts[key]
    ok = (aux_admissible and blocked and vanishing
          and all(d <= 1e-4 for d in drifts.values())
          and all(r["elapsed"] <= 600.0 for r in mixed_runs.values()))
    times = ", ".join(f"{r['elapsed']:.0f}s" for r in mixed_runs.values())
    emit(capsys, 2, ok,
         f"flat sigma_2 blocked by admissibility (|int sigma_2|/int|sigma_2| "
         f"{integrals[0]:.1e} -> {integrals[1]:.1e} at 32^2 -> 64^2); "
         f"fallback conformal n=2 64^2 sqrtH2 drifts k=0 {drifts[0]:.2e} k=1 {drifts[1]:.2e} "
         f"({times})")
    assert ok


def test_criterion_3_bound_monotonicity(capsys, conservation_runs, mixed_runs, decay_runs,
                                        cfc_solutions, recoveries):
    reports = [r["report"] for r in conservation_runs.values()]
    reports += [r["report"] for r in mixed_runs.values()]
    reports += [r["report"] for r in decay_runs.values()]
    reports += [sol.report for _, sol in cfc_solutions.values()]
    reports += [m["report"] for modes, _ in recoveries.values() for m in modes]
    convergent = [r for r in reports if r.status == "converged"]
    bad = [r.phi_monotone for r in convergent if not r.phi_monotone["ok"]]
    ok = len(convergent) == len(reports) and not bad
    emit(capsys, 3, ok, f"{len(convergent)}/{len(reports)} runs converged, "
                        f"{len(bad)} with a bound violating the slack")
    assert ok


def test_criterion_4_exponential_decay(capsys, decay_runs):
    rows, ok = [], True
    for F, _, _, grids in DECAY_FAMILIES:
        coarse, fine = (decay_runs[(F, N)]["report"] for N in grids)
        spread = abs(coarse.delta - fine.delta) / fine.delta
        good = (min(coarse.r2, fine.r2) >= 0.99 and min(coarse.delta, fine.delta) > 0
                and spread <= 0.10)
        ok = ok and good
        rows.append(f"{F}: delta {coarse.delta:.4f}/{fine.delta:.4f} R2>={min(coarse.r2, fine.r2):.4f}")
    emit(capsys, 4, ok, "; ".join(rows))
    assert ok


def test_criterion_5_limit_is_stable_cfc(capsys, decay_runs):
    rows, ok = [], True
    for (F, N), run in decay_runs.items():
        rep = run["report"]
        good = rep.sup_F_minus_c0 <= 1e-6 * abs(rep.c0) + 1e-9
        ok = ok and good
        rows.append(f"{F}/{N}: sup|F-c0| {rep.sup_F_minus_c0:.1e}")
    lams = {}
    for F, _, _, grids in DECAY_FAMILIES:
        run = decay_runs[(F, grids[-1])]
        lams[F] = cfc.stability_report(run["state"].u, run["config"]).lambda1
    ok = ok and all(lam > 0 for lam in lams.values())
    emit(capsys, 5, ok, "; ".join(rows) + "; lambda_1 " +
         ", ".join(f"{F} {lam:.4f}" for F, lam in lams.items()))
    assert ok


def test_criterion_6_geometry_oracles(capsys):
    results = run_oracle_suites()
    ok = all(r.passed for r in results)
    emit(capsys, 6, ok, "; ".join(f"{r.name} min order {r.worst:.3f}" for r in results))
    assert ok


def test_criterion_7_algebraic_suites(capsys):
    results = run_property_suites(samples=100000, euler_samples=10000)
    ok = all(r.passed for r in results)
    emit(capsys, 7, ok, "; ".join(f"{r.name} {r.violations}/{r.samples} violations" for r in results))
    assert ok


def test_criterion_8_foliation(capsys):
    rows, ok = [], True
    for F, phi, n, N in CFC_CASES:
        cfg = config(conformal_powerlaw(n), N, F, phi, fl.ForceMode("preserve", 0),
                     tol_eta=1e-10, T_max=200.0)
        start = time.perf_counter()
        result = cfc.foliate(0.4, 0.8, 8, cfg, perturbed(cfg.grid, -1.5, amp=0.05, second=0.02))
        elapsed = time.perf_counter() - start
        audit = result.audit()
        slice_err = max(float(np.max(np.abs(u.values - cfc.slice_solution(cfg, tau))))
                        for tau, u in zip(result.taus, result.graphs))
        good = (audit["ordered"] and audit["area_decreasing"] and audit["volume_increasing"]
                and not audit["violations"] and slice_err <= 1e-6 and elapsed <= 300.0)
        ok = ok and good
        rows.append(f"{F} n={n}: margins order {audit['ordering_min_margin']:.3e} "
                    f"area {audit['area_min_decrease']:.3e} "
                    f"volume {audit['volume_min_increase']:.3e}, slice error {slice_err:.1e}, "
                    f"{elapsed:.0f}s")
    emit(capsys, 8, ok, "; ".join(rows))
    assert ok


def test_criterion_9_cfc_recovery(capsys, cfc_solutions, recoveries):
    rows, ok = [], True
    for F, (modes, elapsed) in recoveries.items():
        cfg, sol = cfc_solutions[F]
        a, b = modes
        agree = float(np.max(np.abs(a["u_final"].values - b["u_final"].values)))
        good = (all(m["status"] == "converged" and m["sup_distance"] <= 1e-5
                    and m["drift"] <= 1e-5 for m in modes) and agree <= 2e-5)
        ok = ok and good
        rows.append(f"{F}: sup distance {a['sup_distance']:.1e}/{b['sup_distance']:.1e}, "
                    f"drift {a['drift']:.1e}/{b['drift']:.1e}, modes agree {agree:.1e} "
                    f"({elapsed:.0f}s)")
    emit(capsys, 9, ok, "; ".join(rows))
    assert ok


def test_criterion_10_determinism(capsys):
    streams, finals = [], []
    for workers in (1, 4):
        cfg = config(conformal_powerlaw(2), 32, "sigmaN", "log", fl.ForceMode("preserve", 0),
                     cadence=1, max_steps=40, workers=workers)
        lines = []
        _, state, _ = fl.run(cfg, perturbed(cfg.grid, -1.5), sink=lambda r: lines.append(r.to_json()))
        streams.append(lines)
        finals.append(state.u.values.tobytes())
    ok = streams[0] == streams[1] and finals[0] == finals[1] and len(streams[0]) == 41
    emit(capsys, 10, ok, f"{len(streams[0])} diagnostics lines identical at workers 1 and 4")
    assert ok
