import math

import numpy as np
import pytest

from vpflow.ambient import (AmbientSpec, christoffel_time, christoffels, conformal_desitter,
                            conformal_powerlaw, enclosed_volume_density, metric, minkowski_torus,
                            nptsc_sample, preset, ricci, riemann, riemann_batch, tcc_sample,
                            warped_general)
from vpflow.errors import DomainError, InvalidArgument


def wobbly_spec(with_derivatives):
    """Non-conformal metric with sigma depending on t and x (n = 2)."""
    L = (2 * math.pi, 2 * math.pi)

    def psi(t, x):
        return 0.3 * np.sin(np.asarray(x)[..., 0]) + 0.1 * np.asarray(t)

    def sigma(t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        a = 1.0 + 0.2 * np.cos(x[..., 1]) + 0.1 * t * t
        b = 0.1 * np.sin(x[..., 0] + t)
        c = 1.5 + 0.1 * np.sin(x[..., 1])
        return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)

    def dpsi(t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        px = np.stack([0.3 * np.cos(x[..., 0]), np.zeros_like(t)], -1)
        return np.full(t.shape, 0.1), px

    def dsigma(t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        z = np.zeros_like(t)
        db = 0.1 * np.cos(x[..., 0] + t)
        st = np.stack([np.stack([0.2 * t, db], -1), np.stack([db, z], -1)], -2)
        sx0 = np.stack([np.stack([z, db], -1), np.stack([db, z], -1)], -2)
        sx1 = np.stack([np.stack([-0.2 * np.sin(x[..., 1]), z], -1),
                        np.stack([z, 0.1 * np.cos(x[..., 1])], -1)], -2)
        return st, np.stack([sx0, sx1], -1)

    kw = {"dpsi": dpsi, "dsigma": dsigma} if with_derivatives else {}
    return AmbientSpec(n=2, time_interval=(-2.0, 2.0), periods=L, psi=psi, sigma=sigma,
                       name="wobbly", **kw)


def christoffel_oracle(spec, t, x, h=1e-5):
    """Second order differences of the metric components, then the textbook formula."""
    n1 = spec.n + 1
    g = metric(spec, np.array(t), np.asarray(x))
    dg = np.empty((n1, n1, n1))
    for c in range(n1):
        tp, tm, xp, xm = t, t, np.array(x, float), np.array(x, float)
        if c == 0:
            tp, tm = t + h, t - h
        else:
            xp[c - 1] += h
            xm[c - 1] -= h
        dg[c] = (metric(spec, np.array(tp), xp) - metric(spec, np.array(tm), xm)) / (2 * h)
    # G[a, b, c] is Gamma_{a b c} with the first index lowered
    G = np.empty((n1, n1, n1))
    for a in range(n1):
        for b in range(n1):
            for c in range(n1):
                G[a, b, c] = 0.5 * (dg[b, a, c] + dg[c, a, b] - dg[a, b, c])
    return np.einsum("ad,dbc->abc", np.linalg.inv(g), G)


def test_minkowski_time_christoffels_vanish():
    tc = christoffel_time(minkowski_torus(2), 0.3, np.array([0.1, 0.2]))
    assert tc.g000 == 0.0 and np.all(tc.g00i == 0.0) and np.all(tc.g0ij == 0.0)


def test_conformal_time_christoffels_at_minus_one():
    # psi = -log(-t): psi' = -1/t = 1 at t = -1
    tc = christoffel_time(conformal_desitter(1), -1.0, np.array([0.4]))
    assert float(tc.g000) == pytest.approx(1.0, abs=1e-12)
    assert float(np.ravel(tc.g0ij)[0]) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(tc.g00i, 0.0)


@pytest.mark.parametrize("analytic", [True, False])
def test_christoffels_match_metric_difference_oracle(analytic):
    spec = wobbly_spec(analytic)
    rng = np.random.default_rng(5)
    for _ in range(5):
        t = rng.uniform(-1, 1)
        x = rng.uniform(0, 2 * math.pi, 2)
        G = christoffels(spec, np.array([t]), x[None])[0]
        ref = christoffel_oracle(spec, t, x)
        assert np.allclose(G, ref, rtol=1e-6, atol=1e-6 * np.abs(ref).max())


def test_riemann_flat_vanishes():
    s = riemann(minkowski_torus(2), 0.5, np.array([1.0, 2.0]))
    assert np.max(np.abs(s.R)) <= 1e-9


def test_de_sitter_constant_curvature_fit():
    spec = conformal_desitter(2)
    rng = np.random.default_rng(2)
    t = rng.uniform(-3.0, -0.5, 6)
    x = rng.uniform(0, 2 * math.pi, (6, 2))
    R, raw = riemann_batch(spec, t, x)
    g = metric(spec, t, x)
    basis = np.einsum("mac,mbd->mabcd", g, g) - np.einsum("mad,mbc->mabcd", g, g)
    K = float(np.sum(R * basis) / np.sum(basis * basis))
    resid = np.linalg.norm(R - K * basis) / np.linalg.norm(R)
    assert K == pytest.approx(1.0, rel=1e-5)
    assert resid <= 1e-5
    assert np.all(raw <= 1e-6)


@pytest.mark.parametrize("spec", [minkowski_torus(2), conformal_powerlaw(2), wobbly_spec(True)])
def test_riemann_symmetries(spec):
    t = -1.3 if spec.name.startswith("conformal") else 0.4
    s = riemann(spec, t, np.array([0.7, 1.9]))
    R = s.R
    scale = max(np.abs(R).max(), 1.0)
    assert np.abs(R + np.swapaxes(R, 0, 1)).max() <= 1e-6 * scale
    assert np.abs(R + np.swapaxes(R, 2, 3)).max() <= 1e-6 * scale
    assert np.abs(R - np.transpose(R, (2, 3, 0, 1))).max() <= 1e-6 * scale
    assert s.raw_violation <= 1e-6


def conformal_ricci_oracle(p, n, t):
    """Ricci of e^{2 psi} eta, psi = -p log(-t), from the conformal transformation law."""
    D = n + 1
    eta = np.diag([-1.0] + [1.0] * n)
    dpsi = np.zeros(D)
    dpsi[0] = -p / t
    hess = np.zeros((D, D))
    hess[0, 0] = p / t ** 2
    box = np.einsum("ab,ab->", np.linalg.inv(eta), hess)
    grad2 = dpsi @ np.linalg.inv(eta) @ dpsi
    return (-(D - 2) * hess + (D - 2) * np.outer(dpsi, dpsi)
            - eta * box - (D - 2) * eta * grad2)


@pytest.mark.parametrize("p,n", [(-1.0, 2), (-2.0, 1), (0.5, 2)])
def test_ricci_against_conformal_transformation_law(p, n):
    spec = conformal_powerlaw(n, p=p)
    t = -1.7
    s = riemann(spec, t, np.full(n, 0.3))
    assert np.allclose(ricci(s, spec), conformal_ricci_oracle(p, n, t), atol=1e-6)


def test_tcc_flat_and_minimal_sample():
    rep = tcc_sample(minkowski_torus(1), {"t": (-1.0, 1.0)}, 100)
    assert abs(rep.min_value) <= 1e-9 and rep.violating_fraction == 0.0
    one = tcc_sample(minkowski_torus(1), {"t": (0.0, 0.0)}, 1)
    assert one.n_samples == 1


def test_nptsc_flat_constant_and_invalid():
    flat = nptsc_sample(minkowski_torus(2), {"t": (-1.0, 1.0)}, 50)
    assert np.max(np.abs(flat.values)) <= 1e-9
    ds = nptsc_sample(conformal_desitter(2), {"t": (-3.0, -0.5)}, 40)
    assert np.ptp(ds.values) <= 1e-5 * np.max(np.abs(ds.values))
    with pytest.raises(InvalidArgument):
        nptsc_sample(minkowski_torus(1), {"t": (-1.0, 1.0)}, 0)


def test_powerlaw_default_satisfies_both_conditions():
    spec = conformal_powerlaw(2)
    assert tcc_sample(spec, {"t": (-3.0, -0.5)}, 64).violating_fraction == 0.0
    assert nptsc_sample(spec, {"t": (-3.0, -0.5)}, 64).violating_fraction == 0.0


def test_volume_density_examples():
    assert float(enclosed_volume_density(minkowski_torus(1), 0.2, np.array([0.1]))) == 1.0
    assert float(enclosed_volume_density(conformal_desitter(1), -2.0, np.array([0.1]))) == \
        pytest.approx(0.25)
    diag = AmbientSpec(n=2, time_interval=(-1.0, 1.0), periods=(1.0, 1.0),
                       psi=lambda t, x: np.zeros(np.shape(t)),
                       sigma=lambda t, x: np.broadcast_to(np.diag([4.0, 1.0]),
                                                          np.shape(t) + (2, 2)))
    assert float(enclosed_volume_density(diag, 0.0, np.array([0.2, 0.3]))) == pytest.approx(2.0)


def test_time_domain_enforced():
    with pytest.raises(DomainError):
        christoffel_time(conformal_powerlaw(1), 0.5, np.array([0.0]))
    with pytest.raises(DomainError):
        metric(conformal_powerlaw(1), np.array([np.nan]), np.zeros((1, 1)))


def test_evaluation_is_deterministic():
    spec = wobbly_spec(False)
    t, x = np.linspace(-1, 1, 7), np.linspace(0, 6, 14).reshape(7, 2)
    a, b = riemann_batch(spec, t, x)[0], riemann_batch(spec, t, x)[0]
    assert np.array_equal(a, b)


def test_preset_lookup():
    assert preset("conformal-powerlaw", 2, p=-2.0).params["p"] == -2.0
    with pytest.raises(InvalidArgument):
        preset("anti-de-sitter")


def test_warped_general_reproduces_tabulated_conformal_metric():
    tg = np.linspace(-3.0, -0.5, 120)
    N = 16
    psi_tab = np.repeat(np.log(-tg)[:, None], N, axis=1)
    sig_tab = np.ones((tg.size, N, 1, 1))
    spec = warped_general(tg, psi_tab, sig_tab, [2 * math.pi])
    ref = conformal_powerlaw(1)
    t = np.array([-2.2, -1.1])
    x = np.array([[0.3], [4.0]])
    assert np.allclose(metric(spec, t, x), metric(ref, t, x), rtol=1e-5)
    assert np.allclose(christoffels(spec, t, x), christoffels(ref, t, x), rtol=1e-3, atol=1e-4)
