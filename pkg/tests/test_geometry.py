import math

import numpy as np
import pytest

from conftest import TWO_PI
from vpflow.ambient import conformal_desitter, conformal_powerlaw, metric, minkowski_torus
from vpflow.errors import NotSpacelike, NotSupported
from vpflow.geometry import (du_norm2_induced, embedding_oracle_h, graph_geometry,
                             induced_scalar_curvature)
from vpflow.grid import Grid, ScalarField


def field(n, N, fn):
    g = Grid((N,) * n, (TWO_PI,) * n)
    x = g.coords()
    return ScalarField(g, fn(*[x[..., i] for i in range(n)]))


def test_flat_slice_has_zero_curvature():
    geo = graph_geometry(minkowski_torus(2), field(2, 16, lambda x, y: 0.3 + 0 * x))
    assert np.all(geo.kappa == 0.0) and np.all(geo.v == 1.0)
    assert np.allclose(geo.g, np.eye(2))


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("c", [-0.5, -1.0, -2.5])
def test_conformal_slice_curvature_closed_form(n, c):
    # e^psi = -t: every principal curvature is 1 / c^2
    geo = graph_geometry(conformal_powerlaw(n), field(n, 16, lambda *x: c + 0 * x[0]))
    assert np.allclose(geo.kappa, 1.0 / c ** 2, rtol=1e-13)


def test_de_sitter_slice_curvature_is_minus_one():
    geo = graph_geometry(conformal_desitter(2), field(2, 16, lambda x, y: -0.7 + 0 * x))
    assert np.allclose(geo.kappa, -1.0, rtol=1e-13)


@pytest.mark.parametrize("compiled", [True, False])
def test_flat_curve_curvature_formula(compiled):
    # kappa = -u'' / (1 - u'^2)^{3/2} for the past normal in Minkowski
    A = 0.4
    u = field(1, 256, lambda x: A * np.cos(x))
    x = u.grid.coords()[..., 0]
    geo = graph_geometry(minkowski_torus(1), u, compiled=compiled)
    exact = A * np.cos(x) / (1 - (A * np.sin(x)) ** 2) ** 1.5
    assert np.max(np.abs(geo.kappa[..., 0] - exact)) < 1e-7
    assert geo.kappa[0, 0] == pytest.approx(A, rel=1e-7)


def test_compiled_curve_matches_array_path():
    u = field(1, 64, lambda x: -1.2 + 0.1 * np.sin(x) + 0.05 * np.cos(3 * x))
    spec = conformal_powerlaw(1)
    a = graph_geometry(spec, u, compiled=True)
    b = graph_geometry(spec, u, compiled=False)
    for name in ("v", "g", "ginv", "sqrtg", "nu", "h", "kappa", "christoffel"):
        assert np.allclose(getattr(a, name), getattr(b, name), rtol=1e-13, atol=1e-14), name


@pytest.mark.parametrize("spec,n", [(minkowski_torus(2), 2), (conformal_powerlaw(1), 1),
                                    (conformal_desitter(2), 2)])
def test_second_fundamental_form_against_embedding_oracle(spec, n):
    off = -1.3 if spec.name.startswith("conformal") else 0.2
    fn = (lambda x: off + 0.15 * np.sin(x)) if n == 1 else \
        (lambda x, y: off + 0.15 * np.sin(x) + 0.1 * np.cos(x + y))
    errs = []
    for N in (32, 64, 128):
        u = field(n, N, fn)
        errs.append(np.max(np.abs(graph_geometry(spec, u).h - embedding_oracle_h(spec, u))))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 1.9
    assert errs[-1] < 1e-3


def test_normal_is_unit_past_timelike():
    spec = conformal_powerlaw(2)
    u = field(2, 16, lambda x, y: -1.0 + 0.2 * np.sin(x) * np.cos(y))
    geo = graph_geometry(spec, u)
    gbar = metric(spec, u.values, u.grid.coords())
    norm = np.einsum("...a,...ab,...b->...", geo.nu, gbar, geo.nu)
    assert np.allclose(norm, -1.0, atol=1e-13)
    assert np.all(geo.nu[..., 0] < 0)
    # nu is orthogonal to the tangents (u_i, e_i)
    for i in range(2):
        X = np.zeros(u.grid.shape + (3,))
        X[..., 0] = geo.Du[..., i]
        X[..., 1 + i] = 1.0
        assert np.allclose(np.einsum("...a,...ab,...b->...", X, gbar, geo.nu), 0.0, atol=1e-13)


def test_inverse_metric_and_gradient_identity():
    spec = conformal_powerlaw(2)
    u = field(2, 16, lambda x, y: -1.0 + 0.3 * np.sin(x + 2 * y))
    geo = graph_geometry(spec, u)
    assert np.allclose(np.einsum("...ij,...jk->...ik", geo.g, geo.ginv), np.eye(2), atol=1e-13)
    # with sigma = delta: g^{ij} u_i u_j = e^{-2 psi} |Du|^2 / v^2
    expect = np.exp(-2 * geo.psi) * geo.du_norm2_sigma / geo.v ** 2
    assert np.allclose(du_norm2_induced(geo), expect, rtol=1e-12)
    assert np.all((geo.v > 0) & (geo.v <= 1))
    assert np.allclose(geo.sqrtg, np.exp(2 * geo.psi) * geo.v, rtol=1e-13)


def test_steep_graph_rejected():
    with pytest.raises(NotSpacelike):
        graph_geometry(minkowski_torus(1), field(1, 32, lambda x: 1.2 * np.sin(x)))
    with pytest.raises(NotSpacelike):
        embedding_oracle_h(minkowski_torus(1), field(1, 32, lambda x: 1.2 * np.sin(x)))


def test_dimension_mismatch():
    with pytest.raises(NotSupported):
        graph_geometry(minkowski_torus(2), field(1, 16, lambda x: 0 * x))


def test_workers_do_not_change_any_bit():
    spec = conformal_powerlaw(2)
    u = field(2, 32, lambda x, y: -1.1 + 0.1 * np.sin(x) * np.cos(2 * y))
    a = graph_geometry(spec, u, workers=1)
    b = graph_geometry(spec, u, workers=4)
    for name in ("v", "g", "h", "kappa", "christoffel", "nu"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


def test_scalar_curvature_of_slice_is_zero():
    u = field(2, 16, lambda x, y: -1.0 + 0 * x)
    R = induced_scalar_curvature(u, graph_geometry(conformal_powerlaw(2), u))
    assert np.max(np.abs(R.values)) < 1e-12


def test_scalar_curvature_requires_surfaces():
    u = field(1, 16, lambda x: 0 * x)
    with pytest.raises(NotSupported):
        induced_scalar_curvature(u, graph_geometry(minkowski_torus(1), u))


def test_flat_gauss_equation():
    # in Minkowski R = -2 kappa_1 kappa_2, so R < 0 where kappa_1 kappa_2 > 0
    u = field(2, 64, lambda x, y: 0.3 * np.sin(x) * np.sin(y))
    geo = graph_geometry(minkowski_torus(2), u)
    R = induced_scalar_curvature(u, geo).values
    kk = geo.kappa[..., 0] * geo.kappa[..., 1]
    assert np.max(np.abs(R + 2 * kk)) < 1e-3
    strong = kk > 1e-2
    assert np.any(strong) and np.all(R[strong] < 0)
