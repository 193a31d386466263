"""Closed-form batched linear algebra for n <= 3.

Everything here works elementwise over leading axes with explicit formulas,
so a result never depends on how the batch is split between workers.
"""

import math

import numpy as np

from .errors import SingularMetric


def det_small(a):
    n = a.shape[-1]
    if n == 1:
        return a[..., 0, 0].copy()
    if n == 2:
        return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    if n == 3:
        return (a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
                - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
                + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]))
    return np.linalg.det(a)


def inv_small(a):
    """Inverse by the adjugate; returns ``(inverse, det)``."""
    n = a.shape[-1]
    d = det_small(a)
    out = np.empty_like(a)
    if n == 1:
        out[..., 0, 0] = 1.0 / d
    elif n == 2:
        out[..., 0, 0] = a[..., 1, 1] / d
        out[..., 1, 1] = a[..., 0, 0] / d
        out[..., 0, 1] = -a[..., 0, 1] / d
        out[..., 1, 0] = -a[..., 1, 0] / d
    elif n == 3:
        for i in range(3):
            for j in range(3):
                r = [k for k in range(3) if k != j]
                c = [k for k in range(3) if k != i]
                minor = a[..., r[0], c[0]] * a[..., r[1], c[1]] - a[..., r[0], c[1]] * a[..., r[1], c[0]]
                out[..., i, j] = (-1) ** (i + j) * minor / d
    else:
        out = np.linalg.inv(a)
    return out, d


def cholesky_inverse(g):
    """Inverse lower Cholesky factor ``M = L^{-1}`` with ``g = L L^T``."""
    n = g.shape[-1]
    L = np.zeros_like(g)
    for j in range(n):
        s = g[..., j, j] - sum(L[..., j, k] ** 2 for k in range(j))
        if np.any(~(s > 0)):
            raise SingularMetric("matrix is not positive definite", min_pivot=float(np.min(s)))
        L[..., j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            L[..., i, j] = (g[..., i, j] - sum(L[..., i, k] * L[..., j, k] for k in range(j))) / L[..., j, j]
    M = np.zeros_like(g)
    for i in range(n):
        M[..., i, i] = 1.0 / L[..., i, i]
        for j in range(i):
            M[..., i, j] = -sum(L[..., i, k] * M[..., k, j] for k in range(j, i)) / L[..., i, i]
    return M


def whiten(h, g):
    """``S = L^{-1} h L^{-T}``: symmetric, with the eigenvalues of ``h`` relative to ``g``."""
    M = cholesky_inverse(g)
    n = g.shape[-1]
    S = np.empty_like(h)
    for i in range(n):
        for j in range(i, n):
            acc = 0.0
            for k in range(n):
                for l in range(n):
                    acc = acc + M[..., i, k] * h[..., k, l] * M[..., j, l]
            S[..., i, j] = acc
            S[..., j, i] = acc
    return S, M


def sym_eigvals(S):
    """Ascending eigenvalues of symmetric ``S`` (n <= 3) in closed form."""
    n = S.shape[-1]
    if n == 1:
        return S[..., 0:1, 0].copy()
    if n == 2:
        a, b, c = S[..., 0, 0], S[..., 0, 1], S[..., 1, 1]
        m = 0.5 * (a + c)
        r = np.hypot(0.5 * (a - c), b)
        return np.stack([m - r, m + r], axis=-1)
    if n == 3:
        return _eig3(S)
    return np.linalg.eigvalsh(S)


def _eig3(A):
    # trigonometric solution of the characteristic cubic
    q = (A[..., 0, 0] + A[..., 1, 1] + A[..., 2, 2]) / 3.0
    p1 = A[..., 0, 1] ** 2 + A[..., 0, 2] ** 2 + A[..., 1, 2] ** 2
    p2 = ((A[..., 0, 0] - q) ** 2 + (A[..., 1, 1] - q) ** 2 + (A[..., 2, 2] - q) ** 2 + 2.0 * p1)
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    B = (A - q[..., None, None] * np.eye(3)) / safe[..., None, None]
    r = np.clip(det_small(B) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e_hi = q + 2.0 * p * np.cos(phi)
    e_lo = q + 2.0 * p * np.cos(phi + 2.0 * math.pi / 3.0)
    e_mid = 3.0 * q - e_hi - e_lo
    out = np.stack([e_lo, e_mid, e_hi], axis=-1)
    return np.sort(out, axis=-1, kind="stable")


def principal_curvatures(h, g):
    """Eigenvalues of ``h`` relative to the SPD matrix ``g``, ascending."""
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float)
    if g.shape[-1] == 1:
        if np.any(~(g[..., 0, 0] > 0)):
            raise SingularMetric("metric is not positive definite")
        return (h[..., 0, 0] / g[..., 0, 0])[..., None]
    S, _ = whiten(h, g)
    return sym_eigvals(S)


def eigenframe(h, g):
    """Principal curvatures and a ``g``-orthonormal eigenbasis.

    Returns ``(kappa, E)`` with ``E[..., :, a]`` the contravariant components
    of the unit principal direction for ``kappa[..., a]``.
    """
    S, M = whiten(np.asarray(h, dtype=float), np.asarray(g, dtype=float))
    lam, Q = np.linalg.eigh(S)
    E = np.einsum("...ki,...kj->...ij", M, Q)  # L^{-T} Q
    return lam, E
