"""Symmetric curvature functions, their cones and supplementary functions.

Everything is evaluated in eigenvalue form on arrays whose last axis holds
the ``n`` principal curvatures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NotAdmissible
from .linalg import eigenframe

CONE_TOL = 0.0


# -- elementary symmetric polynomials ------------------------------------------

def elementary_all(kappa):
    """``[H_0, ..., H_n]`` stacked on the last axis (product expansion)."""
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    E = np.zeros(kappa.shape[:-1] + (n + 1,))
    E[..., 0] = 1.0
    for i in range(n):
        k = kappa[..., i]
        for j in range(i + 1, 0, -1):
            E[..., j] = E[..., j] + k * E[..., j - 1]
    return E


def elementary_symmetric(k, kappa):
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    if not 0 <= k <= n:
        raise InvalidArgument("k must satisfy 0 <= k <= n", k=k, n=n)
    return elementary_all(kappa)[..., k]


def elementary_gradient(k, kappa):
    """``dH_k/dkappa_i = H_{k-1}`` of the curvatures with ``kappa_i`` removed."""
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    out = np.zeros(kappa.shape)
    if k == 0:
        return out
    for i in range(n):
        rest = np.delete(kappa, i, axis=-1)
        out[..., i] = elementary_all(rest)[..., k - 1] if n > 1 else 1.0
    return out


# -- cones ---------------------------------------------------------------------

def _normalize_cone(cone, n):
    if cone in ("R^n", "Rn", "all"):
        return ("all", 0)
    if cone in ("Gamma+", "Gamma_+", "positive"):
        return ("positive", n)
    if isinstance(cone, str) and cone.startswith("Gamma"):
        k = int(cone.replace("Gamma", "").lstrip("_"))
        if not 1 <= k <= n:
            raise InvalidArgument("cone index out of range", cone=cone, n=n)
        return ("gamma", k)
    raise InvalidArgument(f"unknown cone {cone!r}")


def cone_contains(cone, kappa):
    """Strict membership and the minimum slack of the defining inequalities.

    ``Gamma_k`` is ``{H_1 > 0, ..., H_k > 0}``, ``Gamma+`` the positive cone;
    slack is ``+inf`` for ``R^n``.
    """
    kappa = np.asarray(kappa, dtype=float)
    kind, k = _normalize_cone(cone, kappa.shape[-1])
    if kind == "all":
        slack = np.full(kappa.shape[:-1], np.inf)
    elif kind == "positive":
        slack = np.min(kappa, axis=-1)
    else:
        slack = np.min(elementary_all(kappa)[..., 1:k + 1], axis=-1)
    inside = slack > CONE_TOL
    if inside.ndim == 0:
        return bool(inside), float(slack)
    return inside, slack


# -- supplementary functions ----------------------------------------------------

@dataclass(frozen=True)
class SupplementarySpec:
    kind: str  # "identity", "neg-reciprocal", "log"

    def __post_init__(self):
        if self.kind not in ("identity", "neg-reciprocal", "log"):
            raise InvalidArgument(f"unknown supplementary function {self.kind!r}")

    @property
    def positive_domain(self):
        return self.kind != "identity"

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if self.positive_domain and np.any(~(x > 0)):
            raise NotAdmissible(f"{self.kind} needs positive arguments", min_value=float(np.min(x)))
        return x

    def value(self, x):
        x = self._check(x)
        if self.kind == "identity":
            return x.copy() if x.ndim else float(x)
        if self.kind == "neg-reciprocal":
            return -1.0 / x
        return np.log(x)

    def derivative(self, x):
        x = self._check(x)
        if self.kind == "identity":
            return np.ones_like(x)
        if self.kind == "neg-reciprocal":
            return 1.0 / (x * x)
        return 1.0 / x

    def second_derivative(self, x):
        x = self._check(x)
        if self.kind == "identity":
            return np.zeros_like(x)
        if self.kind == "neg-reciprocal":
            return -2.0 / x ** 3
        return -1.0 / (x * x)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "identity":
            return y.copy() if y.ndim else float(y)
        if self.kind == "neg-reciprocal":
            if np.any(~(y < 0)):
                raise NotAdmissible("-1/x takes only negative values", value=float(np.max(y)))
            return -1.0 / y
        return np.exp(y)


# -- curvature functions -------------------------------------------------------

KINDS = ("mean", "sqrtH2", "sigmaN", "kstar-product")
DEFAULT_CONE = {"mean": "R^n", "sqrtH2": "Gamma2", "sigmaN": "Gamma+", "kstar-product": "Gamma+"}


@dataclass(frozen=True)
class CurvatureFunctionSpec:
    """``kind`` and cone of a degree one curvature function.

    ``kstar-product`` is ``F = sigma_n^a * (1 / sum kappa_i^{-1})^(1 - a)``
    with ``sigma_n = H_n^{1/n}`` and ``0 < a <= 1``.
    """

    kind: str
    n: int
    cone: str = ""
    a: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown curvature function {self.kind!r}", allowed=list(KINDS))
        if self.n not in (1, 2, 3):
            raise InvalidArgument("n must be 1, 2 or 3", n=self.n)
        if not self.cone:
            object.__setattr__(self, "cone", DEFAULT_CONE[self.kind])
        kind, k = _normalize_cone(self.cone, self.n)
        allowed = {"mean": {("all", 0), ("gamma", 1)},
                   "sqrtH2": {("gamma", 2)},
                   "sigmaN": {("positive", self.n)},
                   "kstar-product": {("positive", self.n)}}[self.kind]
        if self.n == 1 and self.kind != "mean":
            allowed = allowed | {("gamma", 1), ("positive", 1)}
        if (kind, k) not in allowed:
            raise InvalidArgument("cone does not match the curvature function",
                                  kind=self.kind, cone=self.cone)
        if self.kind == "sqrtH2" and self.n < 2:
            raise InvalidArgument("sqrtH2 needs n >= 2")
        if self.kind == "kstar-product" and not 0 < self.a <= 1:
            raise InvalidArgument("kstar-product exponent must lie in (0, 1]", a=self.a)

    @property
    def degree(self):
        return 1

    @property
    def cone_index(self):
        kind, k = _normalize_cone(self.cone, self.n)
        return k

    def label(self):
        return f"kstar-product:a={self.a:g}" if self.kind == "kstar-product" else self.kind

    def at_identity(self):
        """``F(1, ..., 1)``."""
        return float(self.value(np.ones(self.n)))

    def value(self, kappa):
        return self.value_grad(kappa)[0]

    def value_grad(self, kappa, check=True):
        kappa = np.asarray(kappa, dtype=float)
        if kappa.shape[-1] != self.n:
            raise InvalidArgument("wrong number of principal curvatures", n=self.n, got=kappa.shape[-1])
        if check:
            inside, slack = cone_contains(self.cone, kappa)
            if not np.all(inside):
                worst = int(np.argmin(np.ravel(slack)))
                raise NotAdmissible("principal curvatures outside the cone", cone=self.cone,
                                    node=worst, slack=float(np.ravel(slack)[worst]),
                                    kappa=np.reshape(kappa, (-1, self.n))[worst].tolist())
        n = self.n
        if self.kind == "mean":
            return np.sum(kappa, axis=-1), np.ones_like(kappa)
        if self.kind == "sqrtH2":
            E = elementary_all(kappa)
            F = np.sqrt(E[..., 2])
            return F, (E[..., 1, None] - kappa) / (2.0 * F[..., None])
        if self.kind == "sigmaN":
            F = np.prod(kappa, axis=-1) ** (1.0 / n)
            return F, F[..., None] / (n * kappa)
        a = self.a
        inv = 1.0 / kappa
        s = np.sum(inv, axis=-1)
        sig = np.prod(kappa, axis=-1) ** (1.0 / n)
        F = sig ** a * (1.0 / s) ** (1.0 - a)
        dF = F[..., None] * (a / (n * kappa) + (1.0 - a) * inv * inv / s[..., None])
        return F, dF


def parse_curvature_function(text, n, cone=""):
    """Parse ``mean``, ``sqrtH2``, ``sigmaN`` or ``kstar-product:a=<float>``."""
    text = str(text).strip()
    if text.startswith("kstar-product"):
        a = 0.5
        rest = text[len("kstar-product"):]
        if rest:
            if not rest.startswith(":a="):
                raise InvalidArgument(f"cannot parse curvature function {text!r}")
            try:
                a = float(rest[3:])
            except ValueError as exc:
                raise InvalidArgument(f"cannot parse exponent in {text!r}") from exc
        return CurvatureFunctionSpec("kstar-product", n, cone, a)
    return CurvatureFunctionSpec(text, n, cone)


def F_value_grad(spec: CurvatureFunctionSpec, kappa):
    return spec.value_grad(kappa)


def F_tensor(spec: CurvatureFunctionSpec, h, g):
    """Contravariant ``F^{ij} = sum_a F_{,a} e_a^i e_a^j`` over a ``g``-orthonormal eigenframe.

    All implemented functions are smooth symmetric functions of the
    curvatures, so any orthonormal basis of a repeated eigenspace gives the
    same tensor.
    """
    kappa, E = eigenframe(h, g)
    _, dF = spec.value_grad(kappa)
    return np.einsum("...ia,...a,...ja->...ij", E, dF, E)


# -- inequalities --------------------------------------------------------------

def normalized_means(kappa):
    """``sigma~_k = (H_k / C(n, k))^{1/k}`` for ``k = 1..n``."""
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    E = elementary_all(kappa)
    out = np.empty(kappa.shape[:-1] + (n,))
    for k in range(1, n + 1):
        r = E[..., k] / math.comb(n, k)
        with np.errstate(invalid="ignore"):
            out[..., k - 1] = np.sign(r) * np.abs(r) ** (1.0 / k)
    return out


def check_maclaurin(kappa, tol=1e-12):
    """Slack ``sigma~_k - sigma~_{k+1}`` for each adjacent pair whose cone holds.

    Returns ``(ok, slack)`` where ``slack[..., k-1]`` belongs to the pair
    ``(k, k+1)`` and is ``nan`` when ``kappa`` is not in ``Gamma_{k+1}``.
    """
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    m = normalized_means(kappa)
    E = elementary_all(kappa)
    slack = np.full(kappa.shape[:-1] + (max(n - 1, 0),), np.nan)
    for k in range(1, n):
        valid = np.all(E[..., 1:k + 2] > 0, axis=-1)
        slack[..., k - 1] = np.where(valid, m[..., k - 1] - m[..., k], np.nan)
    scale = np.maximum(1.0, np.abs(m[..., :1]))
    ok = np.all(~(slack < -tol * scale), axis=-1)
    return ok, slack


def check_FH_inequality(spec: CurvatureFunctionSpec, kappa):
    """``F(1,...,1) H / n - F`` (non-negative for concave degree one ``F``)."""
    kappa = np.asarray(kappa, dtype=float)
    F, _ = spec.value_grad(kappa)
    H = np.sum(kappa, axis=-1)
    return spec.at_identity() * H / spec.n - F
