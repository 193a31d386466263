"""Uniform periodic grids on the flat torus, finite differences and field I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, ParseError

MAGIC = b"VPFIELD1\n"


@dataclass(frozen=True)
class Grid:
    points: tuple
    periods: tuple

    def __post_init__(self):
        if len(self.points) != len(self.periods) or not 1 <= len(self.points) <= 3:
            raise InvalidArgument("points and periods must both have length n in 1..3")
        for N in self.points:
            if N < 16 or N % 2:
                raise InvalidArgument("points per axis must be even and >= 16", points=self.points)
        if min(self.periods) <= 0:
            raise InvalidArgument("periods must be positive", periods=self.periods)

    @property
    def n(self):
        return len(self.points)

    @property
    def shape(self):
        return tuple(self.points)

    @property
    def size(self):
        return int(np.prod(self.points))

    @cached_property
    def spacing(self):
        return tuple(L / N for L, N in zip(self.periods, self.points))

    @cached_property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axes(self):
        return [h * np.arange(N) for h, N in zip(self.spacing, self.points)]

    def coords(self):
        """Node coordinates, shape ``grid.shape + (n,)`` (``ij`` indexing), read-only."""
        return self._coords

    @cached_property
    def _coords(self):
        x = np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)
        x.flags.writeable = False
        return x

    def refined(self, factor=2):
        return Grid(tuple(N * factor for N in self.points), self.periods)


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgument("field values must be finite")

    @classmethod
    def from_function(cls, grid, fn):
        x = grid.coords()
        return cls(grid, fn(*[x[..., i] for i in range(grid.n)]))

    def copy(self):
        return ScalarField(self.grid, self.values.copy())


def _padded(f, axis, w=2):
    """``f`` extended periodically by ``w`` entries on both sides of ``axis``."""
    n = f.shape[axis]
    idx = np.concatenate([np.arange(n - w, n), np.arange(n), np.arange(w)])
    return np.take(f, idx, axis=axis)


def _window(p, axis, k, n, w=2):
    # slice of the padded array equal to f[i + k]
    sl = [slice(None)] * p.ndim
    sl[axis] = slice(w + k, w + k + n)
    return p[tuple(sl)]


def _stencils(values, axis):
    n = values.shape[axis]
    p = _padded(values, axis)
    return (_window(p, axis, 1, n), _window(p, axis, -1, n),
            _window(p, axis, 2, n), _window(p, axis, -2, n))


def _d1(fp1, fm1, fp2, fm2, h):
    return (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h)


def _d2(values, fp1, fm1, fp2, fm2, h):
    return (16.0 * (fp1 + fm1) - (fp2 + fm2) - 30.0 * values) / (12.0 * h * h)


def d1(values, h, axis):
    """Fourth order centered first derivative along ``axis``."""
    return _d1(*_stencils(values, axis), h)


def d2(values, h, axis):
    """Fourth order centered second derivative along ``axis``."""
    return _d2(values, *_stencils(values, axis), h)


def deriv(field: ScalarField, axis: int) -> ScalarField:
    return ScalarField(field.grid, d1(field.values, field.grid.spacing[axis], axis))


def deriv2(field: ScalarField, axis_a: int, axis_b: int) -> ScalarField:
    return ScalarField(field.grid, second_derivative(field.values, field.grid.spacing, axis_a, axis_b))


def second_derivative(values, spacing, a, b):
    if a == b:
        return d2(values, spacing[a], a)
    a, b = sorted((a, b))
    return d1(d1(values, spacing[a], a), spacing[b], b)


def gradient_and_hessian(values, spacing):
    """``Du`` with shape ``S + (n,)`` and ``D^2 u`` with shape ``S + (n, n)``."""
    n = values.ndim
    Du = np.empty(values.shape + (n,))
    DDu = np.empty(values.shape + (n, n))
    first = []
    for a in range(n):
        st = _stencils(values, a)
        first.append(_d1(*st, spacing[a]))
        Du[..., a] = first[a]
        DDu[..., a, a] = _d2(values, *st, spacing[a])
    for a in range(n):
        for b in range(a + 1, n):
            DDu[..., a, b] = DDu[..., b, a] = d1(first[a], spacing[b], b)
    return Du, DDu


# -- serialization -------------------------------------------------------------
#
# Binary layout: the 9 byte magic "VPFIELD1\n", one line of UTF-8 JSON with
# keys n, points, periods, dtype ("<f8"), order ("C") and optional meta,
# a newline, then prod(points) little endian float64 values in row-major
# order (last axis fastest).  CSV: "# " + the same JSON header line, then one
# value per line in the same order.

def _header(field, meta):
    g = field.grid
    return {"n": g.n, "points": list(g.points), "periods": list(g.periods),
            "dtype": "<f8", "order": "C", "meta": meta or {}}


def save_field(field: ScalarField, path, meta=None):
    path = Path(path)
    header = json.dumps(_header(field, meta), sort_keys=True)
    if path.suffix == ".csv":
        lines = ["# " + header] + [repr(float(v)) for v in field.values.ravel(order="C")]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(field.values.astype("<f8").tobytes(order="C"))
    return path


def load_field(path):
    """Read a field written by :func:`save_field`; returns ``(field, meta)``."""
    path = Path(path)
    if path.suffix == ".csv":
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("# "):
            raise ParseError("missing CSV header line", path=str(path))
        hdr = json.loads(lines[0][2:])
        data = np.array([float(s) for s in lines[1:] if s.strip()])
    else:
        raw = path.read_bytes()
        if not raw.startswith(MAGIC):
            raise ParseError("not a vpflow field file", path=str(path))
        end = raw.index(b"\n", len(MAGIC))
        hdr = json.loads(raw[len(MAGIC):end].decode("utf-8"))
        data = np.frombuffer(raw[end + 1:], dtype="<f8")
    grid = Grid(tuple(hdr["points"]), tuple(hdr["periods"]))
    if data.size != grid.size:
        raise ParseError("field size does not match header", expected=grid.size, found=int(data.size))
    return ScalarField(grid, data.reshape(grid.shape)), hdr.get("meta", {})
