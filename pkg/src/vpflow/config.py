"""YAML run configuration.

Top level sections (all optional except ``ambient`` and ``grid``)::

    ambient:  {preset, n, periods, params, h_amb}
    grid:     {points}
    flow:     {F, cone, phi, force, c_safe, tol_eta, T_max, dt_min, eps_den,
               max_steps, margin}
    initial:  {offset, terms: [{amp, func: sin|cos, wave: [..]}]} or {file}
    cfc:      {c}
    foliate:  {c1, c2, m}
    recover:  {c, amplitude, k, mode}
    check:    {samples, euler_samples, seed}
    oracle:   {points}
    output:   {dir, cadence}
    workers:  1

Every problem found is collected and raised together as one
:class:`ValidationError`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .ambient import AmbientSpec, preset
from .curvfun import SupplementarySpec, parse_curvature_function
from .errors import ParseError, ValidationError, VPFlowError
from .flow import FlowConfig, ForceMode, legality_errors
from .grid import Grid, ScalarField, load_field

PRESETS = ("minkowski-torus", "conformal-powerlaw", "conformal-desitter")
PRESET_PARAMS = {"minkowski-torus": set(), "conformal-powerlaw": {"p", "t_ref"},
                 "conformal-desitter": {"t_ref"}}

DEFAULTS = {
    "ambient": {"preset": "conformal-powerlaw", "n": 1, "periods": None, "params": {},
                "h_amb": 1e-4},
    "grid": {"points": [64]},
    "flow": {"F": "mean", "cone": "", "phi": "identity", "force": "preserve(0)", "c_safe": 0.1,
             "tol_eta": 1e-9, "T_max": 100.0, "dt_min": 1e-12, "eps_den": 1e-10,
             "max_steps": None, "margin": 1e-6},
    "initial": {"offset": None, "terms": [], "file": None},
    "cfc": {"c": None},
    "foliate": {"c1": None, "c2": None, "m": 8},
    "recover": {"c": None, "amplitude": 0.02, "k": 0, "mode": 1},
    "check": {"samples": 100000, "euler_samples": 10000, "seed": 7},
    "oracle": {"points": [32, 64, 128]},
    "output": {"dir": "vpflow-out", "cadence": 10},
    "workers": 1,
}

REQUIRED = ("ambient", "grid")


@dataclass
class RunConfig:
    """Validated configuration plus the raw resolved mapping it came from."""

    resolved: dict
    ambient: AmbientSpec
    grid: Grid
    flow: FlowConfig
    initial: dict
    sections: dict = field(default_factory=dict)
    source: Optional[str] = None

    @property
    def workers(self):
        return self.flow.workers

    @property
    def output_dir(self):
        return Path(self.resolved["output"]["dir"])

    def initial_field(self) -> ScalarField:
        return initial_field(self.initial, self.grid, self.ambient)

    def with_force(self, force: ForceMode) -> FlowConfig:
        return dataclasses.replace(self.flow, force=force)


def _merge(defaults, given, path, errors):
    out = {}
    for key, value in given.items():
        if key not in defaults:
            errors.append(f"unknown key {'.'.join(path + [key])!r}")
    for key, default in defaults.items():
        value = given.get(key, default)
        if isinstance(default, dict) and key != "params":
            if value is None:
                value = {}
            if not isinstance(value, dict):
                errors.append(f"{'.'.join(path + [key])} must be a mapping")
                value = {}
            out[key] = _merge(default, value, path + [key], errors)
        else:
            out[key] = value
    return out


def _positive(errors, name, value, integer=False):
    try:
        x = int(value) if integer else float(value)
    except (TypeError, ValueError):
        errors.append(f"{name} must be a number, got {value!r}")
        return None
    if not (x > 0 and math.isfinite(x)):
        errors.append(f"{name} must be positive and finite, got {value!r}")
        return None
    return x


def initial_field(initial, grid: Grid, ambient: AmbientSpec) -> ScalarField:
    """Offset plus a sum of ``amp * sin|cos(2 pi wave . x / L)`` terms, or a field file."""
    if initial.get("file"):
        fld, _ = load_field(initial["file"])
        if fld.grid != grid:
            raise ValidationError([f"initial.file grid {fld.grid.points} does not match grid "
                                   f"{grid.points}"])
        return fld
    offset = initial.get("offset")
    u = np.full(grid.shape, float(ambient.t_ref if offset is None else offset))
    x = grid.coords()
    for term in initial.get("terms") or []:
        wave = list(term.get("wave", [1] + [0] * (grid.n - 1)))
        arg = sum(2 * math.pi * float(wave[i]) * x[..., i] / grid.periods[i] for i in range(grid.n))
        fn = np.sin if term.get("func", "sin") == "sin" else np.cos
        u = u + float(term.get("amp", 0.0)) * fn(arg)
    return ScalarField(grid, u)


def _initial_errors(initial, n):
    errs = []
    for j, term in enumerate(initial.get("terms") or []):
        if not isinstance(term, dict):
            errs.append(f"initial.terms[{j}] must be a mapping")
            continue
        extra = set(term) - {"amp", "func", "wave"}
        if extra:
            errs.append(f"unknown key 'initial.terms[{j}].{sorted(extra)[0]}'")
        if term.get("func", "sin") not in ("sin", "cos"):
            errs.append(f"initial.terms[{j}].func must be sin or cos")
        wave = term.get("wave", [1] + [0] * (n - 1))
        if not isinstance(wave, (list, tuple)) or len(wave) != n:
            errs.append(f"initial.terms[{j}].wave needs {n} integers")
        elif any(not isinstance(w, int) for w in wave):
            errs.append(f"initial.terms[{j}].wave must be integers (periodicity)")
    return errs


def validate(data, source=None) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError(["configuration must be a mapping at the top level"])
    errors = []
    for key in REQUIRED:
        if key not in data:
            errors.append(f"missing required section {key!r}")
    cfg = _merge(DEFAULTS, data, [], errors)
    amb, grd, fl = cfg["ambient"], cfg["grid"], cfg["flow"]

    n = amb["n"]
    if n not in (1, 2, 3):
        errors.append(f"ambient.n must be 1, 2 or 3, got {n!r}")
        n = None
    if amb["preset"] not in PRESETS:
        errors.append(f"ambient.preset must be one of {', '.join(PRESETS)}, got {amb['preset']!r}")
    if not isinstance(amb["params"], dict):
        errors.append("ambient.params must be a mapping")
    else:
        for key in set(amb["params"]) - PRESET_PARAMS.get(amb["preset"], set()):
            errors.append(f"unknown key 'ambient.params.{key}' for preset {amb['preset']!r}")
    points = grd["points"]
    if isinstance(points, int):
        points = [points] * (n or 1)
    if not isinstance(points, (list, tuple)) or (n and len(points) != n):
        errors.append(f"grid.points needs {n} entries")
    elif any(not isinstance(p, int) or p < 16 or p % 2 for p in points):
        errors.append("grid.points must be even integers >= 16")
    periods = amb["periods"] or ([2 * math.pi] * (n or 1))
    if n and len(periods) != n:
        errors.append(f"ambient.periods needs {n} entries")
    for name in ("c_safe", "tol_eta", "T_max", "dt_min", "eps_den", "margin"):
        _positive(errors, f"flow.{name}", fl[name])
    if fl["max_steps"] is not None:
        _positive(errors, "flow.max_steps", fl["max_steps"], integer=True)
    _positive(errors, "output.cadence", cfg["output"]["cadence"], integer=True)
    _positive(errors, "workers", cfg["workers"], integer=True)
    if n:
        errors.extend(_initial_errors(cfg["initial"], n))

    F = phi = force = None
    if n:
        try:
            F = parse_curvature_function(fl["F"], n, fl["cone"] or "")
        except VPFlowError as exc:
            errors.append(f"flow.F: {exc}")
    try:
        phi = SupplementarySpec(fl["phi"])
    except VPFlowError as exc:
        errors.append(f"flow.phi: {exc}")
    try:
        force = ForceMode.parse(fl["force"])
    except VPFlowError as exc:
        errors.append(f"flow.force: {exc}")
    if F is not None and phi is not None and force is not None:
        errors.extend(f"flow: {m}" for m in legality_errors(F, phi, force))

    fo = cfg["foliate"]
    if fo["c1"] is not None and fo["c2"] is not None:
        try:
            if not 0 < float(fo["c1"]) < float(fo["c2"]):
                errors.append("foliate: need 0 < c1 < c2")
        except (TypeError, ValueError):
            errors.append("foliate.c1 and foliate.c2 must be numbers")
    if not isinstance(fo["m"], int) or fo["m"] < 2:
        errors.append("foliate.m must be an integer >= 2")
    if cfg["recover"]["k"] not in (0, 1):
        errors.append("recover.k must be 0 (volume) or 1 (area)")
    if cfg["recover"]["mode"] not in (1, 2):
        errors.append("recover.mode must be 1 or 2")

    if errors:
        raise ValidationError(errors)

    try:
        ambient = preset(amb["preset"], n, periods, float(amb["h_amb"]), **amb["params"])
        grid = Grid(tuple(points), tuple(float(p) for p in periods))
        flow = FlowConfig(ambient, grid, F, phi, force, c_safe=float(fl["c_safe"]),
                          tol_eta=float(fl["tol_eta"]), T_max=float(fl["T_max"]),
                          dt_min=float(fl["dt_min"]), eps_den=float(fl["eps_den"]),
                          cadence=int(cfg["output"]["cadence"]), workers=int(cfg["workers"]),
                          max_steps=None if fl["max_steps"] is None else int(fl["max_steps"]),
                          margin=float(fl["margin"]))
    except ValidationError:
        raise
    except VPFlowError as exc:
        raise ValidationError([str(exc)]) from exc
    cfg["ambient"]["periods"] = list(periods)
    cfg["grid"]["points"] = list(points)
    return RunConfig(resolved=cfg, ambient=ambient, grid=grid, flow=flow, initial=cfg["initial"],
                     sections={k: cfg[k] for k in ("cfc", "foliate", "recover", "check", "oracle")},
                     source=source)


def parse_config_text(text, source=None) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed YAML: {exc}", source=source) from exc
    return validate(data, source)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}", path=str(path)) from exc
    return parse_config_text(text, str(path))
