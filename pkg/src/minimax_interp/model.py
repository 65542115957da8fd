"""Loading model and class documents (JSON) into library objects.

Complex numbers are written as ``[re, im]`` pairs; real numbers may be given
bare.  Every error message names the file and the field path it refers to.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .densities import (Lorentzian, Sampled, Scaled, SpectralDensity, Sum, White, Zero)
from .errors import InterpError, ModelError
from .grids import FrequencyGrid, MissingSet, WeightFunction
from .minimax.classes import KINDS, DensityClass

DEFAULT_TIME_STEP = 1 / 128
DEFAULT_N_POINTS = 4097

_NUMBER = {"type": "number"}
_COMPLEX = {"oneOf": [_NUMBER, {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2}]}

DENSITY_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["lorentzian", "rational", "diag_lorentzian", "white", "zero", "samples",
                          "scaled", "sum"]},
        "params": {"type": "object"},
        "frequencies": {"type": "array", "items": _NUMBER},
        "values": {"type": "array"},
        "interpolation": {"enum": ["linear", "nearest"]},
    },
    "additionalProperties": False,
}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["F", "S"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "dim": {"type": "integer", "minimum": 1},
        "grid": {
            "type": "object",
            "properties": {
                "lambda_max": {"type": "number", "exclusiveMinimum": 0},
                "time_step": {"type": "number", "exclusiveMinimum": 0},
                "n_points": {"type": "integer", "minimum": 3},
            },
            "additionalProperties": False,
        },
        "F": DENSITY_SCHEMA,
        "G": {"oneOf": [{"type": "null"}, DENSITY_SCHEMA]},
        "S": {
            "type": "array", "minItems": 1,
            "items": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
        },
        "a": {
            "type": "object",
            "properties": {
                "values": {"type": "array"},
                "expression": {"enum": ["constant", "linear", "exponential", "cosine"]},
                "params": {"type": "object"},
            },
            "additionalProperties": False,
        },
        "tikhonov": {"type": ["number", "null"], "minimum": 0},
        "simulation": {
            "type": "object",
            "properties": {
                "window": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
                "n_replications": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

CLASS_SPEC_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "params": {"type": "object"},
        "references": {"type": "object"},
        "bins": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

CLASS_SCHEMA = {
    "type": "object",
    "required": ["signal"],
    "properties": {
        "description": {"type": "string"},
        "pair": {"type": "integer", "minimum": 1, "maximum": 8},
        "signal": CLASS_SPEC_SCHEMA,
        "noise": {"oneOf": [{"type": "null"}, CLASS_SPEC_SCHEMA]},
        "initial": {
            "type": "object",
            "properties": {"F": DENSITY_SCHEMA, "G": {"oneOf": [{"type": "null"}, DENSITY_SCHEMA]}},
            "additionalProperties": False,
        },
        "saddle": {
            "type": "object",
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "n_probes": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


@dataclass
class Model:
    name: str
    dim: int
    grid: FrequencyGrid
    time_step: float
    F: SpectralDensity
    G: SpectralDensity | None
    S: MissingSet
    a: WeightFunction
    tikhonov: float | None = None
    simulation: dict = field(default_factory=dict)
    document: dict = field(default_factory=dict, repr=False)

    @property
    def noiseless(self) -> bool:
        return self.G is None or self.G.is_zero()


@dataclass
class ClassPair:
    signal: DensityClass
    noise: DensityClass | None
    pair: int | None
    initial_F: SpectralDensity | None
    initial_G: SpectralDensity | None
    saddle: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------


def read_json(path) -> dict:
    """Parse a JSON file; syntax errors report line and column."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ModelError(f"{p}: cannot read ({exc.strerror or exc})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _field_path(parts) -> str:
    out = ""
    for part in parts:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def check_schema(document: dict, schema: dict, source: str) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(document), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        first = errors[0]
        # oneOf failures hide the useful message one level down
        detail = first
        if first.context:
            detail = min(first.context, key=lambda e: len(e.absolute_path))
        path = _field_path(list(detail.absolute_path))
        raise ModelError(f"{source}: at {path}: {detail.message}")


def complex_value(x, where: str) -> complex:
    if isinstance(x, bool):
        raise ModelError(f"{where}: expected a number or [re, im], got {x!r}")
    if isinstance(x, (int, float)):
        return complex(x)
    if isinstance(x, (list, tuple)) and len(x) == 2 and all(isinstance(v, (int, float)) for v in x):
        return complex(x[0], x[1])
    raise ModelError(f"{where}: expected a number or [re, im], got {x!r}")


def complex_matrix(x, dim: int, where: str) -> np.ndarray:
    """A ``dim x dim`` matrix; for ``dim == 1`` a bare scalar is accepted."""
    if dim == 1:
        try:
            return np.array([[complex_value(x, where)]])
        except ModelError:
            pass
    if not isinstance(x, list) or len(x) != dim or any(not isinstance(r, list) or len(r) != dim for r in x):
        raise ModelError(f"{where}: expected a {dim}x{dim} matrix")
    return np.array([[complex_value(v, f"{where}[{i}][{j}]") for j, v in enumerate(row)]
                     for i, row in enumerate(x)])


def _real_vector(x, n: int | None, where: str) -> np.ndarray:
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        x = [x] * (n or 1)
    if not isinstance(x, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in x):
        raise ModelError(f"{where}: expected a list of numbers")
    if n is not None and len(x) != n:
        raise ModelError(f"{where}: expected {n} entries, got {len(x)}")
    return np.asarray(x, dtype=float)


def _param(params: dict, key: str, where: str, default=None):
    if key in params:
        return params[key]
    if default is not None:
        return default
    raise ModelError(f"{where}.params: missing {key!r}")


# ---------------------------------------------------------------------------
# densities


def build_family(entry: dict, dim: int, where: str):
    """Family object for a density entry (``samples`` on explicit frequencies only)."""
    kind = entry["kind"]
    params = entry.get("params", {})
    if kind in ("lorentzian", "rational"):
        if "terms" in params:
            terms = []
            for i, term in enumerate(params["terms"]):
                w = f"{where}.params.terms[{i}]"
                weight = complex_matrix(term.get("weight", np.eye(dim).tolist()), dim, f"{w}.weight")
                terms.append((weight, float(_param(term, "scale", w, 1.0)), float(_param(term, "width", w))))
            return Lorentzian(tuple(terms))
        scale = float(_param(params, "scale", where, 1.0))
        width = float(_param(params, "width", where))
        if dim != 1:
            return Lorentzian(((np.eye(dim), scale, width),))
        return Lorentzian.scalar(scale, width)
    if kind == "diag_lorentzian":
        scales = _real_vector(_param(params, "scales", where), dim, f"{where}.params.scales")
        widths = _real_vector(_param(params, "widths", where), dim, f"{where}.params.widths")
        return Lorentzian.diagonal(scales, widths)
    if kind == "white":
        if "matrix" in params:
            return White(complex_matrix(params["matrix"], dim, f"{where}.params.matrix"))
        return White(float(_param(params, "level", where)) * np.eye(dim))
    if kind == "zero":
        return Zero(dim)
    if kind == "scaled":
        base = _param(params, "base", where)
        return Scaled(float(_param(params, "factor", where)), build_family(base, dim, f"{where}.params.base"))
    if kind == "sum":
        parts = _param(params, "parts", where)
        if not isinstance(parts, list) or not parts:
            raise ModelError(f"{where}.params.parts: expected a non-empty list")
        return Sum(tuple(build_family(p, dim, f"{where}.params.parts[{i}]") for i, p in enumerate(parts)))
    if kind == "samples":
        if "frequencies" not in entry:
            raise ModelError(f"{where}: samples inside a composite need explicit frequencies")
        return Sampled(entry["frequencies"], _sample_values(entry, dim, where), entry.get("interpolation", "linear"))
    raise ModelError(f"{where}.kind: unknown density kind {kind!r}")


def _sample_values(entry: dict, dim: int, where: str) -> np.ndarray:
    values = entry.get("values")
    if values is None:
        raise ModelError(f"{where}: samples need 'values'")
    return np.array([complex_matrix(v, dim, f"{where}.values[{i}]") for i, v in enumerate(values)])


def build_density(entry: dict, grid: FrequencyGrid, dim: int, where: str) -> SpectralDensity:
    """Sample a density entry on ``grid``; the PSD check is left to validation."""
    try:
        if entry["kind"] == "samples" and "frequencies" not in entry:
            values = _sample_values(entry, dim, where)
            if values.shape[0] != grid.n_points:
                raise ModelError(f"{where}.values: {values.shape[0]} samples but the grid has {grid.n_points} nodes")
            return SpectralDensity(grid, values, entry.get("interpolation", "linear"))
        fam = build_family(entry, dim, where)
        if fam.dim != dim:
            raise ModelError(f"{where}: density has dimension {fam.dim}, model has {dim}")
        return fam.sample(grid)
    except InterpError as exc:
        msg = str(exc)
        raise type(exc)(msg if msg.startswith(where) else f"{where}: {msg}") from exc


# ---------------------------------------------------------------------------
# weight function


def build_weight(entry: dict | None, S: MissingSet, dim: int, where: str = "a") -> WeightFunction:
    entry = entry or {"expression": "constant"}
    if "values" in entry:
        values = entry["values"]
        rows = []
        for i, v in enumerate(values):
            rows.append(_real_vector(v, dim, f"{where}.values[{i}]"))
        arr = np.array(rows)
        if arr.shape[0] == S.size:
            return WeightFunction(S, arr)
        # values given on evenly spaced points across each interval
        per = arr.shape[0] // S.s
        if per * S.s != arr.shape[0] or per < 2:
            raise ModelError(f"{where}.values: {arr.shape[0]} rows do not match {S.size} nodes of S")
        out = np.zeros((S.size, dim))
        for k, (l, r) in enumerate(S.intervals):
            sel = S.interval_index == k
            tk = np.linspace(l, r, per)
            for d in range(dim):
                out[sel, d] = np.interp(S.nodes[sel], tk, arr[k * per:(k + 1) * per, d])
        return WeightFunction(S, out)
    expr = entry.get("expression", "constant")
    params = entry.get("params", {})
    t = np.asarray(S.nodes)
    if expr == "constant":
        value = _real_vector(params.get("value", 1.0), dim, f"{where}.params.value")
        return WeightFunction(S, np.tile(value, (S.size, 1)))
    if expr == "linear":
        slope = _real_vector(params.get("slope", 1.0), dim, f"{where}.params.slope")
        intercept = _real_vector(params.get("intercept", 0.0), dim, f"{where}.params.intercept")
        return WeightFunction(S, intercept[None, :] + t[:, None] * slope[None, :])
    if expr == "exponential":
        rate = float(params.get("rate", 1.0))
        value = _real_vector(params.get("value", 1.0), dim, f"{where}.params.value")
        return WeightFunction(S, np.exp(rate * t)[:, None] * value[None, :])
    if expr == "cosine":
        freq = float(params.get("frequency", 1.0))
        value = _real_vector(params.get("value", 1.0), dim, f"{where}.params.value")
        return WeightFunction(S, np.cos(freq * t)[:, None] * value[None, :])
    raise ModelError(f"{where}.expression: unknown expression {expr!r}")


# ---------------------------------------------------------------------------
# model


def resolve_grid(document: dict, overrides: dict | None = None, source: str = "model"):
    """``(grid, time_step)`` from the grid section and overrides.

    ``lambda_max`` and ``time_step`` are tied by ``lambda_max * time_step = pi``;
    giving both inconsistently is an error.
    """
    g = dict(document.get("grid", {}))
    for key in ("lambda_max", "time_step", "n_points"):
        if overrides and overrides.get(key) is not None:
            g[key] = overrides[key]
            if key == "lambda_max" and "time_step" not in overrides:
                g.pop("time_step", None)
            if key == "time_step" and "lambda_max" not in overrides:
                g.pop("lambda_max", None)
    n = int(g.get("n_points", DEFAULT_N_POINTS))
    if "lambda_max" in g and "time_step" in g:
        if abs(g["lambda_max"] * g["time_step"] - math.pi) > 1e-9 * math.pi:
            raise ModelError(f"{source}: at grid: lambda_max * time_step must equal pi")
    if "lambda_max" in g:
        lam = float(g["lambda_max"])
        dt = math.pi / lam
    else:
        dt = float(g.get("time_step", DEFAULT_TIME_STEP))
        lam = math.pi / dt
    try:
        grid = FrequencyGrid(lam, n)
    except ModelError as exc:
        raise ModelError(f"{source}: at grid: {exc}") from exc
    return grid, dt


def parse_model(document: dict, overrides: dict | None = None, source: str = "model") -> Model:
    check_schema(document, MODEL_SCHEMA, source)
    dim = int(document.get("dim", 1))
    grid, dt = resolve_grid(document, overrides, source)
    try:
        S = MissingSet(tuple(tuple(iv) for iv in document["S"]), dt)
    except ModelError as exc:
        raise ModelError(f"{source}: at S: {exc}") from exc
    F = build_density(document["F"], grid, dim, f"{source}: at F")
    G_spec = document.get("G")
    G = None if G_spec is None else build_density(G_spec, grid, dim, f"{source}: at G")
    try:
        a = build_weight(document.get("a"), S, dim)
    except ModelError as exc:
        raise ModelError(f"{source}: at {exc}") from exc
    tik = document.get("tikhonov")
    if overrides and overrides.get("tikhonov") is not None:
        tik = overrides["tikhonov"]
    return Model(document.get("name", Path(source).stem), dim, grid, dt, F, G, S, a,
                 None if tik is None else float(tik), dict(document.get("simulation", {})), document)


def load_model(path, overrides: dict | None = None) -> Model:
    return parse_model(read_json(path), overrides, str(path))


# ---------------------------------------------------------------------------
# classes

_MATRIX_PARAMS = ("B1", "B2", "P", "Q", "delta_ij")
_VECTOR_PARAMS = ("p_k", "q_k", "delta_k")


def build_class(entry: dict, model: Model, where: str) -> DensityClass:
    dim = model.dim
    params = {}
    for key, value in entry.get("params", {}).items():
        if key in _MATRIX_PARAMS:
            m = complex_matrix(value, dim, f"{where}.params.{key}")
            params[key] = m.real if key == "delta_ij" else m
        elif key in _VECTOR_PARAMS:
            params[key] = _real_vector(value, dim, f"{where}.params.{key}")
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            params[key] = float(value)
        else:
            raise ModelError(f"{where}.params.{key}: unexpected value {value!r}")
    refs = {}
    for key, ref in entry.get("references", {}).items():
        if ref in ("model.F", "model.G"):
            X = model.F if ref == "model.F" else model.G
            if X is None:
                raise ModelError(f"{where}.references.{key}: the model has no noise density")
            refs[key] = X
        elif isinstance(ref, dict):
            check_schema(ref, DENSITY_SCHEMA, f"{where}.references.{key}")
            refs[key] = build_density(ref, model.grid, dim, f"{where}.references.{key}")
        else:
            raise ModelError(f"{where}.references.{key}: expected a density entry or 'model.F'/'model.G'")
    try:
        return DensityClass(entry["kind"], dim, params, refs, entry.get("bins"))
    except InterpError as exc:
        raise type(exc)(f"{where}: {exc}") from exc


def parse_classes(document: dict, model: Model, source: str = "classes") -> ClassPair:
    check_schema(document, CLASS_SCHEMA, source)
    signal = build_class(document["signal"], model, f"{source}: at signal")
    noise_spec = document.get("noise")
    noise = None if noise_spec is None else build_class(noise_spec, model, f"{source}: at noise")
    init = document.get("initial", {})
    F0 = build_density(init["F"], model.grid, model.dim, f"{source}: at initial.F") if "F" in init else None
    G0 = None
    if init.get("G") is not None:
        G0 = build_density(init["G"], model.grid, model.dim, f"{source}: at initial.G")
    return ClassPair(signal, noise, document.get("pair"), F0, G0, dict(document.get("saddle", {})))


def load_classes(path, model: Model) -> ClassPair:
    return parse_classes(read_json(path), model, str(path))
