"""Command-line entry point: ``minimax-interp <command> MODEL [CLASSES] [options]``.

Exit status: 0 success, 1 input or schema error, 2 validation failure,
3 numerical failure (a ``diagnostics.json`` is written next to the results).
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .densities import SpectralDensity, validate_density
from .errors import InfeasibleClass, InterpError, NumericalError, UnsupportedClass
from .estimator import estimate, verify_orthogonality
from .model import Model, load_classes, load_model
from .simulation import SimulationConfig, empirical_mse, simulate_pair
from .spectral import minimality_check

log = logging.getLogger("minimax_interp")

EXIT_OK, EXIT_INPUT, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3
THREADS_ENV = "MINIMAX_INTERP_THREADS"
CSV_SCHEMA_VERSION = 1
PATHS_EMITTED = 10
COMMANDS = ("validate", "estimate", "simulate", "minimax", "report")

DEFAULTS = {
    "lambda_max": None, "n_points": None, "time_step": None, "tikhonov": None,
    "seed": 0, "n_replications": 10_000, "tol": 1e-4, "max_iter": 20_000,
}


class ConfigError(InterpError, ValueError):
    pass


def _check_overrides(overrides: dict) -> dict:
    unknown = sorted(set(overrides) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown override key(s): {', '.join(unknown)}; allowed: {', '.join(DEFAULTS)}")
    out = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("n_points", "seed", "n_replications", "max_iter"):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"override {key} must be an integer, got {value!r}")
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigError(f"override {key} must be a finite number, got {value!r}")
            value = float(value)
        out[key] = value
    lam = out.get("lambda_max")
    if "time_step" in out:
        if out["time_step"] <= 0:
            raise ConfigError("override time_step must be positive")
        implied = math.pi / out["time_step"]
        if lam is not None and abs(lam - implied) > 1e-9 * implied:
            raise ConfigError("overrides lambda_max and time_step disagree (lambda_max * time_step must be pi)")
        lam = implied
    if lam is not None and not 1 <= lam <= 4096:
        raise ConfigError(f"lambda_max must lie in [1, 4096], got {lam:g}")
    if "n_points" in out and (out["n_points"] < 3 or out["n_points"] % 2 == 0):
        raise ConfigError(f"n_points must be odd and at least 3, got {out['n_points']}")
    if "tol" in out and not out["tol"] > 0:
        raise ConfigError("tol must be positive")
    if "tikhonov" in out and out["tikhonov"] < 0:
        raise ConfigError("tikhonov must be non-negative")
    for key in ("seed",):
        if key in out and out[key] < 0:
            raise ConfigError(f"{key} must be non-negative")
    for key in ("n_replications", "max_iter"):
        if key in out and out[key] < 1:
            raise ConfigError(f"{key} must be at least 1")
    return out


@dataclass
class RunConfig:
    command: str
    model_path: str
    class_path: str | None = None
    overrides: dict = field(default_factory=dict)
    output_dir: str = "."
    emit_paths: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {', '.join(COMMANDS)}")
        if self.command == "minimax" and not self.class_path:
            raise ConfigError("minimax needs a class file")
        self.overrides = _check_overrides(dict(self.overrides))

    def setting(self, key):
        return self.overrides.get(key, DEFAULTS[key])


# ---------------------------------------------------------------------------
# output helpers


def _clean(x):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, complex):
        return [_clean(x.real), _clean(x.imag)]
    return x


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def write_json(path: Path, document: dict) -> None:
    atomic_write(path, json.dumps(_clean(document), sort_keys=True, indent=2, allow_nan=False) + "\n")


def write_csv(path: Path, header: list, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    atomic_write(path, buf.getvalue())


def vector_table(path: Path, axis_name: str, axis: np.ndarray, values: np.ndarray, name: str) -> None:
    """Columns ``axis, re_<name>_1..T, im_<name>_1..T``."""
    values = np.asarray(values).reshape(axis.size, -1)
    T = values.shape[1]
    header = [axis_name] + [f"re_{name}_{k + 1}" for k in range(T)] + [f"im_{name}_{k + 1}" for k in range(T)]
    rows = np.column_stack([axis, values.real, values.imag])
    write_csv(path, header, rows)


def density_table(path: Path, densities: dict) -> None:
    """``lambda`` plus real and imaginary parts of every matrix entry of each density."""
    first = next(iter(densities.values()))
    lam = first.grid.nodes
    header, cols = ["lambda"], [lam]
    for name, X in densities.items():
        T = X.dim
        for i in range(T):
            for j in range(T):
                header += [f"re_{name}_{i + 1}_{j + 1}", f"im_{name}_{i + 1}_{j + 1}"]
                cols += [X.samples[:, i, j].real, X.samples[:, i, j].imag]
    write_csv(path, header, np.column_stack(cols))


# ---------------------------------------------------------------------------
# commands


def _effective_config(cfg: RunConfig, model: Model | None) -> dict:
    out = {
        "command": cfg.command,
        "model_path": cfg.model_path,
        "class_path": cfg.class_path,
        "emit_paths": cfg.emit_paths,
        "overrides": dict(sorted(cfg.overrides.items())),
    }
    for key in ("seed", "n_replications", "tol", "max_iter"):
        out[key] = cfg.setting(key)
    if model is not None:
        out["grid"] = {"lambda_max": model.grid.lambda_max, "n_points": model.grid.n_points,
                       "time_step": model.time_step}
        out["tikhonov"] = model.tikhonov
        out["dim"] = model.dim
        out["S"] = model.S.to_list()
        out["noise"] = not model.noiseless
    return out


def _orthogonality_times(model: Model) -> np.ndarray:
    """Five lattice times outside ``S``: two before, three after."""
    dt = model.time_step
    lo, hi = model.S.intervals[0][0], model.S.intervals[-1][1]
    raw = [lo - 2.0, lo - 0.5, hi + 0.5, hi + 1.0, hi + 2.0]
    t = np.round(np.array(raw) / dt) * dt
    return t[~model.S.contains(t)]


def _estimate(model: Model, cfg: RunConfig):
    est = estimate(model.F, model.G, model.S, model.a, model.grid, tikhonov=model.tikhonov)
    G = model.G if model.G is not None else SpectralDensity.zeros(model.grid, model.dim)
    t = _orthogonality_times(model)
    ortho = verify_orthogonality(est.h, model.F, G, est.A, t, model.grid)
    norm_a = float(np.sqrt(np.sum(model.S.weights[:, None] * model.a.values**2)))
    out = est.summary()
    out["tikhonov_used"] = est.c.regularization_used
    out["orthogonality"] = {"max_residual": ortho, "relative_to_norm_a": ortho / norm_a if norm_a else None,
                            "sample_times": t}
    return est, out


def _write_estimate_tables(out_dir: Path, model: Model, est) -> None:
    lam = model.grid.nodes
    vector_table(out_dir / "h.csv", "lambda", lam, est.h, "h")
    vector_table(out_dir / "C.csv", "lambda", lam, est.C, "C")
    vector_table(out_dir / "c.csv", "t", model.S.nodes, est.c.c, "c")


def cmd_validate(cfg: RunConfig, model: Model, out_dir: Path) -> tuple[int, dict]:
    reports = {}
    failed = False
    for name, X in (("F", model.F), ("G", model.G)):
        if X is None:
            continue
        rep = validate_density(X)
        reports[name] = {"passed": rep.passed, **rep.summary(), "violations": rep.violations[:50]}
        failed |= not rep.passed
    result = {"densities": reports, "weight_conditions": model.a.conditions(),
              "lattice": model.S.is_lattice(model.time_step)}
    if not failed:
        FG = model.F if model.G is None else model.F + model.G
        result["minimality"] = minimality_check(FG, model.a, model.S, model.grid)
    if cfg.class_path:
        pair = load_classes(cfg.class_path, model)
        from .minimax.classes import project_membership
        members = {}
        for name, D, X in (("F", pair.signal, pair.initial_F), ("G", pair.noise, pair.initial_G)):
            if D is not None and X is not None:
                rep = project_membership(D, X)
                members[name] = rep
                failed |= not rep["member"]
        result["classes"] = {"signal": pair.signal.to_dict(),
                             "noise": None if pair.noise is None else pair.noise.to_dict(),
                             "initial_membership": members}
    result["valid"] = not failed
    if failed:
        for name, rep in reports.items():
            for v in rep["violations"][:5]:
                log.error("%s: %s at frequency index %d (lambda = %.6g)", name, v["kind"], v["index"], v["lambda"])
    return (EXIT_INVALID if failed else EXIT_OK), result


def cmd_estimate(cfg: RunConfig, model: Model, out_dir: Path) -> tuple[int, dict]:
    est, out = _estimate(model, cfg)
    _write_estimate_tables(out_dir, model, est)
    return EXIT_OK, out


def _simulation_config(cfg: RunConfig, model: Model) -> SimulationConfig:
    sim = model.simulation
    n = cfg.overrides.get("n_replications", sim.get("n_replications", DEFAULTS["n_replications"]))
    seed = cfg.overrides.get("seed", sim.get("seed", DEFAULTS["seed"]))
    if "window" in sim:
        return SimulationConfig(tuple(sim["window"]), model.time_step, n, seed)
    return SimulationConfig.around(model.S, model.F, model.time_step, n_replications=n, seed=seed)


def cmd_simulate(cfg: RunConfig, model: Model, out_dir: Path) -> tuple[int, dict]:
    est, out = _estimate(model, cfg)
    _write_estimate_tables(out_dir, model, est)
    sim = _simulation_config(cfg, model)
    check = sim.check(model.S, model.F)
    G = model.G if model.G is not None else SpectralDensity.zeros(model.grid, model.dim)
    ens = empirical_mse(model.F, G, est.h, model.a, model.S, sim, est.delta)
    out["ensemble"] = ens.to_dict()
    out["window"] = {"window": sim.window, "seed": sim.seed, **check}
    if cfg.emit_paths:
        data = simulate_pair(model.F, G, sim, range(min(PATHS_EMITTED, sim.n_replications)))
        T = model.dim
        header = ["replication", "t"] + [f"xi_{k + 1}" for k in range(T)] + [f"eta_{k + 1}" for k in range(T)]
        rows = []
        for r in range(data.xi.shape[0]):
            for i, t in enumerate(data.times):
                rows.append([r, float(t), *data.xi[r, i].tolist(), *data.eta[r, i].tolist()])
        write_csv(out_dir / "paths.csv", header, rows)
    return EXIT_OK, out


def cmd_minimax(cfg: RunConfig, model: Model, out_dir: Path) -> tuple[int, dict]:
    from .minimax import central_member, kkt_residuals, saddle_iterate

    pair = load_classes(cfg.class_path, model)
    settings = dict(pair.saddle)
    for key in ("tol", "max_iter"):
        if key in cfg.overrides or key not in settings:
            settings[key] = cfg.setting(key)
    F0 = pair.initial_F if pair.initial_F is not None else central_member(pair.signal, model.grid)
    G0 = None
    if pair.noise is not None:
        G0 = pair.initial_G if pair.initial_G is not None else central_member(pair.noise, model.grid)
    sp = saddle_iterate(F0, G0, pair.signal, pair.noise, model.a, model.S, model.grid,
                        tol=settings["tol"], max_iter=int(settings["max_iter"]), tikhonov=model.tikhonov,
                        n_probes=int(settings.get("n_probes", 32)), seed=int(cfg.setting("seed")))
    sp.kkt = kkt_residuals(sp, pair.pair)
    out = {"saddle": sp.to_dict(), "delta": sp.delta0, "converged": sp.gap <= settings["tol"],
           "mode": sp.solution.c.mode, "settings": settings,
           "classes": {"signal": pair.signal.to_dict(),
                       "noise": None if pair.noise is None else pair.noise.to_dict()}}
    lam = model.grid.nodes
    vector_table(out_dir / "h.csv", "lambda", lam, sp.h0, "h")
    vector_table(out_dir / "C.csv", "lambda", lam, sp.C0, "C")
    vector_table(out_dir / "c.csv", "t", model.S.nodes, sp.solution.c.c, "c")
    dens = {"F0": sp.F0}
    if sp.G0 is not None:
        dens["G0"] = sp.G0
    density_table(out_dir / "least_favorable.csv", dens)
    write_csv(out_dir / "trace.csv", ["iteration", "delta", "gap", "certified_gap"],
              [[t["iteration"], t["delta"], t["gap"], t["certified_gap"]] for t in sp.trace])
    return EXIT_OK, out


def cmd_report(cfg: RunConfig, model: Model, out_dir: Path) -> tuple[int, dict]:
    """Estimate plus plot-ready tables of the inputs and diagnostics."""
    est, out = _estimate(model, cfg)
    _write_estimate_tables(out_dir, model, est)
    dens = {"F": model.F}
    if model.G is not None:
        dens["G"] = model.G
    density_table(out_dir / "densities.csv", dens)
    lags = np.arange(0, 201) * max(model.time_step, 0.025)
    cov = model.F.covariance(lags)
    write_csv(out_dir / "covariance.csv", ["lag", "trace_R"], np.column_stack([lags, np.real(np.trace(cov, axis1=1, axis2=2))]))
    G = model.G if model.G is not None else SpectralDensity.zeros(model.grid, model.dim)
    lo, hi = model.S.intervals[0][0] - 3.0, model.S.intervals[-1][1] + 3.0
    t = np.round(np.linspace(lo, hi, 121) / model.time_step) * model.time_step
    t = t[~model.S.contains(t)]
    res = [verify_orthogonality(est.h, model.F, G, est.A, [x], model.grid) for x in t]
    write_csv(out_dir / "orthogonality.csv", ["t", "residual"], np.column_stack([t, res]))
    lines = [
        f"model: {model.name}",
        f"grid: lambda_max={model.grid.lambda_max:.6g} n_points={model.grid.n_points} time_step={model.time_step:.6g}",
        f"missing set: {model.S.to_list()}",
        f"mode: {out['mode']}",
        f"delta: {out['delta']:.10g}",
        f"operator form: {out['delta_forms']['operator']:.10g}",
        f"spectral form: {out['delta_forms']['spectral']:.10g}",
        f"relative gap: {out['delta_forms']['relative_gap']:.3g}",
        f"condition number of B: {out['condition_number']:.4g}",
        f"orthogonality residual (max over samples): {out['orthogonality']['max_residual']:.3g}",
    ]
    atomic_write(out_dir / "report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK, out


HANDLERS = {"validate": cmd_validate, "estimate": cmd_estimate, "simulate": cmd_simulate,
            "minimax": cmd_minimax, "report": cmd_report}


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def run(cfg: RunConfig) -> int:
    """Execute one command; returns the exit status and writes results to ``cfg.output_dir``."""
    out_dir = Path(cfg.output_dir)
    model = None
    header = {"timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
              "version": __version__, "csv_schema_version": CSV_SCHEMA_VERSION}
    try:
        with _thread_limit():
            model = load_model(cfg.model_path, cfg.overrides)
            status, result = HANDLERS[cfg.command](cfg, model, out_dir)
    except NumericalError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        doc = {**header, "status": "numerical_failure", "error": type(exc).__name__, "message": str(exc),
               "diagnostics": exc.diagnostics, "config": _effective_config(cfg, model)}
        write_json(out_dir / "diagnostics.json", doc)
        return EXIT_NUMERICAL
    except (InfeasibleClass, UnsupportedClass) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        write_json(out_dir / "diagnostics.json", {**header, "status": "invalid", "error": type(exc).__name__,
                                                  "message": str(exc), "config": _effective_config(cfg, model)})
        return EXIT_INVALID
    except (InterpError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    doc = {**header, "status": "ok" if status == EXIT_OK else "invalid", "command": cfg.command,
           "config": _effective_config(cfg, model), "result": result}
    write_json(out_dir / "result.json", doc)
    return status


# ---------------------------------------------------------------------------


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError(f"--set {key}: value {value!r} is not a number") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minimax-interp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("model", help="model JSON document")
        if name in ("minimax", "validate"):
            p.add_argument("classes", nargs="?" if name == "validate" else None, help="class JSON document")
        p.add_argument("-o", "--output-dir", default=".", help="directory for result files")
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("--lambda-max", type=float)
        p.add_argument("--n-points", type=int)
        p.add_argument("--time-step", type=float)
        p.add_argument("--tikhonov", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--n-replications", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override by JSON key")
        if name == "simulate":
            p.add_argument("--emit-paths", action="store_true", help=f"write the first {PATHS_EMITTED} paths")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        overrides = _parse_set(args.set)
        for key in DEFAULTS:
            value = getattr(args, key, None)
            if value is not None:
                overrides[key] = value
        cfg = RunConfig(args.command, args.model, getattr(args, "classes", None), overrides,
                        args.output_dir, getattr(args, "emit_paths", False))
    except ConfigError as exc:
        print(f"minimax-interp: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return run(cfg)
