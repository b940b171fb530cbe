"""Command line experiment runner.

Every subcommand builds a configuration dict, validates it against a JSON
schema (unknown keys rejected), runs, and writes the result next to
``manifest.json`` and ``resolved_config.json`` in the output directory.
``run --config file.json`` executes a configuration document directly.

Exit codes: 0 success, 2 invalid configuration, 3 module error, 1 other.
"""
from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DescriptorError, RoughWaveError, _jsonable

KINDS = ("gcc-check", "simulate", "hum-control", "observability", "perturb", "measure-transport",
         "phase-diagnostics")

# -- schemas ---------------------------------------------------------------------

_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}
_REF = {"type": ["string", "object"]}  # path, inline JSON object, or preset name
_LADDER = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2}
_DATA = {
    "type": "object",
    "properties": {"u0": {"type": "string"}, "v0": {"type": "string"}, "mode": {"type": "integer"}},
    "additionalProperties": False,
}
_COMMON = {"kind": {"enum": list(KINDS)}, "seed": {"type": "integer", "minimum": 0}, "out": {"type": "string"},
           "threads": _INT}

_PARAMS = {
    "gcc-check": ({"metric": _REF, "region": _REF, "T": _POS, "nx": _INT, "ndir": _INT,
                   "funnel": {"type": ["array", "null"], "items": {"type": "number"}, "minItems": 2, "maxItems": 2}},
                  ["metric", "region", "T"]),
    "simulate": ({"metric": _REF, "n": _INT, "T": _POS, "data": {"oneOf": [_DATA, {"type": "string"}]},
                  "c_cfl": _POS, "save_every": _INT},
                 ["metric", "n", "T", "data"]),
    "hum-control": ({"metric": _REF, "region": _REF, "T": _POS, "n": _INT,
                     "data": {"oneOf": [_DATA, {"type": "string"}]}, "tol": _POS, "max_iter": _INT},
                    ["metric", "region", "T", "data"]),
    "observability": ({"metric": _REF, "region": _REF, "T": _POS, "n": _INT, "cutoff": _POS},
                      ["metric", "region", "T", "cutoff"]),
    "perturb": ({"metric": _REF, "region": _REF, "T": _POS, "n": _INT, "eps_ladder": _LADDER, "k_ladder": _LADDER,
                 "x0": _VEC, "direction": _VEC, "sigma": _POS, "tol": _POS, "check_gcc": {"type": "boolean"}},
                ["metric", "region", "T", "eps_ladder", "k_ladder"]),
    "measure-transport": ({"measure": {"type": "string"}, "field": {"type": ["string", "array"]}, "x0": _VEC,
                           "n_ladder": _LADDER, "horizon": _POS, "eps": _POS, "delta": _POS},
                          ["measure", "field", "x0"]),
    "phase-diagnostics": ({"metric": _REF, "n": _INT, "T": _POS, "k_ladder": _LADDER, "x0": _VEC,
                           "sigma_packet": _POS, "eta": _POS, "density_stem": {"type": "string"}},
                          ["metric", "k_ladder"]),
}


def schema(kind: str) -> dict:
    props, req = _PARAMS[kind]
    return {"type": "object", "properties": {**_COMMON, "kind": {"const": kind}, **props}, "required": ["kind", *req],
            "additionalProperties": False}


def config_schema() -> dict:
    """Union schema of all experiment kinds (published in the README)."""
    return {"oneOf": [schema(k) for k in KINDS]}


def validate(cfg: dict) -> dict:
    import jsonschema

    if not isinstance(cfg, dict) or cfg.get("kind") not in KINDS:
        raise ConfigError("config needs a 'kind' among " + ", ".join(KINDS), field="kind")
    v = jsonschema.Draft202012Validator(schema(cfg["kind"]))
    errs = sorted(v.iter_errors(cfg), key=lambda e: (list(e.absolute_path), e.message))
    if errs:
        e = errs[0]
        path = list(e.absolute_path)
        if not path and e.validator == "additionalProperties":
            extra = sorted(set(cfg) - set(schema(cfg["kind"])["properties"]))
            path = extra[:1]
        if not path and e.validator == "required":
            path = [e.message.split("'")[1]]
        raise ConfigError(e.message, field=".".join(str(p) for p in path), validator=e.validator)
    return cfg


# -- reference resolution --------------------------------------------------------

def _load_doc(ref):
    if isinstance(ref, dict):
        return ref
    s = str(ref).strip()
    if s.startswith("{"):
        return json.loads(s)
    p = Path(s)
    if p.suffix == ".json" or p.exists():
        return json.loads(p.read_text())
    return s  # preset name


def resolve_metric(ref):
    from . import metric as m

    doc = _load_doc(ref)
    if isinstance(doc, dict):
        return m.MetricField.from_dict(doc)
    presets = {"flat1": lambda: m.flat(1), "flat2": lambda: m.flat(2), "kink": lambda: m.kink_metric(2),
               "kink1": lambda: m.kink_metric(1), "smooth-bump": lambda: m.smooth_bump_metric(2)}
    if doc not in presets:
        raise ConfigError(f"unknown metric preset '{doc}'", field="metric", choices=sorted(presets))
    return presets[doc]()


def resolve_region(ref):
    from . import region as r

    doc = _load_doc(ref)
    if isinstance(doc, dict):
        return r.ControlRegion.from_dict(doc)
    # presets: arc:lo,hi  strip:axis:lo,hi  cross:width  (optional suffix "/smooth")
    name, _, prof = str(doc).partition("/")
    prof = prof or "indicator"
    try:
        head, *rest = name.split(":")
        if head == "arc":
            lo, hi = map(float, rest[0].split(","))
            return r.arc(lo, hi, prof)
        if head == "strip":
            lo, hi = map(float, rest[1].split(","))
            return r.strip(2, int(rest[0]), lo, hi, prof)
        if head == "cross":
            return r.cross(float(rest[0]))
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"malformed region preset '{doc}'", field="region") from exc
    raise ConfigError(f"unknown region preset '{doc}'", field="region")


def resolve_data(ref, grid):
    from . import expr as _expr
    from .wave import WaveState

    doc = _load_doc(ref) if isinstance(ref, str) else ref
    if not isinstance(doc, dict):
        raise ConfigError("data must be an object or a JSON file", field="data")
    validate_data = set(doc) - {"u0", "v0", "mode"}
    if validate_data:
        raise ConfigError(f"unknown data keys {sorted(validate_data)}", field="data")
    x = grid.nodes()
    if "mode" in doc:
        u = np.sin(2 * np.pi * doc["mode"] * x[:, 0])
        return WaveState(u, np.zeros_like(u))
    fn = _expr.compile_many([_expr.parse(doc.get("u0", "0"), grid.dim), _expr.parse(doc.get("v0", "0"), grid.dim)],
                            grid.dim)
    vals = np.asarray(fn(x), dtype=float)
    u = np.broadcast_to(vals[0], (grid.size,)).copy()
    v = np.broadcast_to(vals[1], (grid.size,)).copy()
    return WaveState(u, v)


# -- experiment bodies -------------------------------------------------------------

def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=True) + "\n")


def _run_gcc(cfg, out: Path):
    from .gcc import check_gcc

    field, region = resolve_metric(cfg["metric"]), resolve_region(cfg["region"])
    funnel = cfg.get("funnel")
    rep = check_gcc(field, region, cfg["T"], (cfg.get("nx", 64), cfg.get("ndir", 64)),
                    None if funnel is None else (int(funnel[0]), float(funnel[1])), seed=cfg.get("seed", 0))
    _write_json(out, rep.to_dict())
    return {"holds": rep.holds}


def _run_simulate(cfg, out: Path):
    from .wave import GridSpec, simulate, write_trajectory

    field = resolve_metric(cfg["metric"])
    grid = GridSpec.build(field, cfg["n"], cfg["T"], cfg.get("c_cfl", 0.5))
    tr = simulate(resolve_data(cfg["data"], grid), field, grid, save_every=cfg.get("save_every", grid.nsteps))
    stem = out.with_suffix("")
    write_trajectory(tr, stem)
    return {"energy_drift": tr.energy_drift(), "discrete_energy_drift": tr.discrete_energy_drift(),
            "nsteps": grid.nsteps, "dt": grid.dt}


def _run_hum(cfg, out: Path):
    from .hum import compute_hum_control
    from .wave import GridSpec

    field, region = resolve_metric(cfg["metric"]), resolve_region(cfg["region"])
    grid = GridSpec.build(field, cfg.get("n", 256), cfg["T"])
    y = resolve_data(cfg["data"], grid)
    cert = compute_hum_control(field, grid, region, y.u, y.v, cfg.get("tol", 1e-8), cfg.get("max_iter", 500))
    _write_json(out, {**cert.summary(), "residual_history": cert.residual_history, "n": grid.n, "dt": grid.dt})
    return cert.summary()


def _run_observability(cfg, out: Path):
    from .hum import estimate_observability_constant
    from .wave import GridSpec

    field, region = resolve_metric(cfg["metric"]), resolve_region(cfg["region"])
    grid = GridSpec.build(field, cfg.get("n", 128), cfg["T"])
    res = estimate_observability_constant(field, grid, region, cfg["T"], cfg["cutoff"])
    _write_json(out, res.summary())
    return {"c_obs": res.c_obs}


def _run_perturb(cfg, out: Path):
    from .perturbation import cross_control_experiment, make_wave_packet, write_results_csv
    from .wave import GridSpec

    field, region = resolve_metric(cfg["metric"]), resolve_region(cfg["region"])
    n, T = cfg.get("n", 512), cfg["T"]
    grid = GridSpec.build(field, n, T)
    rows = []
    for eps in cfg["eps_ladder"]:
        for k in cfg["k_ladder"]:
            pk = make_wave_packet(field, grid, cfg.get("x0", [0.5] * field.dim), cfg.get("direction", [1.0] * field.dim),
                                  int(k), cfg.get("sigma", 0.05))
            rows.append(cross_control_experiment(field, eps, pk, region, T, cfg.get("tol", 1e-8), n,
                                                 check=cfg.get("check_gcc", True)))
    write_results_csv(rows, out)
    return {"rows": len(rows)}


def _run_transport(cfg, out: Path):
    from .transport import (DiscreteMeasure, annulus_grid, branching_support, ContinuousField, named_field,
                            refine_to_limit_curve, test_function_probe)

    m = cfg["measure"]
    presets = {"circle-band": lambda: annulus_grid(5e-5), "branching": lambda: branching_support(1e-3)}
    mu = presets[m]() if m in presets else DiscreteMeasure.from_csv(m)
    X = named_field(cfg["field"]) if isinstance(cfg["field"], str) else ContinuousField.from_exprs(cfg["field"])
    x0 = np.asarray(cfg["x0"], dtype=float)
    rep = refine_to_limit_curve(mu, X, x0, cfg.get("n_ladder", [10, 20, 40, 80]), cfg.get("horizon", 1.0))
    rep.curve.diagnostics["ladder"] = rep.to_dict()
    eps = cfg.get("eps")
    if eps is not None:
        rep.curve.diagnostics["probe"] = test_function_probe(mu, X, x0, eps, cfg.get("delta", 0.05)).to_dict()
    rep.curve.to_csv(out)
    return {"residuals": rep.residuals, "decreasing": rep.decreasing}


def _run_phase(cfg, out: Path):
    from .perturbation import make_wave_packet
    from .phase_space import (PhaseSymbol, char_concentration, default_scale, husimi_transform,
                              transport_residual, write_summary_csv)
    from .wave import GridSpec, simulate

    field = resolve_metric(cfg["metric"])
    n, T = cfg.get("n", 512), cfg.get("T", 3.0)
    x0 = cfg.get("x0", [0.3])[0]
    grid = GridSpec.build(field, n, T)
    sym = PhaseSymbol(T / 2, 0.2 * T, x0 + T / 2, 0.3)
    rows = []
    for k in cfg["k_ladder"]:
        pk = make_wave_packet(field, grid, [x0], [1.0], int(k), cfg.get("sigma_packet", 0.05))
        d = husimi_transform(simulate(pk.state(), field, grid), default_scale(k), field)
        if cfg.get("density_stem"):
            d.write(f"{cfg['density_stem']}_k{int(k)}")
        rows.append((k, char_concentration(d, cfg.get("eta", 0.1)).fraction, transport_residual([d], sym, field)[0]))
    write_summary_csv(rows, out)
    return {"rows": len(rows)}


_RUNNERS = {"gcc-check": _run_gcc, "simulate": _run_simulate, "hum-control": _run_hum,
            "observability": _run_observability, "perturb": _run_perturb, "measure-transport": _run_transport,
            "phase-diagnostics": _run_phase}
_DEFAULT_OUT = {"gcc-check": "report.json", "simulate": "trajectory.json", "hum-control": "cert.json",
                "observability": "spec.json", "perturb": "results.csv", "measure-transport": "curve.csv",
                "phase-diagnostics": "summary.csv"}


def _versions() -> dict:
    import scipy

    out = {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}
    try:
        from importlib.metadata import version

        out["artifact"] = version("artifact")
    except Exception:  # not installed
        out["artifact"] = "unknown"
    return out


def run(cfg: dict) -> dict:
    """Validate and execute one configuration; returns the summary dict."""
    cfg = validate(dict(cfg))
    out = Path(cfg.get("out", _DEFAULT_OUT[cfg["kind"]]))
    out.parent.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 0))
    np.random.seed(seed)  # nothing should rely on the global state; pinned anyway
    t0 = time.perf_counter()
    if cfg.get("threads"):
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=int(cfg["threads"])):
            summary = _RUNNERS[cfg["kind"]](cfg, out)
    else:
        summary = _RUNNERS[cfg["kind"]](cfg, out)
    wall = time.perf_counter() - t0
    _write_json(out.parent / "resolved_config.json", cfg)
    _write_json(out.parent / "manifest.json", {"kind": cfg["kind"], "seed": seed, "wall_time_s": wall,
                                               "versions": _versions(), "output": out.name, "summary": summary})
    return summary


# -- argparse ------------------------------------------------------------------------

def _floats(s: str):
    return [float(v) for v in s.split(",") if v.strip()]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roughwave", description="Wave control experiments on flat tori.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, out_default):
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        sp.add_argument("--threads", type=int, default=None, help="upper bound on BLAS/FFT threads")
        sp.add_argument("--out", default=out_default, help=f"output file (default {out_default})")

    sp = sub.add_parser("run", help="run a JSON configuration document")
    sp.add_argument("--config", required=True, help="path to the configuration JSON")

    sp = sub.add_parser("gcc-check", help="sampled geometric control check")
    sp.add_argument("--metric", required=True, help="metric JSON path, inline JSON or preset")
    sp.add_argument("--region", required=True, help="region JSON path, inline JSON or preset")
    sp.add_argument("--time", type=float, required=True, help="control time T")
    sp.add_argument("--funnel", type=_floats, default=None, help="n,jitter for funnel ensembles")
    sp.add_argument("--nx", type=int, default=64, help="base points per axis")
    sp.add_argument("--ndir", type=int, default=64, help="covector directions")
    common(sp, "report.json")

    sp = sub.add_parser("simulate", help="free wave simulation with binary export")
    sp.add_argument("--metric", required=True, help="metric JSON path, inline JSON or preset")
    sp.add_argument("--n", type=int, required=True, help="grid points per axis")
    sp.add_argument("--time", type=float, required=True, help="final time")
    sp.add_argument("--data", required=True, help="data JSON ({u0, v0} expressions or {mode})")
    sp.add_argument("--c-cfl", type=float, default=0.5, help="CFL number")
    sp.add_argument("--save-every", type=int, default=None, help="snapshot stride in steps")
    common(sp, "trajectory.json")

    sp = sub.add_parser("hum-control", help="HUM control by conjugate gradients")
    sp.add_argument("--metric", required=True, help="metric JSON path, inline JSON or preset")
    sp.add_argument("--region", required=True, help="region JSON path, inline JSON or preset")
    sp.add_argument("--time", type=float, required=True, help="control time T")
    sp.add_argument("--data", required=True, help="data JSON ({u0, v0} expressions or {mode})")
    sp.add_argument("--n", type=int, default=256, help="grid points per axis")
    sp.add_argument("--tol", type=float, default=1e-8, help="relative CG tolerance")
    sp.add_argument("--max-iter", type=int, default=500, help="CG iteration cap")
    common(sp, "cert.json")

    sp = sub.add_parser("observability", help="observability constant below a frequency cutoff")
    sp.add_argument("--metric", required=True, help="metric JSON path, inline JSON or preset")
    sp.add_argument("--region", required=True, help="region JSON path, inline JSON or preset")
    sp.add_argument("--time", type=float, required=True, help="observation time T")
    sp.add_argument("--cutoff", type=float, required=True, help="frequency cutoff (cycles per unit length)")
    sp.add_argument("--n", type=int, default=128, help="grid points per axis")
    common(sp, "spec.json")

    sp = sub.add_parser("perturb", help="cross-metric control ladder")
    sp.add_argument("--metric", required=True, help="metric JSON path, inline JSON or preset")
    sp.add_argument("--region", required=True, help="region JSON path, inline JSON or preset")
    sp.add_argument("--time", type=float, required=True, help="control time T")
    sp.add_argument("--eps-ladder", type=_floats, required=True, help="comma-separated eps values")
    sp.add_argument("--k-ladder", type=_floats, required=True, help="comma-separated packet wavenumbers")
    sp.add_argument("--n", type=int, default=512, help="grid points per axis")
    sp.add_argument("--x0", type=_floats, default=None, help="packet centre")
    sp.add_argument("--sigma", type=float, default=0.05, help="packet envelope width")
    sp.add_argument("--tol", type=float, default=1e-8, help="relative CG tolerance")
    sp.add_argument("--no-gcc-check", action="store_true", help="skip the GCC precondition check")
    common(sp, "results.csv")

    sp = sub.add_parser("measure-transport", help="integral curves inside a measure support")
    sp.add_argument("--measure", required=True, help="CSV (x1..xd,w) or preset circle-band|branching")
    sp.add_argument("--field", required=True, help="rotation|branching or comma-separated expressions")
    sp.add_argument("--x0", type=_floats, required=True, help="base point")
    sp.add_argument("--n-ladder", type=_floats, default=[10, 20, 40, 80], help="comma-separated n values")
    sp.add_argument("--horizon", type=float, default=1.0, help="curve parameter range [-H, H]")
    sp.add_argument("--eps", type=float, default=None, help="test-function eps (enables the probe)")
    sp.add_argument("--delta", type=float, default=0.05, help="test-function delta")
    common(sp, "curve.csv")

    sp = sub.add_parser("phase-diagnostics", help="windowed Fourier densities of packet ladders")
    sp.add_argument("--metric", required=True, help="1D metric JSON path, inline JSON or preset")
    sp.add_argument("--k-ladder", type=_floats, required=True, help="comma-separated packet wavenumbers")
    sp.add_argument("--n", type=int, default=512, help="grid points")
    sp.add_argument("--time", type=float, default=3.0, help="trajectory length")
    sp.add_argument("--x0", type=_floats, default=None, help="packet centre")
    sp.add_argument("--sigma-packet", type=float, default=0.05, help="packet envelope width")
    sp.add_argument("--eta", type=float, default=0.1, help="characteristic band half-width")
    sp.add_argument("--density-stem", default=None, help="write densities as STEM_k<k>.json/.bin")
    common(sp, "summary.csv")
    return p


def _args_to_config(a) -> dict:
    cfg = {"kind": a.cmd, "seed": a.seed, "out": a.out}
    if a.threads is not None:
        cfg["threads"] = a.threads
    m = a.cmd
    if m == "gcc-check":
        cfg.update(metric=a.metric, region=a.region, T=a.time, nx=a.nx, ndir=a.ndir)
        if a.funnel is not None:
            cfg["funnel"] = a.funnel
    elif m == "simulate":
        cfg.update(metric=a.metric, n=a.n, T=a.time, data=a.data, c_cfl=a.c_cfl)
        if a.save_every is not None:
            cfg["save_every"] = a.save_every
    elif m == "hum-control":
        cfg.update(metric=a.metric, region=a.region, T=a.time, data=a.data, n=a.n, tol=a.tol, max_iter=a.max_iter)
    elif m == "observability":
        cfg.update(metric=a.metric, region=a.region, T=a.time, cutoff=a.cutoff, n=a.n)
    elif m == "perturb":
        cfg.update(metric=a.metric, region=a.region, T=a.time, eps_ladder=a.eps_ladder, k_ladder=a.k_ladder,
                   n=a.n, sigma=a.sigma, tol=a.tol, check_gcc=not a.no_gcc_check)
        if a.x0 is not None:
            cfg["x0"] = a.x0
    elif m == "measure-transport":
        fld = a.field if a.field in ("rotation", "branching") else a.field.split(",")
        cfg.update(measure=a.measure, field=fld, x0=a.x0, n_ladder=a.n_ladder, horizon=a.horizon, delta=a.delta)
        if a.eps is not None:
            cfg["eps"] = a.eps
    elif m == "phase-diagnostics":
        cfg.update(metric=a.metric, k_ladder=a.k_ladder, n=a.n, T=a.time, sigma_packet=a.sigma_packet, eta=a.eta)
        if a.x0 is not None:
            cfg["x0"] = a.x0
        if a.density_stem:
            cfg["density_stem"] = a.density_stem
    return cfg


def _fail(code: int, doc: dict) -> int:
    sys.stderr.write(json.dumps(_jsonable(doc), sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "run":
            try:
                cfg = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config: {exc}", field="config") from exc
        else:
            cfg = _args_to_config(args)
        summary = run(cfg)
    except (ConfigError, DescriptorError) as exc:
        return _fail(2, exc.to_dict())
    except RoughWaveError as exc:
        return _fail(3, exc.to_dict())
    except Exception as exc:  # unexpected: still machine readable
        return _fail(1, {"error": type(exc).__name__, "message": str(exc)})
    sys.stdout.write(json.dumps(_jsonable(summary), sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
