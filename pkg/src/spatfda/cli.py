"""Command-line interface: ``spatfda <command> [options]``.

Every option can also come from a JSON file passed with ``--config``; keys
are the flag names with or without the leading dashes, and hyphens and
underscores are interchangeable.  Flags given on the command line win over
the file.  ``--seed`` falls back to the ``SPATFDA_SEED`` environment
variable, then to 0.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical
failure.  Output files are written to a temporary file in the target
directory and renamed into place.  A JSON summary carrying
``schema_version`` is printed to stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import corr_test, latscale, simstudy
from .curvegrid import CurveSet, Grid, fourier_basis, read_curves_csv, write_curves_csv
from .errors import (
    AllFitsFailed,
    ConvergenceFailure,
    FileFormat,
    LocationMismatch,
    NonPositiveScale,
    NonPsd,
    NotPositiveDefinite,
)
from .numkernel import RngStream
from .spatial_fpc import estimate_fpc_cm2, estimate_fpc_cm3, standard_fpc
from .sphere import read_locations_csv, sample_locations
from .variogram import (
    DEFAULT_BINS,
    EXPONENTIAL,
    empirical_variogram,
    fit_variograms,
    functional_cloud,
    hs_cloud,
)

SCHEMA_VERSION = 1
SEED_ENV = "SPATFDA_SEED"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

NUMERIC_ERRORS = (NotPositiveDefinite, ConvergenceFailure, AllFitsFailed, NonPsd,
                  NonPositiveScale, np.linalg.LinAlgError, FloatingPointError)

log = logging.getLogger("spatfda")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Option parsing
# ---------------------------------------------------------------------------

def _list_of(conv):
    def parse(v):
        if isinstance(v, (list, tuple)):
            items = list(v)
        else:
            items = [x for x in str(v).split(",") if x.strip()]
        return tuple(conv(x.strip() if isinstance(x, str) else x) for x in items)
    parse.__name__ = f"list of {conv.__name__}"
    return parse


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_int(v):
    return None if v is None or str(v).lower() in ("", "none", "auto") else int(v)


# (name, converter, default, help); name "x_y" becomes flag --x-y
COMMON = [
    ("config", str, None, "JSON file with option values"),
    ("seed", _opt_int, None, f"master seed (default: ${SEED_ENV} or 0)"),
]
CURVE_INPUT = [
    ("curves", str, None, "curve CSV with header t_1..t_m[,lat_deg,lon_deg]"),
    ("locations", str, None, "location CSV lat_deg,lon_deg (needed if the curve file has none)"),
]
FIT_OPTS = [
    ("estimator", str, "MT", "empirical variogram estimator: MT or CH"),
    ("model_kind", str, EXPONENTIAL, "covariance model: exponential or gaussian"),
    ("bins", int, DEFAULT_BINS, "number of distance bins"),
]

OPTIONS = {
    "study": [
        ("kind", str, None, "mean, fpc, size or power"),
        ("n", int, None, "number of locations"),
        ("reps", int, None, "replications (size/power: runs per grid point)"),
        ("layout", str, "clustered", "synthetic layout: clustered or uniform"),
        ("locations", str, None, "location CSV instead of a synthetic layout"),
        ("estimator", str, None, "MT or CH (default: MT, CH for the fpc study)"),
        ("methods", _list_of(str), None, "comma-separated methods to compare"),
        ("mean_kind", str, "sqrt", "mean study: sqrt or fourier"),
        ("cov_kind", str, EXPONENTIAL, "mean/fpc study: score covariance model"),
        ("m", int, simstudy.DEFAULT_M, "grid size"),
        ("K", _opt_int, None, "basis size (default 1 + 4 floor(sqrt m))"),
        ("p_grid", _list_of(int), None, "size/power: numbers of components tested"),
        ("rho_grid", _list_of(float), None, "power: dependence strengths"),
        ("dep_index", int, 1, "power: index of the xi field coupled with eta"),
        ("alpha", float, 0.05, "nominal level"),
        ("mc_reps", int, corr_test.DEFAULT_REPS, "Monte Carlo replications of SM and T"),
        ("model_kind", str, EXPONENTIAL, "size/power: kind used by the mean and FPC fits"),
        ("mean_method", str, "M2", "size/power: centering method"),
        ("fpc_method", str, "CM2", "size/power: component method"),
        ("sm_mode", str, "gaussian", "size/power: SM replication mode, gaussian or fields"),
        ("parsimony", _bool, False, "size/power: score models must beat the flat fit on AIC"),
        ("out", str, None, "report CSV"),
        ("summary", str, None, "report JSON (default: next to --out with .json suffix)"),
    ],
    "test": [
        ("x", str, None, "curve CSV of the first sample"),
        ("y", str, None, "curve CSV of the second sample"),
        ("locations", str, None, "location CSV shared by both samples"),
        ("p", _opt_int, None, "components of x (default: 85%% variance rule)"),
        ("q", int, 1, "components of y"),
        ("alpha", float, 0.05, "level used for the reject flags"),
        ("mc_reps", int, corr_test.DEFAULT_REPS, "Monte Carlo replications of SM and T"),
        ("methods", _list_of(str), corr_test.METHODS, "tests to run"),
        ("mean_method", str, "M2", "centering: M2, M3 or simple"),
        ("fpc_method", str, "CM2", "components: CM2, CM3 or standard"),
        ("estimator", str, "MT", "MT or CH"),
        ("model_kind", str, EXPONENTIAL, "kind used by the mean and FPC fits"),
        ("sm_mode", str, "gaussian", "SM replication mode: gaussian or fields"),
        ("parsimony", _bool, False, "score models must beat the flat fit on AIC"),
        ("out", str, None, "result JSON (default: stdout only)"),
    ],
    "mean": CURVE_INPUT + FIT_OPTS + [
        ("method", str, "M2", "M1a, M1b, M2, M3 or simple"),
        ("K", _opt_int, None, "basis size for M3"),
        ("out", str, None, "output CSV with one curve"),
    ],
    "fpc": CURVE_INPUT + FIT_OPTS + [
        ("method", str, "CM2", "CM2, CM3 or standard"),
        ("center", str, "M2", "centering before estimation: M2, M3, simple or none"),
        ("p", _opt_int, None, "number of components (default: 85%% variance rule)"),
        ("K", _opt_int, None, "basis size"),
        ("out_eigen", str, None, "eigenvalue CSV"),
        ("out_components", str, None, "component CSV"),
    ],
    "variogram": CURVE_INPUT + FIT_OPTS + [
        ("cloud", str, "functional", "dissimilarity: functional (L2) or hs (Hilbert-Schmidt)"),
        ("center", str, "none", "centering before the cloud: none, M2, M3 or simple"),
        ("fit", _bool, True, "fit a covariance model"),
        ("nugget", _bool, False, "include a nugget in the fit"),
        ("out", str, None, "empirical variogram CSV"),
        ("model_out", str, None, "fitted model JSON"),
    ],
    "simulate": [
        ("kind", str, "mean", "mean, fpc or test"),
        ("n", int, 100, "number of locations"),
        ("layout", str, "clustered", "synthetic layout: clustered or uniform"),
        ("locations", str, None, "location CSV instead of a synthetic layout"),
        ("m", int, simstudy.DEFAULT_M, "grid size"),
        ("mean_kind", str, "sqrt", "mean: sqrt, fourier or none"),
        ("cov_kind", str, EXPONENTIAL, "mean/fpc: score covariance model"),
        ("p", int, 7, "test: number of xi fields"),
        ("rho_dep", float, 0.0, "test: correlation between xi_dep and eta"),
        ("dep_index", int, 1, "test: index of the coupled xi field"),
        ("out", str, None, "curve CSV (the x sample for --kind test)"),
        ("out_y", str, None, "test: curve CSV of the y sample"),
    ],
    "descale": CURVE_INPUT + [
        ("model", str, None, "scale model JSON {a, b, c}; fitted from the data if absent"),
        ("ref", int, 0, "row of the reference curve when fitting"),
        ("scale", _bool, False, "multiply by G instead of dividing"),
        ("out", str, None, "output curve CSV"),
        ("model_out", str, None, "write the (fitted) model JSON here"),
    ],
}

REQUIRED = {
    "study": ("kind", "out"),
    "test": ("x", "y"),
    "mean": ("curves", "out"),
    "fpc": ("curves",),
    "variogram": ("curves",),
    "simulate": ("out",),
    "descale": ("curves", "out"),
}

HELP = {
    "study": "run a replicated simulation study",
    "test": "test two curve samples for correlation",
    "mean": "estimate the mean function",
    "fpc": "estimate functional principal components",
    "variogram": "empirical functional variogram and model fit",
    "simulate": "draw a sample from a study design",
    "descale": "remove (or apply) latitude-dependent amplitude scaling",
}


def _options(cmd: str) -> list:
    return COMMON + OPTIONS[cmd]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatfda", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in OPTIONS.items():
        sp = sub.add_parser(cmd, help=HELP[cmd], description=HELP[cmd])
        for name, conv, default, text in COMMON + opts:
            # defaults are applied after merging with --config; show them in help only
            sp.add_argument("--" + name.replace("_", "-"), dest=name, type=str,
                            default=argparse.SUPPRESS, metavar=name.upper(),
                            help=f"{text} (default: {default})" if default is not None else text)
    return parser


def _norm_key(k: str) -> str:
    return k.lstrip("-").replace("-", "_")


def resolve(cmd: str, given: dict) -> dict:
    """Merge command-line values, ``--config`` values and defaults."""
    opts = {name: (conv, default) for name, conv, default, _ in _options(cmd)}
    from_file = {}
    if given.get("config"):
        try:
            with open(given["config"]) as fh:
                raw = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {given['config']}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        for k, v in raw.items():
            key = _norm_key(k)
            if key not in opts or key == "config":
                raise ConfigError(f"unknown option {k!r} in config for {cmd!r}")
            from_file[key] = v
    out = {}
    for name, (conv, default) in opts.items():
        if name in given:
            value = given[name]
        elif name in from_file:
            value = from_file[name]
        else:
            out[name] = default
            continue
        try:
            out[name] = None if value is None else conv(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for --{name.replace('_', '-')}: {value!r}") from exc
    if out.get("seed") is None:
        env = os.environ.get(SEED_ENV)
        try:
            out["seed"] = int(env) if env not in (None, "") else 0
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    missing = [n for n in REQUIRED[cmd] if out.get(n) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return out


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def atomic_write(path, writer) -> None:
    """Call ``writer(tmp_path)`` and rename the result onto ``path``."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _document(command: str, payload: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, **_clean(payload)}


def write_json(path, doc: dict) -> None:
    def w(tmp):
        with open(tmp, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    atomic_write(path, w)


def _emit(doc: dict) -> None:
    json.dump(doc, sys.stdout, indent=2)
    sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# Input helpers
# ---------------------------------------------------------------------------

def load_curves(path, locations=None) -> CurveSet:
    """Curves from CSV, with locations from the file or a separate CSV."""
    data = read_curves_csv(path)
    if locations is None:
        if data.locations is None:
            raise FileFormat(f"{path}: no lat_deg,lon_deg columns and no --locations given")
        return data
    locs = read_locations_csv(locations)
    if len(locs) != len(data):
        raise LocationMismatch(f"{path}: {len(data)} curves but {len(locs)} locations")
    if data.locations is not None and not data.locations == locs:
        raise LocationMismatch(f"{path}: embedded locations differ from {locations}")
    return CurveSet(data.grid, data.values, locs)


def _mean_of(data: CurveSet, method: str, o: dict, dists, basis):
    if method == "none":
        return None
    return simstudy.mean_estimate(data, method, o["estimator"], o["model_kind"], dists, basis)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _study_config(o: dict):
    kind = o["kind"]
    common = {"seed": o["seed"], "layout": o["layout"], "m": o["m"]}
    if o["locations"]:
        common["location_file"] = o["locations"]
    if o["n"] is not None:
        common["n"] = o["n"]
    if o["estimator"] is not None:
        common["estimator"] = o["estimator"]
    if o["methods"] is not None:
        common["methods"] = o["methods"]
    if kind in ("mean", "fpc"):
        if o["reps"] is not None:
            common["reps"] = o["reps"]
        if o["K"] is not None:
            common["K"] = o["K"]
        if kind == "mean":
            return simstudy.MeanStudyConfig(mean_kind=o["mean_kind"], cov_kind=o["cov_kind"], **common)
        return simstudy.FpcStudyConfig(cov_kind=o["cov_kind"], **common)
    if kind in ("size", "power"):
        if o["reps"] is not None:
            common["runs"] = o["reps"]
        if kind == "power":
            common.setdefault("n", 100)
            common["runs"] = common.get("runs", 1000)
            common["p_grid"] = o["p_grid"] or (4,)
            common["rho_grid"] = o["rho_grid"] or (0.0, 0.25, 0.5, 0.75, 0.9)
        else:
            if o["p_grid"]:
                common["p_grid"] = o["p_grid"]
            common["rho_grid"] = o["rho_grid"] or (0.0,)
        return simstudy.TestStudyConfig(
            dep_index=o["dep_index"], alpha=o["alpha"], mc_reps=o["mc_reps"],
            kind=o["model_kind"], mean_method=o["mean_method"], fpc_method=o["fpc_method"],
            sm_mode=o["sm_mode"], parsimony=o["parsimony"], **common)
    raise ConfigError(f"unknown study kind {kind!r}; use mean, fpc, size or power")


def _validate_study(cfg) -> None:
    if isinstance(cfg, simstudy.TestStudyConfig):
        cfg.validate()
        if cfg.mc_reps < corr_test.MIN_REPS and set(cfg.methods) & {"SM", "T"}:
            raise ConfigError(f"mc_reps must be at least {corr_test.MIN_REPS}")
        bad = set(cfg.methods) - set(corr_test.METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}")
    else:
        cfg.validate()


def cmd_study(o: dict) -> dict:
    cfg = _study_config(o)
    _validate_study(cfg)
    if isinstance(cfg, simstudy.MeanStudyConfig):
        report = simstudy.run_mean_study(cfg)
    elif isinstance(cfg, simstudy.FpcStudyConfig):
        report = simstudy.run_fpc_study(cfg)
    else:
        report = simstudy.run_size_power_study(cfg)
    summary = o["summary"] or str(Path(o["out"]).with_suffix(".json"))
    atomic_write(o["out"], report.to_csv)
    doc = _document("study", report.to_dict())
    write_json(summary, doc)
    return {"schema_version": SCHEMA_VERSION, "command": "study", "kind": report.kind,
            "rows": len(report.rows), "out": o["out"], "summary": summary}


def cmd_test(o: dict) -> dict:
    if o["mc_reps"] < corr_test.MIN_REPS and set(o["methods"]) & {"SM", "T"}:
        raise ConfigError(f"mc_reps must be at least {corr_test.MIN_REPS}")
    if not 0 < o["alpha"] < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    x = load_curves(o["x"], o["locations"])
    y = load_curves(o["y"], o["locations"])
    if len(x) != len(y):
        raise LocationMismatch(f"{len(x)} curves in x but {len(y)} in y")
    res = corr_test.correlation_test(
        x, y, o["p"], o["q"], mean_method=o["mean_method"], fpc_method=o["fpc_method"],
        estimator=o["estimator"], kind=o["model_kind"], methods=o["methods"],
        reps=o["mc_reps"], rng=RngStream(o["seed"]), sm_mode=o["sm_mode"],
        parsimony=o["parsimony"])
    body = res.to_dict()
    for t in body["tests"].values():
        t["reject"] = bool(t["p_value"] <= o["alpha"])
    body["alpha"] = o["alpha"]
    body["n"] = len(x)
    body["seed"] = o["seed"]
    doc = _document("test", body)
    if o["out"]:
        write_json(o["out"], doc)
    return doc


def cmd_mean(o: dict) -> dict:
    data = load_curves(o["curves"], o["locations"])
    dists = data.distances()
    if o["method"] not in simstudy.MEAN_METHODS:
        raise ConfigError(f"unknown mean method {o['method']!r}")
    basis = fourier_basis(data.grid, o["K"]) if o["method"] == "M3" else None
    if o["method"] == "M3":
        from .spatial_mean import estimate_mean_m3
        mu = estimate_mean_m3(data, estimator=o["estimator"], kind=o["model_kind"], dists=dists,
                              n_bins=o["bins"], basis=basis)
    else:
        mu = simstudy.mean_estimate(data, o["method"], o["estimator"], o["model_kind"], dists, basis)
    atomic_write(o["out"], lambda tmp: write_curves_csv(tmp, mu.values[None, :]))
    return _document("mean", {"method": o["method"], "n": len(data), "m": data.grid.m, "out": o["out"]})


def cmd_fpc(o: dict) -> dict:
    data = load_curves(o["curves"], o["locations"])
    dists = data.distances()
    basis = fourier_basis(data.grid, o["K"])
    if o["center"] not in ("none",) + simstudy.MEAN_METHODS:
        raise ConfigError(f"unknown centering {o['center']!r}")
    mu = _mean_of(data, o["center"], o, dists, basis)
    centered = data if mu is None else data.centered(mu)
    kw = dict(p=o["p"], basis=basis)
    fit_kw = dict(estimator=o["estimator"], kind=o["model_kind"], dists=dists, n_bins=o["bins"])
    if o["method"] == "CM2":
        fp = estimate_fpc_cm2(centered, **kw, **fit_kw)
    elif o["method"] == "CM3":
        fp = estimate_fpc_cm3(centered, **kw, **fit_kw)
    elif o["method"] == "standard":
        fp = standard_fpc(centered, **kw)
    else:
        raise ConfigError(f"unknown FPC method {o['method']!r}")
    # FpcSet.to_csv writes both tables; stage each one separately
    if o["out_eigen"]:
        atomic_write(o["out_eigen"], lambda tmp: fp.to_csv(tmp, os.devnull))
    if o["out_components"]:
        atomic_write(o["out_components"], lambda tmp: fp.to_csv(os.devnull, tmp))
    return _document("fpc", {
        "method": o["method"], "center": o["center"], "p": fp.p, "K": fp.basis_K,
        "eigenvalues": fp.eigenvalues, "explained": fp.explained()[:fp.p],
        "out_eigen": o["out_eigen"], "out_components": o["out_components"]})


def cmd_variogram(o: dict) -> dict:
    data = load_curves(o["curves"], o["locations"])
    dists = data.distances()
    if o["center"] not in ("none",) + simstudy.MEAN_METHODS:
        raise ConfigError(f"unknown centering {o['center']!r}")
    mu = _mean_of(data, o["center"], o, dists, fourier_basis(data.grid))
    if mu is not None:
        data = data.centered(mu)
    if o["cloud"] == "functional":
        cloud = functional_cloud(data, dists)
    elif o["cloud"] == "hs":
        cloud = hs_cloud(data, dists)
    else:
        raise ConfigError(f"unknown cloud {o['cloud']!r}; use functional or hs")
    emp = empirical_variogram(cloud, o["estimator"], o["bins"])
    if o["out"]:
        atomic_write(o["out"], emp.to_csv)
    body = {"cloud": o["cloud"], "estimator": o["estimator"], "bins": len(emp),
            "dmax": emp.dmax, "out": o["out"]}
    if o["fit"]:
        if len(emp) < 3:
            raise ConfigError("fewer than 3 non-empty bins; cannot fit a model")
        fits = fit_variograms(emp.centers, emp.gamma[None, :], emp.counts, emp.dmax,
                              o["model_kind"], o["nugget"])
        model = fits.model(0)
        body["model"] = dict(model.to_dict(), structured=bool(fits.ok[0]),
                             converged=bool(fits.converged[0]))
        if o["model_out"]:
            write_json(o["model_out"], _document("variogram-model", body["model"]))
    return _document("variogram", body)


def cmd_simulate(o: dict) -> dict:
    kind = o["kind"]
    if kind not in ("mean", "fpc", "test"):
        raise ConfigError(f"unknown simulation kind {kind!r}; use mean, fpc or test")
    rng = RngStream(o["seed"])
    if o["locations"]:
        locs = sample_locations(o["n"], "file", path=o["locations"])
    else:
        locs = sample_locations(o["n"], o["layout"], rng.substream(0))
    spec = simstudy.DgpSpec(f"{kind}-study", mean_kind=o["mean_kind"], cov_kind=o["cov_kind"],
                            n=o["n"], layout=o["layout"], rho_dep=o["rho_dep"],
                            dep_index=o["dep_index"], m=o["m"])
    body = {"kind": kind, "n": o["n"], "m": o["m"], "seed": o["seed"], "out": o["out"]}
    if kind == "mean":
        data = simstudy.gen_mean_dgp(spec, rng, locs)
    elif kind == "fpc":
        data = simstudy.gen_fpc_dgp(locs, rng, spec)
    else:
        if not 1 <= o["p"] <= len(simstudy.XI_MODELS):
            raise ConfigError(f"p must lie in 1..{len(simstudy.XI_MODELS)}")
        if o["rho_dep"] > 0 and o["dep_index"] > o["p"]:
            raise ConfigError("dep_index exceeds p")
        if not o["out_y"]:
            raise ConfigError("--out-y is required for --kind test")
        v, u = simstudy.test_study_components(Grid(o["m"]), o["p"])
        pair = simstudy.gen_test_dgp(spec, v, u, rng, locs)
        data = pair.x
        atomic_write(o["out_y"], lambda tmp: write_curves_csv(tmp, pair.y.values, pair.y.locations))
        body["out_y"] = o["out_y"]
    atomic_write(o["out"], lambda tmp: write_curves_csv(tmp, data.values, data.locations))
    return _document("simulate", body)


def cmd_descale(o: dict) -> dict:
    data = load_curves(o["curves"], o["locations"])
    if o["model"]:
        try:
            with open(o["model"]) as fh:
                model = latscale.ScaleModel.from_json(fh.read())
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read scale model {o['model']}: {exc}") from exc
        fitted = False
    else:
        if not 0 <= o["ref"] < len(data):
            raise ConfigError(f"ref must lie in 0..{len(data) - 1}")
        ratios = latscale.scaling_ratios(data, o["ref"])
        model = latscale.fit_scale(data.locations.lat, ratios)
        fitted = True
        if not model.converged:
            log.warning("scale fit did not converge cleanly: %s", model)
    out = latscale.scale(data, model) if o["scale"] else latscale.descale(data, model)
    atomic_write(o["out"], lambda tmp: write_curves_csv(tmp, out.values, out.locations))
    if o["model_out"]:
        atomic_write(o["model_out"], lambda tmp: Path(tmp).write_text(model.to_json() + "\n"))
    return _document("descale", {"model": {"a": model.a, "b": model.b, "c": model.c,
                                           "converged": model.converged},
                                 "fitted": fitted, "out": o["out"]})


COMMANDS = {
    "study": cmd_study,
    "test": cmd_test,
    "mean": cmd_mean,
    "fpc": cmd_fpc,
    "variogram": cmd_variogram,
    "simulate": cmd_simulate,
    "descale": cmd_descale,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose")}
    try:
        opts = resolve(ns.command, given)
        doc = COMMANDS[ns.command](opts)
    except NUMERIC_ERRORS as exc:
        print(f"spatfda: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"spatfda: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _emit(doc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
