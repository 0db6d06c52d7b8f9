"""Command-line interface.

Every subcommand resolves one flat configuration (defaults, then optional
``--profile``, then the YAML/JSON ``--config`` file, then command-line
flags), writes its artifacts into ``--out`` and records the resolved
configuration in ``manifest.json``.  ``smgsbr replay manifest.json --out
DIR`` re-executes a run from its manifest.

Exit status: 0 on success, 2 on invalid input, 3 on runtime failure; on
failure a JSON error record is printed to stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import platform
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .dynamics import PRESETS, find_saddle, simulate, trace_stable_manifold
from .errors import ConfigError, ParameterError, SmgsbrError
from .gsbr import PROFILES, GsbrConfig, run_chain
from .manifold import (
    approximate_manifold_multi,
    approximate_manifold_sliding,
    cloud_metrics,
    hpdr_grid,
    orbit_start_series,
)
from .stochastics import NoiseSpec, RngStream

COMMANDS = ("simulate", "ground-truth", "reconstruct", "manifold", "evaluate")
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3

_GSBR_DEFAULTS = GsbrConfig().to_dict()

# key -> (kind, default, help)
SCHEMA = {
    "seed": ("int", 0, "master seed"),
    "preset": ("str", "henon", f"map preset: {', '.join(PRESETS)}"),
    "noise": ("str", "none", "noise mixture 'w:v,...' or 'none'"),
    "x0": ("floats2", [-1.0, 0.5], "initial point x_{-1},x_0"),
    "n": ("int", 2000, "series length"),
    "bound": ("float", 1e6, "escape bound for simulation"),
    "T": ("int", _GSBR_DEFAULTS["T"], "backward horizon"),
    "d": ("int", _GSBR_DEFAULTS["d"], "delay"),
    "degree": ("int", _GSBR_DEFAULTS["degree"], "model polynomial degree"),
    "trunc": ("floats2", _GSBR_DEFAULTS["trunc"], "restriction interval lo,hi"),
    "alpha": ("float", _GSBR_DEFAULTS["alpha"], "Beta prior shape a"),
    "beta": ("float", _GSBR_DEFAULTS["beta"], "Beta prior shape b"),
    "b1": ("float", _GSBR_DEFAULTS["b1"], "Gamma prior shape"),
    "b2": ("float", _GSBR_DEFAULTS["b2"], "Gamma prior rate"),
    "iters": ("int", _GSBR_DEFAULTS["iters"], "total sweeps"),
    "burn_in": ("int", _GSBR_DEFAULTS["burn_in"], "discarded sweeps"),
    "thin": ("int", _GSBR_DEFAULTS["thin"], "retention stride"),
    "proposal_scale0": ("float", _GSBR_DEFAULTS["proposal_scale0"], "initial proposal scale"),
    "adapt": ("bool", _GSBR_DEFAULTS["adapt"], "adapt proposal scales during burn-in"),
    "target_accept": ("float", _GSBR_DEFAULTS["target_accept"], "adaptation target"),
    "adapt_batch": ("int", _GSBR_DEFAULTS["adapt_batch"], "sweeps per adaptation batch"),
    "jitter": ("float", _GSBR_DEFAULTS["jitter"], "diagonal jitter of the theta precision"),
    "profile": ("optstr", None, f"iteration budget profile: {', '.join(PROFILES)}"),
    "input": ("optstr", None, "input series CSV"),
    "inputs": ("strlist", [], "input series CSVs (multi mode)"),
    "window_start": ("int", 1, "1-based window start (reconstruct)"),
    "window_len": ("optint", None, "window length (reconstruct; default: to the end)"),
    "mode": ("str", "sliding", "manifold mode: sliding or multi"),
    "k": ("int", 1, "number of sliding windows"),
    "r": ("int", 1, "number of orbit starts (multi mode without inputs)"),
    "skip": ("int", 0, "orbit points skipped before the first start (multi mode)"),
    "jobs": ("int", 0, "worker processes (0: available CPUs)"),
    "grid_bounds": ("optfloats4", None, "HPDR bounds xmin,xmax,ymin,ymax (default: trunc square)"),
    "grid_cols": ("int", 200, "HPDR columns"),
    "grid_rows": ("int", 200, "HPDR rows"),
    "saddle_x": ("optfloat", None, "pick the saddle nearest this x (default: largest x)"),
    "eps": ("float", 1e-4, "seed segment half-length"),
    "n_back": ("int", 20, "backward iteration depth"),
    "window": ("floats4", [-3.0, 3.0, -3.0, 3.0], "tracing window xmin,xmax,ymin,ymax"),
    "max_points": ("int", 5_000_000, "tracing point budget"),
    "trace_resolution": ("float", 0.01, "maximum gap between traced points"),
    "cloud": ("optstr", None, "cloud CSV (evaluate)"),
    "truth": ("optstr", None, "polyline CSV (evaluate)"),
    "tol": ("float", 0.05, "coverage tolerance"),
    "recall_tol": ("optfloat", None, "recall tolerance (default: tol)"),
}

_GSBR_KEYS = tuple(GsbrConfig().to_dict())
_PATH_KEYS = ("input", "inputs", "cloud", "truth")


def _coerce(key, value):
    kind = SCHEMA[key][0]
    try:
        if kind.startswith("opt"):
            if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
                return None
            kind = kind[3:]
        if kind == "int":
            if isinstance(value, bool):
                raise ValueError("boolean")
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("not an integer")
            return int(value) if not isinstance(value, str) else int(value.strip())
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError("boolean")
            out = float(value)
            if math.isnan(out):
                raise ValueError("nan")
            return out
        if kind == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError("not a boolean")
        if kind == "str":
            if not isinstance(value, str):
                raise ValueError("not a string")
            return value
        if kind == "strlist":
            if isinstance(value, str):
                return [v for v in value.split(",") if v]
            return [str(v) for v in value]
        if kind.startswith("floats"):
            size = int(kind[-1])
            items = value.split(",") if isinstance(value, str) else list(value)
            out = [float(v) for v in items]
            if len(out) != size:
                raise ValueError(f"expected {size} values")
            return out
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {key!r}: {value!r} ({exc})", key=key) from None
    raise AssertionError(kind)


def _validate(cfg: dict) -> None:
    def bad(key, msg):
        raise ConfigError(f"{key}: {msg}", key=key)

    if cfg["preset"] not in PRESETS:
        bad("preset", f"unknown preset {cfg['preset']!r}")
    try:
        NoiseSpec.parse(cfg["noise"])
    except ParameterError as exc:
        raise ConfigError(f"noise: {exc}", key="noise") from None
    for key in ("n", "k", "r", "window_start", "grid_cols", "grid_rows", "max_points"):
        if cfg[key] < 1:
            bad(key, "must be >= 1")
    for key in ("seed", "skip", "jobs", "n_back"):
        if cfg[key] < 0:
            bad(key, "must be >= 0")
    if cfg["seed"] >= 2**64:
        bad("seed", "must fit in 64 bits")
    if cfg["mode"] not in ("sliding", "multi"):
        bad("mode", "must be 'sliding' or 'multi'")
    if cfg["profile"] is not None and cfg["profile"] not in PROFILES:
        bad("profile", f"unknown profile {cfg['profile']!r}")
    for key in ("eps", "trace_resolution", "bound"):
        if not cfg[key] > 0:
            bad(key, "must be positive")
    if not cfg["tol"] >= 0:
        bad("tol", "must be non-negative")
    if cfg["window_len"] is not None and cfg["window_len"] < 1:
        bad("window_len", "must be >= 1")
    try:
        gsbr_config(cfg)
    except ParameterError as exc:
        key = next((k for k in _GSBR_KEYS if re.search(rf"\b{k}\b", str(exc))), None)
        raise ConfigError(f"{key or 'config'}: {exc}", key=key) from None


def _profile_values(name):
    return dict(PROFILES[name]) if name else {}


def parse_config(path=None, overrides=None) -> dict:
    """Resolve defaults, profile, config file and overrides into one dict.

    Parameters
    ----------
    path : str or Path, optional
        YAML (or JSON) mapping of configuration keys.
    overrides : dict, optional
        Values from the command line; these win over the file.

    Raises
    ------
    ConfigError
        On parse failures (with the 1-based line number), unknown keys or
        invalid values.
    """
    file_values = {}
    if path is not None:
        file_values = _load_file(path)
    overrides = dict(overrides or {})
    for source in (file_values, overrides):
        unknown = sorted(set(source) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown configuration key {unknown[0]!r}", key=unknown[0])
    cfg = {key: spec[1] for key, spec in SCHEMA.items()}
    file_values = {k: _coerce(k, v) for k, v in file_values.items()}
    overrides = {k: _coerce(k, v) for k, v in overrides.items()}
    profile = overrides.get("profile", file_values.get("profile"))
    if profile is not None and profile not in PROFILES:
        raise ConfigError(f"profile: unknown profile {profile!r}", key="profile")
    cfg.update(_profile_values(profile))
    cfg.update(file_values)
    cfg.update(overrides)
    cfg["profile"] = profile
    # Input paths are stored absolute so a manifest replays from any directory.
    file_base = Path(path).resolve().parent if path is not None else Path.cwd()
    for key in _PATH_KEYS:
        if cfg[key] not in (None, []):
            base = Path.cwd() if key in overrides else file_base
            cfg[key] = _resolve_list(cfg[key], base)
    _validate(cfg)
    return cfg


def _resolve_list(value, base):
    if isinstance(value, list):
        return [str((base / v).resolve()) for v in value]
    return str((base / value).resolve())


def _load_file(path) -> dict:
    import yaml

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {str(path)!r} not found")
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"cannot parse {path}: {exc}", line=line) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping", line=1)
    return {str(k): v for k, v in data.items()}


def gsbr_config(cfg: dict) -> GsbrConfig:
    return GsbrConfig(**{k: cfg[k] for k in _GSBR_KEYS})


def _jobs(cfg) -> int:
    return cfg["jobs"] or (len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def _require(cfg, key):
    if cfg[key] in (None, []):
        raise ConfigError(f"{key}: required for this command", key=key)
    return cfg[key]


def _cmd_simulate(cfg, out: Path) -> dict:
    series = simulate(PRESETS[cfg["preset"]], NoiseSpec.parse(cfg["noise"]), cfg["x0"], cfg["n"],
                      cfg["seed"], bound=cfg["bound"])
    sio.write_series(out / "series.csv", series)
    return {"series": "series.csv", "series_meta": "series.json"}


def _pick_saddle(cfg):
    saddles = find_saddle(PRESETS[cfg["preset"]])
    if not saddles:
        raise ParameterError(f"no saddle found for preset {cfg['preset']!r}")
    if cfg["saddle_x"] is None:
        return saddles[-1]
    return min(saddles, key=lambda s: abs(s.x - cfg["saddle_x"]))


def _cmd_ground_truth(cfg, out: Path) -> dict:
    saddle = _pick_saddle(cfg)
    poly = trace_stable_manifold(
        PRESETS[cfg["preset"]], saddle, eps=cfg["eps"], n_back=cfg["n_back"],
        window=tuple(cfg["window"]), max_points=cfg["max_points"],
        resolution=cfg["trace_resolution"],
    )
    sio.write_polyline(out / "truth.csv", poly, meta={
        "preset": cfg["preset"],
        "saddle": list(saddle.location),
        "stable_dir": list(saddle.stable_dir),
        "eigenvalues": list(saddle.eigenvalues),
    })
    return {"truth": "truth.csv", "truth_meta": "truth.json"}


def _cmd_reconstruct(cfg, out: Path) -> dict:
    series = sio.read_series(_require(cfg, "input"))
    length = cfg["window_len"] or series.n - cfg["window_start"] + 1
    window = series.window(cfg["window_start"], length)
    res = run_chain(gsbr_config(cfg), window, RngStream(cfg["seed"], 0))
    sio.write_json(out / "samples.json", res.to_dict())
    return {"samples": "samples.json"}


def _cmd_manifold(cfg, out: Path) -> dict:
    config = gsbr_config(cfg)
    jobs = _jobs(cfg)
    if cfg["mode"] == "sliding":
        series = sio.read_series(_require(cfg, "input"))
        cloud = approximate_manifold_sliding(series, cfg["k"], config, cfg["seed"], jobs=jobs)
    else:
        if cfg["inputs"]:
            series_list = [sio.read_series(p) for p in cfg["inputs"]]
        else:
            series_list = orbit_start_series(
                PRESETS[cfg["preset"]], NoiseSpec.parse(cfg["noise"]), cfg["x0"], cfg["r"],
                cfg["n"], cfg["seed"], skip=cfg["skip"],
            )
        cloud = approximate_manifold_multi(series_list, config, cfg["seed"], jobs=jobs)
    sio.write_cloud(out / "cloud.csv", cloud)
    lo, hi = config.trunc
    bounds = cfg["grid_bounds"] or [lo, hi, lo, hi]
    grid = hpdr_grid(cloud, bounds, (cfg["grid_cols"], cfg["grid_rows"]))
    sio.write_grid(out / "hpdr.csv", grid)
    return {"cloud": "cloud.csv", "cloud_meta": "cloud.json", "hpdr": "hpdr.csv", "hpdr_meta": "hpdr.json"}


def _cmd_evaluate(cfg, out: Path) -> dict:
    cloud = sio.read_cloud(_require(cfg, "cloud"))
    truth = sio.read_polyline(_require(cfg, "truth"))
    metrics = cloud_metrics(cloud, truth, cfg["tol"], cfg["recall_tol"])
    sio.write_json(out / "metrics.json", metrics)
    return {"metrics": "metrics.json"}


_HANDLERS = {
    "simulate": _cmd_simulate,
    "ground-truth": _cmd_ground_truth,
    "reconstruct": _cmd_reconstruct,
    "manifold": _cmd_manifold,
    "evaluate": _cmd_evaluate,
}


def execute(command: str, cfg: dict, out) -> dict:
    """Run one subcommand and write its artifacts plus ``manifest.json``.

    Returns the manifest.
    """
    if command not in _HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = {}
    for key in _PATH_KEYS:
        paths = cfg[key] if isinstance(cfg[key], list) else [cfg[key]]
        for p in paths:
            if p is not None and Path(p).exists():
                inputs[str(p)] = sio.sha256(p)
    start = time.perf_counter()
    outputs = _HANDLERS[command](cfg, out)
    wall = time.perf_counter() - start
    manifest = {
        "command": command,
        "config": cfg,
        "seeds": {"master": cfg["seed"]},
        "code_version": __version__,
        "environment": {
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "wall_time_s": wall,
        "inputs": inputs,
        "outputs": {name: {"path": rel, "sha256": sio.sha256(out / rel)} for name, rel in outputs.items()},
    }
    sio.write_json(out / "manifest.json", manifest)
    return manifest


def replay(manifest_path, out) -> dict:
    """Re-execute a run from its manifest into ``out``."""
    data = sio.read_json(manifest_path)
    try:
        command, cfg = data["command"], data["config"]
    except (KeyError, TypeError):
        raise ConfigError(f"{manifest_path}: not a run manifest") from None
    cfg = parse_config(None, cfg)
    return execute(command, cfg, out)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smgsbr", description="Stable-manifold reconstruction from time series.")
    parser.add_argument("--version", action="version", version=f"smgsbr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", dest="_config", default=None, help="YAML or JSON config file")
        p.add_argument("--out", dest="_out", default=".", help="output directory")
        for key, (_, _, help_text) in SCHEMA.items():
            flags = [f"--{key}"]
            if "_" in key:
                flags.append(f"--{key.replace('_', '-')}")
            p.add_argument(*flags, dest=key, default=argparse.SUPPRESS, help=help_text)
    p = sub.add_parser("replay")
    p.add_argument("manifest")
    p.add_argument("--out", dest="_out", required=True)
    return parser


_NEG_VALUE = re.compile(r"^-[\d.]")


def _join_negative_values(argv):
    """Turn ``--opt -1,0.5`` into ``--opt=-1,0.5`` so argparse accepts it."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "=" not in tok and i + 1 < len(argv) and _NEG_VALUE.match(argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def _error_record(exc, code):
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("key", "line", "index"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    return rec


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_join_negative_values(argv))
        if args.command == "replay":
            replay(args.manifest, args._out)
        else:
            overrides = {k: v for k, v in vars(args).items() if k in SCHEMA}
            cfg = parse_config(args._config, overrides)
            execute(args.command, cfg, args._out)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        code = EXIT_VALIDATION if isinstance(exc, (ValueError, ConfigError)) else EXIT_RUNTIME
        if isinstance(exc, SmgsbrError) and not isinstance(exc, ValueError):
            code = EXIT_RUNTIME
        print(json.dumps(_error_record(exc, code), sort_keys=True), file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
