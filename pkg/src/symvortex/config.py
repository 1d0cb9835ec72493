"""Run configuration: YAML file, schema check, environment overrides.

Every block and key is checked against :data:`SCHEMA`; unknown keys are
errors.  Environment variables ``SYMVORTEX__BLOCK__KEY=value`` override file
entries (the value is parsed as YAML, so ``[1, 2]`` or ``4*pi`` both work).
Numbers may be written as arithmetic in ``pi``, e.g. ``tau: [4*pi]``.
"""

from __future__ import annotations

import ast
import copy
import math
import os
from dataclasses import fields

import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1
ENV_PREFIX = "SYMVORTEX__"

SOLVE_OPTION_KEYS = (
    "max_iters", "grad_tol", "newton_tol", "newton_max_iters", "armijo", "backtrack", "initial_step",
    "linear_tol", "damping_floor", "lm_damping", "linear_solver", "max_restarts",
)

SCHEMA: dict = {
    "schema_version": None,
    "seed": None,
    "output_dir": None,
    "geometry": {"Ns": None, "Nt": None, "Ls": None, "Lt": None, "lambda": None},
    "model": {"W": None, "tau": None, "epsilon": None},
    "solve": {"d": None, "init": {"kind": None, "seed": None, "points": None, "path": None, "levels": None},
              "options": {k: None for k in SOLVE_OPTION_KEYS}},
    "scan_tau": {"grid": None},
    "scan_eps": {"schedule": None},
    "check": {"snapshot": None, "gauge_trials": None, "residual_tol": None, "identity_tol": None},
    "index": {"g": None, "n": None, "dimG": None, "c1B": None, "k": None, "probe": None,
              "theta_low": None, "theta_high": None, "expected": None},
    "balance": {"measure": None, "tol": None, "max_iters": None, "homotopy_steps": None},
    "flow": {"hamiltonian": None, "params": "any", "x0": None, "eta0": None, "dt": None, "steps": None,
             "stop_tol": None},
}

DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "output_dir": "out",
    "geometry": {"Ns": 32, "Nt": 32, "Ls": 1.0, "Lt": 1.0, "lambda": 1.0},
    "model": {"W": [[1]], "tau": [4 * math.pi], "epsilon": 1.0},
    "solve": {"d": [1], "init": {"kind": "random"}, "options": {}},
    "check": {"gauge_trials": 5, "residual_tol": 1e-6, "identity_tol": 1e-10},
    "index": {"k": 0, "probe": False, "theta_low": 1e-6, "theta_high": 1e-5},
    "balance": {"tol": 1e-10},
    "flow": {"params": {}, "dt": 0.01, "steps": 1000},
}


def _eval_number(text: str) -> float:
    """Arithmetic on numbers and ``pi`` only."""
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
            a, b = ev(node.left), ev(node.right)
            ops = {ast.Add: a + b, ast.Sub: a - b, ast.Mult: a * b}
            if isinstance(node.op, ast.Div):
                return a / b
            if isinstance(node.op, ast.Pow):
                return a**b
            return ops[type(node.op)]
        raise ValueError
    try:
        return float(ev(ast.parse(text.strip(), mode="eval")))
    except (SyntaxError, ValueError, ZeroDivisionError):
        raise ConfigError(f"not a number: {text!r}") from None


def _numbers(value):
    """Turn ``'4*pi'``-style strings inside nested lists into floats."""
    if isinstance(value, list):
        return [_numbers(v) for v in value]
    if isinstance(value, str):
        return _eval_number(value)
    return value


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(data, schema, where: str) -> None:
    if schema == "any" or schema is None:
        return
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    for key, value in data.items():
        if key not in schema:
            raise ConfigError(f"unknown key {where + '.' if where else ''}{key}")
        sub = schema[key]
        if isinstance(sub, dict):
            _check_keys(value, sub, f"{where}.{key}" if where else key)


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() if p.lower() in _all_keys_lower() else p for p in name[len(ENV_PREFIX):].split("__")]
        path = [_canonical(p) for p in path]
        node = out
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = yaml.safe_load(environ[name])
    return out


def _all_keys(schema=SCHEMA):
    for k, v in schema.items():
        yield k
        if isinstance(v, dict):
            yield from _all_keys(v)


def _all_keys_lower():
    return {k.lower() for k in _all_keys()}


def _canonical(part: str) -> str:
    for k in _all_keys():
        if k.lower() == part.lower():
            return k
    return part


def load_config(path=None, environ=None, overrides: dict | None = None) -> dict:
    """Read, override, validate and normalise a configuration."""
    data: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a mapping at top level")
        data = loaded
    _check_keys(data, SCHEMA, "")
    env = env_overrides(environ)
    _check_keys(env, SCHEMA, "")
    cfg = _merge(DEFAULTS, data)
    cfg = _merge(cfg, env)
    if overrides:
        cfg = _merge(cfg, overrides)
    _check_keys(cfg, SCHEMA, "")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {cfg.get('schema_version')!r}")
    return normalise(cfg)


def normalise(cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    g = cfg["geometry"]
    for k in ("Ns", "Nt"):
        if not isinstance(g[k], int):
            raise ConfigError(f"geometry.{k} must be an integer")
    for k in ("Ls", "Lt"):
        g[k] = _numbers(g[k])
    g["lambda"] = _numbers(g["lambda"])
    m = cfg["model"]
    m["tau"] = _numbers(m["tau"] if isinstance(m["tau"], list) else [m["tau"]])
    m["epsilon"] = _numbers(m["epsilon"])
    if "seed" in cfg and cfg["seed"] is not None and not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    s = cfg["solve"]
    s["d"] = s["d"] if isinstance(s["d"], list) else [s["d"]]
    if any(not isinstance(v, int) for v in s["d"]):
        raise ConfigError("solve.d must be integers")
    if "scan_tau" in cfg:
        cfg["scan_tau"]["grid"] = _numbers(cfg["scan_tau"].get("grid") or [])
    if "scan_eps" in cfg:
        cfg["scan_eps"]["schedule"] = _numbers(cfg["scan_eps"].get("schedule") or [])
    return cfg


def solve_options(cfg: dict):
    from .solver import SolveOptions

    kw = dict(cfg["solve"].get("options") or {})
    valid = {f.name for f in fields(SolveOptions)}
    bad = set(kw) - valid
    if bad:
        raise ConfigError(f"unknown solve options: {sorted(bad)}")
    if cfg.get("seed") is not None:
        kw["seed"] = cfg["seed"]
    try:
        return SolveOptions(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solve options: {exc}") from None


def require_seed(cfg: dict) -> int:
    if cfg.get("seed") is None:
        raise ConfigError("a seed is required for stochastic runs (config 'seed' or --seed)")
    return int(cfg["seed"])
