"""Experiment configuration files.

A config is a YAML (or JSON) mapping. Top-level keys:

    command:      simulate | paired | sweep | verify_kernels | verify_yw | analyze
    master_seed:  unsigned 64-bit integer (default 0)
    output_dir:   root directory for outputs (default "out")
    grid:         {q, L, N}
    noise:        {alpha, zero_mode_policy, include_constant_part, stream_id}
    coefficients: {sigma, gamma, sigma_value, drift, drift_value}
    solve:        {T_end, dt, ic, history_depth, truncation_K, snapshot_every}
    paired:       {ic1, ic2, perturbation}
    sweep:        {alphas, gammas, replicas, perturbation, threshold}
    kernels:      {checks, resolution}
    yw:           {n, quad_resolution, gamma, alpha, eps1, eps0, M}
    analyze:      {input, lags, n, K0, gamma, alpha, eps1, eps0, monitor_n}

Only the sections a command needs are read; unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import yaml

from .grid import GridError, make_grid
from .noise import NoiseError, NoiseSpec, check_alpha
from .solver import ConfigError, SolveConfig, builtin_coefficients
from .yw import ConstraintError, eps_grid

COMMANDS = ("simulate", "paired", "sweep", "verify_kernels", "verify_yw", "analyze")

SCHEMA = {
    "": {"command", "master_seed", "output_dir", "grid", "noise", "coefficients", "solve",
         "paired", "sweep", "kernels", "yw", "analyze"},
    "grid": {"q", "L", "N"},
    "noise": {"alpha", "zero_mode_policy", "include_constant_part", "stream_id"},
    "coefficients": {"sigma", "gamma", "sigma_value", "drift", "drift_value"},
    "solve": {"T_end", "dt", "ic", "history_depth", "truncation_K", "snapshot_every"},
    "paired": {"ic1", "ic2", "perturbation"},
    "sweep": {"alphas", "gammas", "replicas", "perturbation", "threshold"},
    "kernels": {"checks", "resolution"},
    "yw": {"n", "quad_resolution", "gamma", "alpha", "eps1", "eps0", "M"},
    "analyze": {"input", "lags", "n", "K0", "gamma", "alpha", "eps1", "eps0", "monitor_n"},
}

NEEDS = {
    "simulate": ("grid", "noise", "coefficients", "solve"),
    "paired": ("grid", "noise", "coefficients", "solve"),
    "sweep": ("grid", "noise", "solve", "sweep"),
    "verify_kernels": (),
    "verify_yw": (),
    "analyze": ("analyze",),
}


@dataclass
class ExperimentConfig:
    command: str
    parameters: dict
    output_dir: str = "out"
    master_seed: int = 0
    source: str | None = None
    built: dict = field(default_factory=dict, repr=False)

    def canonical(self) -> dict:
        return {"command": self.command, "master_seed": int(self.master_seed),
                "parameters": self.parameters}

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def run_dir(self) -> str:
        return os.path.join(self.output_dir, f"{self.command}-{self.digest()[:12]}")


def _fail(path, msg):
    raise ConfigError(f"{path}: {msg}" if path else msg)


def _section(params, name, required):
    sec = params.get(name)
    if sec is None:
        if required:
            _fail(name, "section is required for this command")
        return {}
    if not isinstance(sec, dict):
        _fail(name, "must be a mapping")
    unknown = set(sec) - SCHEMA[name]
    if unknown:
        _fail(f"{name}.{sorted(unknown)[0]}", "unknown key")
    return sec


def _num(sec, name, key, default=None, kind=float):
    v = sec.get(key, default)
    if v is None:
        _fail(f"{name}.{key}", "is required")
    try:
        out = kind(v)
    except (TypeError, ValueError):
        _fail(f"{name}.{key}", f"expected {kind.__name__}, got {v!r}")
    if kind is int and out != v:
        _fail(f"{name}.{key}", f"expected an integer, got {v!r}")
    return out


def build_grid(params):
    sec = _section(params, "grid", True)
    try:
        return make_grid(_num(sec, "grid", "q", 1, int), _num(sec, "grid", "L", 1.0),
                         _num(sec, "grid", "N", None, int))
    except GridError as exc:
        _fail("grid", str(exc))


def build_noise(params, q, seed):
    sec = _section(params, "noise", True)
    alpha = _num(sec, "noise", "alpha")
    try:
        check_alpha(alpha, q)
        return NoiseSpec(alpha, sec.get("zero_mode_policy", "riesz_matched"),
                         bool(sec.get("include_constant_part", False)), int(seed),
                         _num(sec, "noise", "stream_id", 0, int))
    except NoiseError as exc:
        _fail("noise.alpha" if "alpha" in str(exc) else "noise", str(exc))


def build_coefficients(params):
    sec = _section(params, "coefficients", True)
    try:
        return builtin_coefficients(sec.get("sigma", "power_abs"), sec.get("gamma"),
                                    float(sec.get("sigma_value", 1.0)), sec.get("drift", "zero"),
                                    float(sec.get("drift_value", 0.0)))
    except ConfigError as exc:
        _fail("coefficients", str(exc))


def build_solve(params, grid, noise, coeff):
    sec = _section(params, "solve", True)
    try:
        return SolveConfig(grid, noise, coeff, _num(sec, "solve", "T_end"),
                           _num(sec, "solve", "dt"), sec.get("ic", "zero"),
                           _num(sec, "solve", "history_depth", 0, int),
                           sec.get("truncation_K"), sec.get("snapshot_every"))
    except (ConfigError, NoiseError) as exc:
        _fail("solve", str(exc))


def _check_eps(sec, name):
    keys = ("gamma", "alpha", "eps1", "eps0")
    if not any(k in sec for k in keys):
        return None
    vals = [_num(sec, name, k) for k in keys]
    try:
        return eps_grid(*vals)
    except ConstraintError as exc:
        _fail(f"{name}.eps1" if "ε_1" in str(exc) else f"{name}.eps0"
              if "ε_0" in str(exc) else name, str(exc))


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every parameter the command will use and build the objects."""
    p = cfg.parameters
    if cfg.command not in COMMANDS:
        _fail("command", f"must be one of {COMMANDS}, got {cfg.command!r}")
    for name in p:
        if name not in SCHEMA[""]:
            _fail(name, "unknown key")
    needs = NEEDS[cfg.command]
    b = {}
    if "grid" in needs:
        b["grid"] = build_grid(p)
    if "noise" in needs:
        b["noise"] = build_noise(p, b["grid"].q, cfg.master_seed)
    if cfg.command in ("simulate", "paired"):
        b["coeff"] = build_coefficients(p)
        b["solve"] = build_solve(p, b["grid"], b["noise"], b["coeff"])
    if cfg.command == "sweep":
        b["solve"] = build_solve(p, b["grid"], b["noise"], builtin_coefficients("linear"))
        sec = _section(p, "sweep", True)
        for key in ("alphas", "gammas"):
            v = sec.get(key)
            if not isinstance(v, list) or not v:
                _fail(f"sweep.{key}", "must be a non-empty list")
        for a in sec["alphas"]:
            try:
                check_alpha(float(a), b["grid"].q)
            except NoiseError as exc:
                _fail("sweep.alphas", str(exc))
        for g in sec["gammas"]:
            if not 0 < float(g) <= 1:
                _fail("sweep.gammas", "gamma must lie in (0, 1]")
        if _num(sec, "sweep", "replicas", 10, int) < 1:
            _fail("sweep.replicas", "must be >= 1")
    if cfg.command == "paired":
        _section(p, "paired", False)
    if cfg.command == "verify_kernels":
        sec = _section(p, "kernels", False)
        from .runner import KERNEL_SUITES
        for lem in sec.get("checks", list(KERNEL_SUITES)):
            if lem not in KERNEL_SUITES:
                _fail("kernels.checks", f"unknown check {lem!r}; choose from {list(KERNEL_SUITES)}")
    if cfg.command == "verify_yw":
        sec = _section(p, "yw", False)
        ns = sec.get("n", [1, 2, 3, 4, 5, 6])
        if not isinstance(ns, list) or not all(isinstance(n, int) and n >= 1 for n in ns):
            _fail("yw.n", "must be a list of integers >= 1")
        b["eps"] = _check_eps(sec, "yw")
    if cfg.command == "analyze":
        sec = _section(p, "analyze", True)
        inp = sec.get("input")
        if not inp or not os.path.isdir(inp):
            _fail("analyze.input", f"directory {inp!r} does not exist")
        b["eps"] = _check_eps(sec, "analyze")
    cfg.built = b
    return cfg


def parse_text(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}: parse error{where}: {getattr(exc, 'problem', exc)}") from None
    if isinstance(doc, dict) and "manifest_version" in doc and "config" in doc:
        doc = doc["config"]
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    doc = dict(doc)
    command = doc.pop("command", None)
    if command is None:
        _fail("command", "is required")
    seed = doc.pop("master_seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        _fail("master_seed", "must be an unsigned 64-bit integer")
    out = doc.pop("output_dir", "out")
    return ExperimentConfig(command, doc, str(out), seed, source)


def load_config(path, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Read, apply overrides and validate a config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    cfg = parse_text(text, str(path))
    if seed is not None:
        cfg.master_seed = int(seed)
    if out is not None:
        cfg.output_dir = out
    return validate(cfg)
