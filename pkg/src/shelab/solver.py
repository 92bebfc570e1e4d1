"""Exponential Euler integration of dX = (1/2) Laplacian X dt + sigma(X) dW + b(X) dt
on the torus.

One step is X_{k+1} = P_dt[X_k + b(t_k, x, X_k) dt + sigma(t_k, x, X_k) dW_k],
the left-point discretization of the mild form. Several members (replicas,
or the two halves of a paired solve) can be advanced together; each member
reads its own noise stream unless the noise is shared.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from .grid import Field, GridError, TorusGrid, heat_multiplier
from .noise import NoiseIncrement, NoiseSpec, NoiseStream, check_alpha

COEFF_TAGS = ("power_abs", "linear", "constant", "sqrt_pos", "custom")
DRIFT_TAGS = ("zero", "constant", "linear")


class ConfigError(ValueError):
    """Invalid solver configuration."""


class SolverError(RuntimeError):
    """Non-finite values during integration.

    Attributes
    ----------
    step_index : int
        Index of the step that produced NaN or Inf.
    partial : RunResult or None
        Everything recorded up to the last good step.
    """

    def __init__(self, msg, step_index, partial=None):
        super().__init__(msg)
        self.step_index = step_index
        self.partial = partial


# ------------------------------------------------------------ coefficients

@dataclass(frozen=True)
class CoefficientSpec:
    """Diffusion sigma(t, x, u) and drift b(t, x, u) with declared metadata.

    ``x`` is passed as the tuple of grid coordinate arrays. ``gamma_meta``
    is the declared Hoelder exponent of sigma and ``growth_c`` the constant
    in |sigma| + |b| <= growth_c (1 + |u|).
    """

    sigma: Callable
    b: Callable
    gamma_meta: float
    growth_c: float = 1.0
    tag: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in COEFF_TAGS:
            raise ConfigError(f"coefficient tag must be one of {COEFF_TAGS}")
        if not 0 < self.gamma_meta <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if not self.growth_c > 0:
            raise ConfigError("growth_c must be > 0")

    def describe(self) -> dict:
        d = {"tag": self.tag, "gamma": self.gamma_meta, "growth_c": self.growth_c}
        d.update(self.params)
        if self.tag == "custom":
            d["sigma"] = getattr(self.sigma, "__qualname__", repr(self.sigma))
            d["b"] = getattr(self.b, "__qualname__", repr(self.b))
        return d

    def holder_ratio(self, samples: int = 2000, scale: float = 10.0, seed: int = 0) -> float:
        """max |sigma(u) - sigma(v)| / |u - v|^gamma over random pairs."""
        rng = np.random.default_rng(seed)
        u = scale * rng.standard_normal(samples)
        # include close pairs, where the Hoelder bound is tight
        v = u + np.concatenate([scale * rng.standard_normal(samples // 2),
                                np.geomspace(1e-8, 1, samples - samples // 2)
                                * rng.choice([-1, 1], samples - samples // 2)])
        u[: samples // 10] = 0.0
        d = np.abs(u - v)
        keep = d > 0
        s = lambda w: np.broadcast_to(self.sigma(0.0, (np.zeros_like(w),), w), w.shape)
        return float(np.max(np.abs(s(u) - s(v))[keep] / d[keep] ** self.gamma_meta))

    def growth_ratio(self, samples: int = 2000, scale: float = 100.0, seed: int = 0) -> float:
        """max (|sigma(u)| + |b(u)|) / (growth_c (1 + |u|)) over random u."""
        rng = np.random.default_rng(seed)
        u = scale * rng.standard_normal(samples)
        x = (np.zeros_like(u),)
        s = np.broadcast_to(self.sigma(0.0, x, u), u.shape)
        b = np.broadcast_to(self.b(0.0, x, u), u.shape)
        return float(np.max((np.abs(s) + np.abs(b)) / (self.growth_c * (1 + np.abs(u)))))


def _drift(kind: str, value: float):
    if kind == "zero":
        return lambda t, x, u: 0.0
    if kind == "constant":
        return lambda t, x, u: value
    if kind == "linear":
        return lambda t, x, u: value * u
    raise ConfigError(f"drift must be one of {DRIFT_TAGS}, got {kind!r}")


def builtin_coefficients(sigma: str, gamma: float | None = None, sigma_value: float = 1.0,
                         drift: str = "zero", drift_value: float = 0.0) -> CoefficientSpec:
    """Coefficient presets.

    sigma: "power_abs" (|u|^gamma), "linear" (sigma_value * u), "constant"
    (sigma_value, 1 by default), "sqrt_pos" (sqrt(max(u, 0))). drift: "zero",
    "constant" (drift_value) or "linear" (drift_value * u).
    """
    if sigma == "power_abs":
        if gamma is None or not 0 < gamma <= 1:
            raise ConfigError("power_abs needs gamma in (0, 1]")
        g = float(gamma)
        sig = lambda t, x, u: np.abs(u) ** g
    elif sigma == "linear":
        g = 1.0
        c = float(sigma_value)
        sig = lambda t, x, u: c * u
    elif sigma == "constant":
        g = 1.0
        c = float(sigma_value)
        sig = lambda t, x, u: c
    elif sigma == "sqrt_pos":
        g = 0.5
        sig = lambda t, x, u: np.sqrt(np.maximum(u, 0.0))
    else:
        raise ConfigError(f"sigma must be one of {COEFF_TAGS[:-1]}, got {sigma!r}")
    b = _drift(drift, float(drift_value))
    growth = max(1.0, abs(sigma_value) if sigma in ("constant", "linear") else 1.0) \
        + abs(drift_value)
    params = {"drift": drift, "drift_value": float(drift_value)}
    if sigma in ("constant", "linear"):
        params["sigma_value"] = float(sigma_value)
    return CoefficientSpec(sig, b, g, growth, sigma, params)


# ------------------------------------------------------------ configuration

def periodized_gaussian(grid: TorusGrid, s2: float, center=None, amplitude: float = 1.0,
                        images: int = 3) -> Field:
    """amplitude * sum over images of the Gaussian density with variance s2."""
    if center is None:
        center = (grid.L / 2,) * grid.q
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.q,))
    total = np.ones(grid.shape)
    for c, a in zip(grid.coords, center):
        acc = np.zeros(grid.shape)
        for k in range(-images, images + 1):
            d = c - a + k * grid.L
            acc += np.exp(-d * d / (2 * s2)) / np.sqrt(2 * np.pi * s2)
        total = total * acc
    return Field(grid, amplitude * total)


IC_PROFILES = ("zero", "constant", "gaussian", "sine")


def initial_field(grid: TorusGrid, ic) -> Field:
    """Resolve an initial condition: a Field, a profile name or a dict
    {"profile": name, ...parameters}."""
    if isinstance(ic, Field):
        if ic.grid != grid:
            raise ConfigError("initial field lives on a different grid")
        return ic
    if isinstance(ic, str):
        ic = {"profile": ic}
    if not isinstance(ic, dict) or "profile" not in ic:
        raise ConfigError("ic must be a Field, a profile name or a dict with 'profile'")
    p = dict(ic)
    name = p.pop("profile")
    if name == "zero":
        return Field.constant(grid, 0.0)
    if name == "constant":
        return Field.constant(grid, float(p.get("value", 1.0)))
    if name == "gaussian":
        return periodized_gaussian(grid, float(p.get("variance", 0.01)), p.get("center"),
                                   float(p.get("amplitude", 1.0)))
    if name == "sine":
        k = int(p.get("mode", 1))
        amp = float(p.get("amplitude", 1.0))
        return Field(grid, amp * np.sin(2 * np.pi * k * grid.coords[0] / grid.L))
    raise ConfigError(f"unknown ic profile {name!r}; expected one of {IC_PROFILES}")


def _describe_ic(ic):
    if isinstance(ic, Field):
        return {"field_sha256": hashlib.sha256(ic.values.tobytes()).hexdigest()}
    return ic if isinstance(ic, dict) else {"profile": ic}


@dataclass
class SolveConfig:
    grid: TorusGrid
    noise: NoiseSpec
    coeff: CoefficientSpec
    T_end: float
    dt: float
    ic: object = "zero"
    history_depth: int = 0
    truncation_K: float | None = None
    snapshot_every: int | None = None
    start_step: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if not self.T_end > 0:
            raise ConfigError("T_end must be > 0")
        check_alpha(self.noise.alpha, self.grid.q)
        n = self.T_end / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError("T_end must be an integer multiple of dt")
        if self.history_depth < 0:
            raise ConfigError("history_depth must be >= 0")
        if self.truncation_K is not None and not self.truncation_K > 0:
            raise ConfigError("truncation_K must be > 0")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T_end / self.dt))

    @property
    def dt_advisory_ok(self) -> bool:
        return self.dt <= self.grid.h ** 2 / 2

    def describe(self) -> dict:
        return {"grid": self.grid.describe(), "noise": self.noise.describe(),
                "coeff": self.coeff.describe(), "T_end": self.T_end, "dt": self.dt,
                "ic": _describe_ic(self.ic), "history_depth": self.history_depth,
                "truncation_K": self.truncation_K, "snapshot_every": self.snapshot_every,
                "start_step": self.start_step}

    def digest(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


# ------------------------------------------------------------ results

@dataclass
class RunResult:
    snapshots: list
    history: list
    diagnostics: dict
    provenance: dict

    @property
    def final(self) -> Field:
        return self.snapshots[-1][1]

    @property
    def final_time(self) -> float:
        return self.snapshots[-1][0]


# ------------------------------------------------------------ stepping

def _apply_step(u, t, dw, coeff, coords, dt, mult, q):
    axes = tuple(range(-q, 0))
    v = u + coeff.b(t, coords, u) * dt + coeff.sigma(t, coords, u) * dw
    shape = u.shape[-q:]
    return np.fft.irfftn(np.fft.rfftn(v, axes=axes) * mult, s=shape, axes=axes)


def step(x_k: Field, t_k: float, dW: NoiseIncrement, cfg: SolveConfig,
         step_index: int | None = None) -> Field:
    """One exponential Euler step P_dt[X + b dt + sigma dW]."""
    if abs(dW.dt - cfg.dt) > 1e-15 * cfg.dt:
        raise ConfigError("increment dt does not match cfg.dt")
    grid = cfg.grid
    with np.errstate(over="ignore", invalid="ignore"):
        out = _apply_step(x_k.values, t_k, dW.field.values, cfg.coeff, grid.coords, cfg.dt,
                          heat_multiplier(grid, cfg.dt), grid.q)
    if not np.all(np.isfinite(out)):
        raise SolverError("non-finite values at step %s" % step_index, step_index)
    return Field(grid, out)


def _integrate(cfg: SolveConfig, ics: np.ndarray, streams: list, shared: bool, label: str):
    """Advance a batch of members. Returns per-member result pieces."""
    grid = cfg.grid
    B = ics.shape[0]
    mult = heat_multiplier(grid, cfg.dt)
    coords = grid.coords
    n = cfg.n_steps
    every = cfg.snapshot_every or n
    u = np.array(ics, dtype=float)
    times = [0.0]
    pair = shared and B == 2
    sup = [np.max(np.abs(u.reshape(B, -1)), axis=1)]
    diff = [float(np.max(np.abs(u[0] - u[1])))] if pair else None
    mean = [u.reshape(B, -1).mean(axis=1)]
    snaps = [(0.0, u.copy())]
    hist = deque([(0.0, u.copy())], maxlen=cfg.history_depth + 1)
    hit = None
    failure = None
    k = 0
    for k in range(n):
        t = k * cfg.dt
        idx = cfg.start_step + k
        if shared:
            dw = streams[0].increment_values(idx)
        else:
            eps, cs = zip(*(s.normals(idx) for s in streams))
            for s in streams:
                s.draws += 1
            dw = streams[0].synthesize(np.array(eps), np.array(cs))
        with np.errstate(over="ignore", invalid="ignore"):
            new = _apply_step(u, t, dw, cfg.coeff, coords, cfg.dt, mult, grid.q)
        if not np.all(np.isfinite(new)):
            failure = k
            break
        u = new
        tn = (k + 1) * cfg.dt
        times.append(tn)
        flat = u.reshape(B, -1)
        sup.append(np.max(np.abs(flat), axis=1))
        mean.append(flat.mean(axis=1))
        if pair:
            diff.append(float(np.max(np.abs(u[0] - u[1]))))
        if cfg.history_depth:
            hist.append((tn, u.copy()))
        if (k + 1) % every == 0 or k + 1 == n:
            snaps.append((tn, u.copy()))
        if cfg.truncation_K is not None and np.max(sup[-1]) > cfg.truncation_K:
            hit = tn
            if snaps[-1][0] != tn:
                snaps.append((tn, u.copy()))
            break
    if failure is not None and snaps[-1][0] != times[-1]:
        snaps.append((times[-1], u.copy()))
    if not cfg.history_depth:
        hist = deque([snaps[-1]], maxlen=1)
    prov = {
        "config_digest": cfg.digest(), "code_version": __version__,
        "seed": int(cfg.noise.seed), "start_step": cfg.start_step,
        "steps_completed": len(times) - 1, "n_steps": n, "dt_advisory_ok": cfg.dt_advisory_ok,
        "zero_mode_policy": cfg.noise.zero_mode_policy, "mode": label,
        "noise_draws": [s.draws for s in streams],
    }
    results = []
    for b in range(B):
        sid = int(streams[0 if shared else b].spec.stream_id)
        p = dict(prov, stream_id=sid, seed_triple=[int(cfg.noise.seed), sid, cfg.start_step])
        diag = {"times": np.array(times), "sup_norm": np.array([s[b] for s in sup]),
                "mean": np.array([m[b] for m in mean]), "truncation_hit_time": hit,
                "failed_step": failure}
        if pair:
            diag["pair_diff"] = np.array(diff)
        results.append(RunResult([(t, Field(grid, a[b])) for t, a in snaps],
                                 [(t, Field(grid, a[b])) for t, a in hist], diag, p))
    if failure is not None:
        raise SolverError(f"non-finite values at step {cfg.start_step + failure} "
                          f"(t = {failure * cfg.dt:.6g}); last good snapshot kept",
                          cfg.start_step + failure, results if B > 1 else results[0])
    return results


def solve(cfg: SolveConfig) -> RunResult:
    """Integrate to T_end with the noise stream named in cfg.noise."""
    ic = initial_field(cfg.grid, cfg.ic).values[None]
    return _integrate(cfg, ic, [NoiseStream(cfg.grid, cfg.noise, cfg.dt)], False, "single")[0]


def solve_ensemble(cfg: SolveConfig, stream_ids, ics=None) -> list:
    """Independent replicas advanced together, one stream_id each.

    Member r equals solve() with cfg.noise.stream_id = stream_ids[r].
    """
    stream_ids = [int(s) for s in stream_ids]
    if len(set(stream_ids)) != len(stream_ids):
        raise ConfigError("stream ids must not repeat within an ensemble")
    if ics is None:
        base = initial_field(cfg.grid, cfg.ic).values
        ics = np.broadcast_to(base, (len(stream_ids),) + cfg.grid.shape)
    streams = [NoiseStream(cfg.grid, cfg.noise.with_stream(s), cfg.dt) for s in stream_ids]
    return _integrate(cfg, np.asarray(ics), streams, False, "ensemble")


@dataclass
class PairedResult:
    first: RunResult
    second: RunResult
    times: np.ndarray
    d: np.ndarray
    noise_draws: int

    def __iter__(self):
        return iter((self.first, self.second, self.d))


def paired_solve(cfg: SolveConfig, ic1, ic2) -> PairedResult:
    """Advance two initial conditions on one shared noise realization.

    Both members read the same increment at every step (one draw per
    step in total) and d(t) = sup_x |X1(t, x) - X2(t, x)| is recorded
    every step.
    """
    a = initial_field(cfg.grid, ic1).values
    b = initial_field(cfg.grid, ic2).values
    stream = NoiseStream(cfg.grid, cfg.noise, cfg.dt)
    r1, r2 = _integrate(cfg, np.stack([a, b]), [stream], True, "paired")
    return PairedResult(r1, r2, r1.diagnostics["times"], r1.diagnostics["pair_diff"],
                        stream.draws)
