"""Measurements on the difference u = X1 - X2 of two solutions.

Histories are sequences of (t, Field) pairs in increasing time, as found
in RunResult.history or RunResult.snapshots.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.stats import linregress

from .grid import Field, TorusGrid, heat_semigroup_apply, make_grid, spectral_gradient
from .noise import NoiseSpec
from .quadrature import kernel_weights, riesz_form
from .solver import SolveConfig, SolverError, builtin_coefficients, paired_solve
from .yw import EpsGrid, bin_log_envelope, log_a, log_m


class AnalysisError(ValueError):
    """Request that the available data cannot answer."""


# ------------------------------------------------------------ history access

def _times(history):
    return np.array([t for t, _ in history], dtype=float)


def _snap_tol(times):
    if times.size < 2:
        return 1e-12
    return 0.5 * float(np.min(np.diff(times))) + 1e-12


def nearest_snapshot(history, t: float):
    """Return (index, time, field) of the stored snapshot nearest to t.

    Raises AnalysisError when t lies outside the stored range by more
    than half a snapshot spacing.
    """
    if not history:
        raise AnalysisError("empty history")
    times = _times(history)
    tol = _snap_tol(times)
    if t < times[0] - tol or t > times[-1] + tol:
        raise AnalysisError(f"time {t:.6g} is outside the stored history "
                            f"[{times[0]:.6g}, {times[-1]:.6g}] (history_depth too small?)")
    k = int(np.argmin(np.abs(times - t)))
    return k, float(times[k]), history[k][1]


# ------------------------------------------------------------ splitting

@dataclass
class SplitResult:
    delta: float
    u1: Field
    u2: Field
    grad_u1: list
    t: float
    snap_distance: float


def split_u(history, t: float, delta: float) -> SplitResult:
    """u1 = P_delta u((t - delta)^+), u2 = u(t) - u1, and the gradient of u1.

    For t < delta the flow time is t instead of delta, so u1 is the heat
    flow of the initial data and u2 carries only the noise integral. Both
    times snap to the nearest stored snapshot; the distance between the
    requested and used lookback time is reported as snap_distance.
    """
    if delta < 0:
        raise AnalysisError("delta must be >= 0")
    _, tu, u = nearest_snapshot(history, t)
    back = max(t - delta, 0.0)
    _, tb, ub = nearest_snapshot(history, back)
    u1 = u if delta == 0 else heat_semigroup_apply(ub, min(delta, t))
    u2 = Field(u.grid, u.values - u1.values)
    return SplitResult(delta, u1, u2, spectral_gradient(u1), tu, abs(tb - back))


# ------------------------------------------------------------ x-hat selection

def _ball_offsets(grid: TorusGrid, radius: float):
    r = int(math.floor(radius / grid.h + 1e-9))
    r = min(r, grid.N // 2)
    rng = np.arange(-r, r + 1)
    mesh = np.meshgrid(*([rng] * grid.q), indexing="ij")
    offs = np.stack([m.ravel() for m in mesh], axis=1)
    d = np.sqrt(np.sum((offs * grid.h) ** 2, axis=1))
    offs = offs[d <= radius + 1e-12 * grid.h]
    # distinct sites only once the ball wraps around the torus
    _, keep = np.unique(offs % grid.N, axis=0, return_index=True)
    return offs[np.sort(keep)]


def xhat_all(u: Field, radius: float) -> tuple:
    """For every site x, the site in the ball of given radius around x with
    the smallest |u|; ties go to the smallest first coordinate, then the
    second. Returns a tuple of q index arrays of grid shape."""
    grid = u.grid
    absu = np.abs(u.values)
    idx = np.indices(grid.shape)
    offs = _ball_offsets(grid, radius) if radius >= grid.h else np.zeros((1, grid.q), int)
    best_val = np.full(grid.shape, np.inf)
    best_idx = [np.zeros(grid.shape, dtype=int) for _ in range(grid.q)]
    for off in offs:
        cand = [(idx[a] + off[a]) % grid.N for a in range(grid.q)]
        val = absu[tuple(cand)]
        better = val < best_val
        tie = val == best_val
        if np.any(tie):
            lex = np.zeros(grid.shape, dtype=bool)
            undecided = np.ones(grid.shape, dtype=bool)
            for a in range(grid.q):
                lex |= undecided & (cand[a] < best_idx[a])
                undecided &= cand[a] == best_idx[a]
            better |= tie & lex
        best_val = np.where(better, val, best_val)
        for a in range(grid.q):
            best_idx[a] = np.where(better, cand[a], best_idx[a])
    return tuple(best_idx)


def xhat_select(u: Field, x, radius: float) -> tuple:
    """Site (index tuple) minimizing |u| within distance radius of site x."""
    x = tuple(int(v) for v in np.atleast_1d(x))
    sel = xhat_all(u, radius)
    return tuple(int(s[x]) for s in sel)


# ------------------------------------------------------------ bump functions

def _bump_profile(r2):
    with np.errstate(divide="ignore", over="ignore"):
        inside = r2 < 1
        return np.where(inside, np.exp(-1.0 / np.where(inside, 1 - r2, 1.0)), 0.0)


_BUMP_MASS = {
    1: integrate.quad(lambda y: math.exp(-1 / (1 - y * y)), -1, 1, epsabs=1e-14, epsrel=1e-12)[0],
    2: 2 * math.pi * integrate.quad(lambda r: r * math.exp(-1 / (1 - r * r)), 0, 1,
                                    epsabs=1e-14, epsrel=1e-12)[0],
}


def bump(y, q: int = 1):
    """Phi(y) = c exp(-1/(1 - |y|^2)) on the unit ball, with unit integral."""
    y = np.asarray(y, dtype=float)
    r2 = y * y if q == 1 else np.sum(y * y, axis=-1)
    return _bump_profile(r2) / _BUMP_MASS[q]


def _check_resolved(grid: TorusGrid, m: float):
    if not m > 0:
        raise AnalysisError("bump scale m must be > 0")
    if m * grid.h > 1:
        raise AnalysisError(f"under-resolved bump: m*h = {m * grid.h:.3g} > 1")


def bump_test_fn(m: float, x0, grid: TorusGrid) -> Field:
    """Phi^m_{x0}(y) = m^q Phi(m (y - x0)) on the grid (torus displacement)."""
    _check_resolved(grid, m)
    d = grid.displacement(x0)
    r2 = sum((m * a) ** 2 for a in d)
    return Field(grid, m ** grid.q * _bump_profile(r2) / _BUMP_MASS[grid.q])


def default_psi(grid: TorusGrid) -> Field:
    """The bump rescaled to the central quarter of the domain."""
    return bump_test_fn(8.0 / grid.L, (grid.L / 2,) * grid.q, grid)


def _bump_kernel(grid: TorusGrid, m: float) -> np.ndarray:
    """Phi^m centred at the origin, periodized, in FFT order."""
    return bump_test_fn(m, (0.0,) * grid.q, grid).values


def bump_pairing(u: Field, m: float) -> np.ndarray:
    """<u, Phi^m_x> for every site x by circular convolution."""
    grid = u.grid
    k = _bump_kernel(grid, m)
    ax = tuple(range(grid.q))
    conv = np.fft.irfftn(np.fft.rfftn(u.values) * np.fft.rfftn(k), s=grid.shape, axes=ax)
    return conv * grid.cell_volume


@dataclass
class IntPhiResult:
    alpha: float
    q: int
    m: np.ndarray
    values: np.ndarray
    singular: np.ndarray
    slope: float
    singular_slope: float

    @property
    def doubling_ratios(self) -> np.ndarray:
        return self.values[1:] / self.values[:-1]


def intphi_value(m: float, alpha: float, q: int = 1, resolution: int = 256):
    """(total, singular part) of int int Phi^m Phi^m (|w-z|^-alpha + 1),
    on a grid of spacing 1/(m resolution) covering the support."""
    h = 1.0 / (m * resolution)
    ax = h * np.arange(-resolution, resolution + 1)
    if q == 1:
        f = m * bump(m * ax)
    else:
        pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
        f = m ** 2 * bump(m * pts, 2)
    sing, plus = riesz_form(f, f, h, alpha)
    return sing + plus, sing


def intphi_check(m_list, alpha: float, q: int = 1, resolution: int | None = None) -> IntPhiResult:
    """Quadrature of int int Phi^m Phi^m (|w-z|^-alpha + 1) over m and the
    fitted log-log slope; the slope of the singular part alone is reported
    as well."""
    if not 0 < alpha < min(2, q):
        raise AnalysisError("alpha must lie in (0, 2∧q)")
    res = resolution or (2048 if q == 1 else 48)
    ms = np.asarray(m_list, dtype=float)
    vals = np.array([intphi_value(m, alpha, q, res) for m in ms])
    slope = float(np.polyfit(np.log(ms), np.log(vals[:, 0]), 1)[0])
    sslope = float(np.polyfit(np.log(ms), np.log(vals[:, 1]), 1)[0])
    return IntPhiResult(alpha, q, ms, vals[:, 0], vals[:, 1], slope, sslope)


# ------------------------------------------------------------ gradient bins

@dataclass
class BinOccupancy:
    n: int
    i: int
    beta_i: float
    measure: float
    envelope_log: float
    admissible_measure: float


def _check_scales(n: int, grid: TorusGrid):
    m = math.exp(log_m(n + 1))
    if n < 1 or n > 6:
        raise AnalysisError(f"scales for n={n} are not representable on a grid (use 1 <= n <= 6)")
    if m * grid.h > 1:
        raise AnalysisError(f"n={n}: bump scale m_(n+1) = {m:.4g} is under-resolved "
                            f"(m*h = {m * grid.h:.3g} > 1)")
    return m


def gradient_bins(history, t: float, n: int, grid_constants: EpsGrid, K0: float | None = None,
                  alpha: float | None = None) -> list:
    """Occupancy of the gradient bins J_{n,i} at time t.

    A site x is admissible when |<u_t, Phi^{m_(n+1)}_x>| <= a_n and x lies
    in the box of half-width K0 around the domain centre (default: the
    whole domain). Admissible sites go to bin i = #{j in 1..L :
    g < a_n^beta_j / 4} where g = |grad u_{1,a_n}(t, xhat_n(t, x))| and
    xhat_n selects within radius sqrt(a_n). The bin-count envelope is
    given in log form per bin.
    """
    _, _, u = nearest_snapshot(history, t)
    grid = u.grid
    m = _check_scales(n, grid)
    eg = grid_constants
    a_n = math.exp(log_a(n))
    K0 = grid.L / 2 if K0 is None else float(K0)
    alpha = eg.alpha if alpha is None else alpha
    F = bump_pairing(u, m)
    centre = grid.L / 2
    inbox = np.ones(grid.shape, dtype=bool)
    for c in grid.coords:
        inbox &= np.abs(c - centre) <= K0 + 1e-12
    adm = (np.abs(F) <= a_n) & inbox
    split = split_u(history, t, a_n)
    gmag = np.sqrt(sum(gc.values ** 2 for gc in split.grad_u1))
    sel = xhat_all(u, math.sqrt(a_n))
    g = gmag[sel]
    thresholds = np.exp(eg.betas[1: eg.L + 1] * log_a(n)) / 4  # T_1 .. T_L, decreasing
    asc = thresholds[::-1]
    counts_above = eg.L - np.searchsorted(asc, g[adm], side="right")
    occ = np.bincount(counts_above, minlength=eg.L + 1)
    vol = grid.cell_volume
    adm_measure = float(np.count_nonzero(adm) * vol)
    out = []
    for i in range(eg.L + 1):
        env = bin_log_envelope(n, eg.betas[i], eg.betas[i + 1], eg.gamma, alpha, eg.eps1,
                                   K0, grid.q)
        out.append(BinOccupancy(n, i, float(eg.betas[i]), float(occ[i] * vol), env, adm_measure))
    return out


def bins_csv(bins) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "i", "beta_i", "measure", "envelope_log", "admissible_measure"])
    for b in bins:
        w.writerow([b.n, b.i, repr(b.beta_i), repr(b.measure), repr(b.envelope_log),
                    repr(b.admissible_measure)])
    return buf.getvalue()


# ------------------------------------------------------------ I^n monitor

def _local_form(g: np.ndarray, grid: TorusGrid, m: float, alpha: float) -> np.ndarray:
    """Q(x) = sum_{w,z} g(w) g(z) Phi_x(w) Phi_x(z) M(w - z) for all sites x.

    M holds the singular weights plus h^(2q) for the +1 part. The sum is
    organized by lag d = w - z, one circular correlation per lag.
    """
    phi = _bump_kernel(grid, m)
    vol = grid.cell_volume
    ax = tuple(range(grid.q))
    # +1 part: (sum_w g(w) Phi_x(w) h^q)^2
    pair = np.fft.irfftn(np.fft.rfftn(g) * np.conj(np.fft.rfftn(phi)), s=grid.shape,
                         axes=ax) * vol
    out = pair ** 2
    M = kernel_weights(grid.shape, grid.h, alpha, periodic=True)
    # lags between two support points: autocorrelation of the support indicator
    ind = (phi > 0).astype(float)
    auto = np.fft.irfftn(np.abs(np.fft.rfftn(ind)) ** 2, s=grid.shape, axes=ax)
    lags = np.argwhere(auto > 0.5)
    for d in lags:
        d = tuple(int(v) for v in d)
        w = phi * np.roll(phi, d, axis=ax)
        if not np.any(w):
            continue
        hd = g * np.roll(g, d, axis=ax)
        corr = np.fft.irfftn(np.fft.rfftn(hd) * np.conj(np.fft.rfftn(w)), s=grid.shape,
                             axes=ax)
        out = out + M[d] * corr
    return out


def In_monitor(history, t: float, n: int, gamma: float, alpha: float, Psi: Field | None = None,
               max_gap: float | None = None) -> float:
    """I^n(t) = a_n^(-1-2/n) int_0^t int 1{|<u_s, Phi_x>| < a_n} Q_s(x) Psi(x) dx ds,
    with Q_s the bump-localized double integral of |u_s|^gamma against
    |w - z|^-alpha + 1. Time quadrature is the trapezoid rule over the
    stored snapshots in [0, t].
    """
    if not history:
        raise AnalysisError("empty history")
    times = _times(history)
    grid = history[0][1].grid
    m = _check_scales(n, grid)
    if Psi is None:
        Psi = default_psi(grid)
    if np.any(Psi.values < 0):
        raise AnalysisError("Psi must be nonnegative")
    tol = _snap_tol(times)
    if times[0] > tol:
        raise AnalysisError(f"missing snapshots on [0, {times[0]:.6g})")
    if t > times[-1] + tol:
        raise AnalysisError(f"missing snapshots on ({times[-1]:.6g}, {t:.6g}]")
    use = times <= t + tol
    ts = times[use]
    if ts.size >= 2:
        gaps = np.diff(ts)
        limit = max_gap if max_gap is not None else 4 * float(np.median(gaps))
        bad = np.flatnonzero(gaps > limit + 1e-12)
        if bad.size:
            k = bad[0]
            raise AnalysisError(f"missing snapshots between t={ts[k]:.6g} and "
                                f"t={ts[k + 1]:.6g}")
    a_n = math.exp(log_a(n))
    vals = []
    for (s, u) in [h for h, keep in zip(history, use) if keep]:
        F = bump_pairing(u, m)
        ind = np.abs(F) < a_n
        if not np.any(ind & (Psi.values > 0)):
            vals.append(0.0)
            continue
        g = np.abs(u.values) ** gamma
        Q = _local_form(g, grid, m, alpha)
        vals.append(float(np.sum(np.where(ind, Q, 0.0) * Psi.values) * grid.cell_volume))
    vals = np.array(vals)
    if ts.size == 1:
        return 0.0
    pref = math.exp(-(1 + 2 / n) * log_a(n))
    return float(pref * integrate.trapezoid(vals, ts))


# ------------------------------------------------------------ Hoelder exponent

def structure_function(f, lags) -> np.ndarray:
    """S2(r) = mean |f(x + r) - f(x)|^2, averaged over axes and fields."""
    fields = [f] if isinstance(f, Field) else list(f)
    grid = fields[0].grid
    shifts = np.rint(np.asarray(lags, dtype=float) / grid.h).astype(int)
    out = np.zeros(shifts.size)
    for fld in fields:
        for a in range(grid.q):
            for j, k in enumerate(shifts):
                out[j] += np.mean((np.roll(fld.values, -k, axis=a) - fld.values) ** 2)
    return out / (len(fields) * grid.q)


def holder_exponent(f, r_range) -> tuple:
    """Hoelder exponent from the structure function: zeta = slope / 2 of
    log S2 against log r, with the regression standard error.

    ``f`` is a Field or a list of Fields (S2 pooled over the list).
    """
    fields = [f] if isinstance(f, Field) else list(f)
    grid = fields[0].grid
    lags = np.asarray(r_range, dtype=float)
    if lags.size < 2:
        raise AnalysisError("need at least two lags")
    if np.any(lags < 2 * grid.h - 1e-12) or np.any(lags > grid.L / 8 + 1e-12):
        raise AnalysisError("lags must lie in [2h, L/8]")
    s2 = structure_function(fields, lags)
    if np.any(s2 <= 0) or np.ptp(np.log(s2)) == 0:
        raise AnalysisError("no scaling range: field is constant at these lags")
    fit = linregress(np.log(lags), np.log(s2))
    return float(fit.slope / 2), float(fit.stderr / 2)


# ------------------------------------------------------------ uniqueness sweep

DISCLAIMER = "exploratory discretized proxy; not a test of pathwise uniqueness"
PHASE_COLUMNS = ["alpha", "gamma", "boundary_side", "replicas", "d_median", "d_max",
                 "divergence_fraction", "threshold", "perturbation", "seed", "status",
                 "disclaimer"]


def boundary_side(alpha: float, gamma: float, tol: float = 1e-12) -> str:
    """'below' if alpha < 2(2 gamma - 1) (uniqueness known), 'on', or 'above'."""
    b = 2 * (2 * gamma - 1)
    if abs(alpha - b) <= tol:
        return "on"
    return "below" if alpha < b else "above"


def _sweep_cell(job: dict) -> dict:
    g = make_grid(**job["grid"])
    alpha, gamma = job["alpha"], job["gamma"]
    row = {"alpha": alpha, "gamma": gamma, "boundary_side": boundary_side(alpha, gamma),
           "replicas": job["replicas"], "threshold": job["threshold"],
           "perturbation": job["perturbation"], "seed": job["seed"], "disclaimer": DISCLAIMER}
    try:
        coeff = builtin_coefficients("power_abs", gamma=gamma)
        ic2 = Field.constant(g, job["perturbation"])
        finals = []
        for sid in job["stream_ids"]:
            noise = NoiseSpec(alpha, job["zero_mode_policy"], job["include_constant_part"],
                              job["seed"], sid)
            cfg = SolveConfig(g, noise, coeff, job["T_end"], job["dt"])
            finals.append(paired_solve(cfg, "zero", ic2).d[-1])
        d = np.array(finals)
        row.update(d_median=float(np.median(d)), d_max=float(np.max(d)),
                   divergence_fraction=float(np.mean(d > job["threshold"])), status="ok")
    except (SolverError, ValueError) as exc:
        row.update(d_median=float("nan"), d_max=float("nan"), divergence_fraction=float("nan"),
                   status=f"failed: {exc}".replace("\n", " "))
    return row


@dataclass
class PhaseTable:
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PHASE_COLUMNS)
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in PHASE_COLUMNS])
        return buf.getvalue()

    def cell(self, alpha, gamma) -> dict:
        for r in self.rows:
            if r["alpha"] == alpha and r["gamma"] == gamma:
                return r
        raise KeyError((alpha, gamma))


def uniqueness_sweep(alpha_list, gamma_list, replicas: int, base_cfg: SolveConfig,
                     perturbation: float = 1e-12, threshold: float = 1e-6,
                     master_seed: int | None = None, jobs: int = 1) -> PhaseTable:
    """Paired solves from zero initial data and a constant perturbation of
    the given size, with sigma = |u|^gamma, for every (alpha, gamma) cell.

    Replica r of cell c uses stream id c * replicas + r + 1 under the master
    seed, so no (seed, stream_id) pair repeats and the table depends only
    on its inputs. Grid, horizon, step and zero-mode policy come from
    base_cfg. Cells that fail are recorded with status 'failed: ...'.
    """
    alphas = [float(a) for a in alpha_list]
    gammas = [float(g) for g in gamma_list]
    q = base_cfg.grid.q
    for a in alphas:
        if not 0 < a < min(2, q):
            raise AnalysisError("alpha must lie in (0, 2∧q)")
    for g in gammas:
        if not 0 < g <= 1:
            raise AnalysisError("gamma must lie in (0, 1]")
    if replicas < 1:
        raise AnalysisError("replicas must be >= 1")
    seed = int(base_cfg.noise.seed if master_seed is None else master_seed)
    jobs_list = []
    c = 0
    for a in alphas:
        for g in gammas:
            jobs_list.append({
                "grid": base_cfg.grid.describe(), "alpha": a, "gamma": g, "replicas": replicas,
                "stream_ids": [c * replicas + r + 1 for r in range(replicas)],
                "seed": seed, "T_end": base_cfg.T_end, "dt": base_cfg.dt,
                "zero_mode_policy": base_cfg.noise.zero_mode_policy,
                "include_constant_part": base_cfg.noise.include_constant_part,
                "perturbation": float(perturbation), "threshold": float(threshold)})
            c += 1
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_cell, jobs_list))
    else:
        rows = [_sweep_cell(j) for j in jobs_list]
    return PhaseTable(rows)
