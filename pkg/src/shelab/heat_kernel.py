"""Gaussian heat kernel on R^q and numerical checks of its estimates.

Each ``verify_*`` function evaluates the left-hand side of one estimate
at a set of parameter points, together with the right-hand side with the
unspecified constant dropped, and reports the ratios. The largest ratio
is the empirical constant. Nothing here asserts a value for a constant.

Axis indices ``l`` are 0-based.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import ndtr, roots_legendre

from .quadrature import QuadratureError, riesz_form

LEMMA_IDS = ("L4_2", "L4_3", "L4_4", "L4_5", "A_1", "A_2a", "A_2b", "A_3")

# truncation of R^q, in standard deviations of the widest Gaussian
TRUNC_SD = 12.0
MAX_POINTS_1D = 1 << 23
MAX_POINTS_2D = 1 << 22


def _as_points(x, q):
    x = np.asarray(x, dtype=float)
    if q == 1:
        return x
    if x.shape[-1] != q:
        raise ValueError(f"points must have last axis of length {q}")
    return x


def _sqnorm(x, q):
    return x * x if q == 1 else np.sum(x * x, axis=-1)


def pt(t, x, q: int = 1):
    """Heat kernel p_t(x) = (2 pi t)^(-q/2) exp(-|x|^2 / 2t).

    For q = 1, x may have any shape; for q = 2 its last axis holds the
    coordinates.
    """
    if not np.all(np.asarray(t) > 0):
        raise ValueError("heat kernel needs t > 0")
    x = _as_points(x, q)
    return (2 * np.pi * t) ** (-q / 2) * np.exp(-_sqnorm(x, q) / (2 * t))


def log_pt(t, x, q: int = 1):
    """log p_t(x), finite where p_t underflows."""
    if not np.all(np.asarray(t) > 0):
        raise ValueError("heat kernel needs t > 0")
    x = _as_points(x, q)
    return -0.5 * q * np.log(2 * np.pi * t) - _sqnorm(x, q) / (2 * t)


def pt_deriv(t, x, l: int = 0, q: int = 1):
    """p_{t,l}(x) = -(x_l / t) p_t(x), with l a 0-based axis index."""
    if not 0 <= l < q:
        raise ValueError(f"axis index l must be in 0..{q - 1}")
    x = _as_points(x, q)
    xl = x if q == 1 else x[..., l]
    return -(xl / t) * pt(t, x, q)


def heat_mass(t: float, q: int = 1, panels: int = 48, order: int = 20) -> float:
    """Quadrature of p_t over the box [-12 sqrt t, 12 sqrt t]^q.

    Composite Gauss-Legendre, tensorised in 2-D.
    """
    a = TRUNC_SD * np.sqrt(t)
    nodes, weights = roots_legendre(order)
    edges = np.linspace(-a, a, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    y = (mid[:, None] + half[:, None] * nodes).ravel()
    wy = (half[:, None] * weights).ravel()
    if q == 1:
        return float(np.sum(wy * pt(t, y)))
    pts = np.stack(np.meshgrid(y, y, indexing="ij"), axis=-1)
    return float(wy @ pt(t, pts, 2) @ wy)


@dataclass
class KernelLemmaReport:
    """Tabulated left-hand sides, envelopes and ratios for one estimate."""

    lemma_id: str
    rows: list = field(default_factory=list)
    scaling_slope: float | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lemma_id not in LEMMA_IDS:
            raise ValueError(f"unknown lemma id {self.lemma_id!r}")

    def add(self, params: dict, lhs: float, envelope: float, ratio: float | None = None):
        lhs = float(lhs)
        envelope = float(envelope)
        if ratio is None:
            ratio = lhs / envelope if lhs > 0 else 0.0
        ratio = float(ratio)
        for name, v in (("lhs", lhs), ("envelope", envelope), ("ratio", ratio)):
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{self.lemma_id}: {name} = {v} at {params}")
        self.rows.append({"params": params, "lhs": lhs, "envelope": envelope, "ratio": ratio})

    @property
    def empirical_constant(self) -> float:
        if not self.rows:
            return float("nan")
        return max(r["ratio"] for r in self.rows)

    @property
    def lhs(self) -> np.ndarray:
        return np.array([r["lhs"] for r in self.rows])

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r["ratio"] for r in self.rows])

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["lemma_id", "param_json", "lhs", "envelope", "ratio"])
        for r in self.rows:
            w.writerow([self.lemma_id, json.dumps(r["params"], sort_keys=True),
                        repr(r["lhs"]), repr(r["envelope"]), repr(r["ratio"])])
        return buf.getvalue()


def _fit_slope(x, y):
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------- algebraic max bound

def verify_algebra_bound(r0: float, r1: float, u_grid, n_r: int = 5) -> KernelLemmaReport:
    """Maximize a exp(-a^r/u) u^(-1/r) over a >= 0 and compare with the
    closed form (1/r)^(1/r) exp(-1/r), for r on a grid in [r0, r1].
    """
    if not 0 < r0 <= r1:
        raise ValueError("need 0 < r0 <= r1")
    u_grid = [float(u) for u in u_grid]
    if any(u < 1 for u in u_grid):
        raise ValueError("u values must be >= 1")
    rs = np.unique(np.linspace(r0, r1, n_r if r1 > r0 else 1))
    rep = KernelLemmaReport("A_1")
    for r in rs:
        for u in u_grid:
            scale = u ** (1 / r)
            fn = lambda a: -(a * np.exp(-a ** r / u) / scale)
            res = optimize.minimize_scalar(fn, bounds=(0.0, 10 * scale), method="bounded",
                                           options={"xatol": 1e-12 * scale, "maxiter": 500})
            exact = (1 / r) ** (1 / r) * np.exp(-1 / r)
            argmax = (u / r) ** (1 / r)
            rep.add({"r": float(r), "u": u, "argmax": float(res.x), "argmax_exact": argmax},
                    -res.fun, exact)
    return rep


# ---------------------------------------------------------------- derivative envelope

def verify_deriv_bound(t_grid, x_grid, q: int = 1) -> KernelLemmaReport:
    """Ratios |p_{t,l}(x)| sqrt(t) / p_{2t}(x) over all t, x and axes l.

    The ratio is evaluated in closed form, |x_l|/sqrt(t) 2^(q/2)
    exp(-|x|^2/4t), so it stays accurate where both sides underflow.
    """
    rep = KernelLemmaReport("L4_2")
    xs = _as_points(x_grid, q)
    if q == 1:
        xs = xs.reshape(-1)
    else:
        xs = xs.reshape(-1, q)
    for t in np.atleast_1d(np.asarray(t_grid, dtype=float)):
        if t <= 0:
            raise ValueError("t must be > 0")
        for x in xs:
            x2 = float(np.sum(np.square(x)))
            for l in range(q):
                xl = float(x if q == 1 else x[l])
                lhs = abs(pt_deriv(t, x, l, q))
                env = pt(2 * t, x, q) / np.sqrt(t)
                ratio = abs(xl) / np.sqrt(t) * 2 ** (q / 2) * np.exp(-x2 / (4 * t))
                rep.add({"t": float(t), "x": np.atleast_1d(x).tolist(), "l": l},
                        lhs, env, ratio)
    return rep


# ---------------------------------------------------- grid-based quadrature

def _box(centers, half_width, h, q):
    """Uniform grid covering all centres +- half_width, spacing h."""
    c = np.atleast_2d(np.asarray(centers, dtype=float).reshape(len(centers), -1))
    lo = c.min(axis=0) - half_width
    hi = c.max(axis=0) + half_width
    n = np.ceil((hi - lo) / h).astype(int) + 1
    cap = MAX_POINTS_1D if q == 1 else MAX_POINTS_2D
    if np.prod(n) > cap:
        raise QuadratureError(f"grid of {np.prod(n)} points exceeds cap {cap}")
    axes = [lo[k] + h * np.arange(n[k]) for k in range(q)]
    if q == 1:
        return axes[0]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _two_level(build, resolution, tol):
    """Evaluate build(res) at res and res/2 and return (value, parts, err)."""
    sing, plus = build(resolution)
    sing2, plus2 = build(max(resolution // 2, 2))
    val, val2 = sing + plus, sing2 + plus2
    err = abs(val - val2) / abs(val) if val != 0 else abs(val2)
    if tol is not None and err > tol:
        raise QuadratureError(f"quadrature did not converge: relative change {err:.3g} "
                              f"between resolutions {resolution // 2} and {resolution}")
    return val, (sing, plus), err


def _dist(a, b):
    return float(np.sqrt(np.sum(np.square(np.subtract(a, b)))))


# ---------------------------------------------------------------- cross integral

def cross_integral(t, t_prime, x, x_prime, alpha, q=1, l=0, resolution=16, tol=None):
    """int int |D(w)| |D(z)| (|w-z|^-alpha + 1) dw dz with
    D(w) = p_{t,l}(w-x) - p_{t',l}(w-x').

    Returns (value, (singular, plus_one), relative error estimate).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if np.array_equal(x, xp) and t == t_prime:
        return 0.0, (0.0, 0.0), 0.0

    def build(res):
        h = np.sqrt(t) / res
        w = _box([x, xp], TRUNC_SD * np.sqrt(t_prime), h, q)
        xx = x[0] if q == 1 else x
        xxp = xp[0] if q == 1 else xp
        d = np.abs(pt_deriv(t, w - xx, l, q) - pt_deriv(t_prime, w - xxp, l, q))
        return riesz_form(d, d, h, alpha)

    return _two_level(build, resolution, tol)


def _check_alpha(alpha, q):
    if not 0 < alpha < min(2, q):
        raise ValueError("alpha must lie in (0, 2∧q)")


def verify_cross_integral(t, t_prime, x, x_prime, alpha, q=1, *, l=0, resolution=16,
                          fit=None, tol=5e-2) -> KernelLemmaReport:
    """Tabulate the heat-kernel-derivative difference integral against
    t^(-1-alpha/2) (1 ∧ (|x-x'|^2 + |t-t'|)/t).

    Parameters may be scalars or equal-length sequences (one row each).
    ``fit`` is None, "t" (slope of log lhs against log t) or "offset"
    (against log |x - x'|).
    """
    _check_alpha(alpha, q)
    if q == 1:
        ts, tps, xs, xps = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float))
                                                 for v in (t, t_prime, x, x_prime)))
        xs, xps = xs[:, None], xps[:, None]
    else:
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        xps = np.atleast_2d(np.asarray(x_prime, dtype=float))
        n = max(np.size(t), np.size(t_prime), len(xs), len(xps))
        ts = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=float)), (n,))
        tps = np.broadcast_to(np.atleast_1d(np.asarray(t_prime, dtype=float)), (n,))
        xs, xps = np.broadcast_to(xs, (n, q)), np.broadcast_to(xps, (n, q))
    rep = KernelLemmaReport("L4_3")
    for ti, tpi, xi, xpi in zip(ts, tps, xs, xps):
        if not 0 < ti <= tpi:
            raise ValueError("need 0 < t <= t'")
        val, (sing, plus), err = cross_integral(ti, tpi, xi, xpi, alpha, q, l, resolution, tol)
        d2 = _dist(xi, xpi) ** 2
        env = ti ** (-1 - alpha / 2) * min(1.0, (d2 + abs(tpi - ti)) / ti)
        rep.add({"t": ti, "t_prime": tpi, "x": xi.tolist(), "x_prime": xpi.tolist(),
                 "alpha": alpha, "q": q, "l": l, "singular": sing, "plus_one": plus,
                 "quad_err": err}, val, env)
    if fit == "t":
        rep.scaling_slope = _fit_slope(ts, rep.lhs)
    elif fit == "offset":
        rep.scaling_slope = _fit_slope([_dist(a, b) for a, b in zip(xs, xps)], rep.lhs)
    elif fit is not None:
        raise ValueError("fit must be None, 't' or 'offset'")
    return rep


# ---------------------------------------------------------------- weighted integral

def verify_weighted_integral(t, t_prime, r1, r2, r3, alpha, x=None, y=None, q=1, *,
                             resolution=16, tol=5e-2) -> KernelLemmaReport:
    """Weighted Gaussian double integral against its envelope.

    With x = y = None this is the centred form, envelope
    e^(2 r3^2 t') t^(r1/2) t'^(r2/2) (t^(-alpha/2) + 1). With centres x, y
    the envelope is e^(2 r3^2 t') (t^(r1/2)+1)(t'^(r2/2)+1)(t^(-alpha/2)+1)
    and K = max(|x|_inf, |y|_inf) is recorded per row.
    """
    _check_alpha(alpha, q)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    n = ts.size
    tps = np.broadcast_to(np.atleast_1d(np.asarray(t_prime, dtype=float)), (n,))
    r3s = np.broadcast_to(np.atleast_1d(np.asarray(r3, dtype=float)), (n,))
    centred = x is None and y is None
    xc = np.zeros(q) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    yc = np.zeros(q) if y is None else np.atleast_1d(np.asarray(y, dtype=float))
    rep = KernelLemmaReport("L4_4")
    for ti, tpi, r3i in zip(ts, tps, r3s):
        if not 0 < ti <= tpi:
            raise ValueError("need 0 < t <= t'")
        if min(r1, r2, r3i) < 0:
            raise ValueError("r1, r2, r3 must be >= 0")

        def build(res):
            h = np.sqrt(ti) / res
            half = TRUNC_SD * np.sqrt(tpi) + 2 * r3i * tpi + np.sqrt((r1 + r2) * tpi)
            w = _box([xc, yc, np.zeros(q)], half, h, q)
            a = xc[0] if q == 1 else xc
            b = yc[0] if q == 1 else yc
            nw = np.abs(w) if q == 1 else np.linalg.norm(w, axis=-1)
            f = pt(ti, w - a, q) * nw ** r1 * np.exp(r3i * nw)
            g = pt(tpi, w - b, q) * nw ** r2 * np.exp(r3i * nw)
            return riesz_form(f, g, h, alpha)

        val, (sing, plus), err = _two_level(build, resolution, tol)
        grow = np.exp(2 * r3i ** 2 * tpi) * (ti ** (-alpha / 2) + 1)
        if centred:
            env = grow * ti ** (r1 / 2) * tpi ** (r2 / 2)
        else:
            env = grow * (ti ** (r1 / 2) + 1) * (tpi ** (r2 / 2) + 1)
        K = float(max(np.max(np.abs(xc)), np.max(np.abs(yc))))
        rep.add({"t": ti, "t_prime": tpi, "r1": r1, "r2": r2, "r3": float(r3i), "alpha": alpha,
                 "q": q, "x": xc.tolist(), "y": yc.tolist(), "K": K, "centred": centred,
                 "singular": sing, "plus_one": plus, "quad_err": err}, val, env)
    return rep


# ---------------------------------------------------------------- outside tail

def verify_outside_tail(s, t, t_prime, x, x_prime, eta0, eta1, p, r, alpha, q=1, *,
                        l=0, resolution=16, tol=5e-2) -> KernelLemmaReport:
    """Indicator-restricted difference integral against
    (t-s)^(-1-alpha/2) exp(-eta1 (t'-s)^(-2 eta0)/256) [1 ∧ ...]^(1-eta1/2).

    ``s``, ``t`` and ``t_prime`` may be sequences of equal length. The
    integrand uses |D(w)| |D(z)| with D the kernel-derivative difference.
    """
    _check_alpha(alpha, q)
    ss = np.atleast_1d(np.asarray(s, dtype=float))
    n = ss.size
    ts = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=float)), (n,))
    tps = np.broadcast_to(np.atleast_1d(np.asarray(t_prime, dtype=float)), (n,))
    xc = np.atleast_1d(np.asarray(x, dtype=float))
    xpc = np.atleast_1d(np.asarray(x_prime, dtype=float))
    a = xc[0] if q == 1 else xc
    b = xpc[0] if q == 1 else xpc
    off = _dist(xc, xpc)
    rep = KernelLemmaReport("L4_5")
    for si, ti, tpi in zip(ss, ts, tps):
        if not 0 <= si < ti <= tpi:
            raise ValueError("need 0 <= s < t <= t'")
        tau, taup = ti - si, tpi - si
        thresh = max(taup ** (0.5 - eta0), 2 * off)

        def build(res):
            h = np.sqrt(tau) / res
            half = TRUNC_SD * np.sqrt(taup) + 2 * r * taup + np.sqrt(2 * p * taup)
            w = _box([xc, xpc], half, h, q)
            dw = np.abs(w - a) if q == 1 else np.linalg.norm(w - a, axis=-1)
            diff = np.abs(pt_deriv(tau, w - a, l, q) - pt_deriv(taup, w - b, l, q))
            g = dw ** p * np.exp(r * dw) * diff
            f = np.where(dw > thresh, g, 0.0)
            if not np.any(f):
                return 0.0, 0.0
            return riesz_form(f, g, h, alpha)

        val, (sing, plus), err = _two_level(build, resolution, tol)
        bracket = min(1.0, (off ** 2 + abs(tpi - ti)) / tau)
        env = tau ** (-1 - alpha / 2) * np.exp(-eta1 * taup ** (-2 * eta0) / 256) \
            * bracket ** (1 - eta1 / 2)
        rep.add({"s": float(si), "t": float(ti), "t_prime": float(tpi), "x": xc.tolist(),
                 "x_prime": xpc.tolist(), "eta0": eta0, "eta1": eta1, "p": p, "r": r,
                 "alpha": alpha, "q": q, "l": l, "threshold": thresh, "quad_err": err},
                val, env)
    return rep


# ------------------------------------------------------ pointwise differences

def _path_integral(t, w, v, q):
    """sum_i | int_0^{v_i} p_{2t}(w + vhat_{i-1} + r e_i) dr | in closed form."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    s = np.sqrt(2 * t)
    base = w.copy()
    total = 0.0
    for i in range(q):
        others = [j for j in range(q) if j != i]
        trans = np.prod([pt(2 * t, base[j]) for j in others]) if others else 1.0
        seg = ndtr((base[i] + v[i]) / s) - ndtr(base[i] / s)
        total += abs(seg) * trans
        base[i] += v[i]
    return float(total)


def verify_difference_pointwise(t, t_prime, w, v, l=0, q=1, *, eta0=0.25) -> dict:
    """Pointwise kernel-difference bounds.

    Returns a dict of reports keyed by "A_2a", "A_2b" and "A_3". A_2a
    compares |p_{t,l}(w+v) - p_{t,l}(w)| with t^-1 times a path integral
    of p_{2t}; A_2b compares |p_{t,l}(w) - p_{t',l}(w)| with
    |t-t'|^(1/2) t^(-1/2) (t^(-1/2) p_{2t}(w) + t'^(-1/2) p_{4t'}(w));
    A_3 evaluates both parts of the indicator estimate with y = w and
    y~ = w + v.
    """
    if not 0 < t <= t_prime:
        raise ValueError("need 0 < t <= t'")
    ws = _as_points(w, q).reshape((-1,) if q == 1 else (-1, q))
    vs = np.broadcast_to(_as_points(v, q), ws.shape)
    a2a, a2b, a3 = KernelLemmaReport("A_2a"), KernelLemmaReport("A_2b"), KernelLemmaReport("A_3")
    cut = np.exp(-t ** (-2 * eta0) / 64)
    for wi, vi in zip(ws, vs):
        pars = {"t": float(t), "t_prime": float(t_prime), "w": np.atleast_1d(wi).tolist(),
                "v": np.atleast_1d(vi).tolist(), "l": l, "q": q}
        lhs = abs(pt_deriv(t, wi + vi, l, q) - pt_deriv(t, wi, l, q))
        env = _path_integral(t, wi, vi, q) / t
        a2a.add(pars, lhs, env, 0.0 if lhs == 0 else None)
        lhs = abs(pt_deriv(t, wi, l, q) - pt_deriv(t_prime, wi, l, q))
        env = np.sqrt(abs(t - t_prime) / t) * (pt(2 * t, wi, q) / np.sqrt(t)
                                               + pt(4 * t_prime, wi, q) / np.sqrt(t_prime))
        a2b.add(pars, lhs, env, 0.0 if lhs == 0 else None)
        y, yt = wi, wi + vi
        ny, nyt = _dist(y, 0), _dist(yt, 0)
        inside = nyt > max(t_prime ** (0.5 - eta0), 2 * _dist(y, yt))
        yl = abs(float(y if q == 1 else y[l]))
        lhs = abs(pt_deriv(t, y, l, q)) if inside else 0.0
        # log ratios: indicator times |p_{t,l}| over the two envelopes
        if inside and yl > 0:
            log_num = np.log(yl / t) + log_pt(t, y, q) + t ** (-2 * eta0) / 64
            ra = np.exp(log_num - log_pt(4 * t, y, q))
            rb = np.exp(log_num - log_pt(16 * t, yt, q))
        else:
            ra = rb = 0.0
        a3.add(dict(pars, part="a", eta0=eta0), lhs, cut * pt(4 * t, y, q), ra)
        a3.add(dict(pars, part="b", eta0=eta0), lhs, cut * pt(16 * t, yt, q), rb)
    return {"A_2a": a2a, "A_2b": a2b, "A_3": a3}
