"""Scalar constructions of the uniqueness argument.

Sequences a_n and m_n, the Yamada-Watanabe mollifiers psi_n / phi_n, the
gamma_m bootstrap sequence, the epsilon/beta/lambda grids and the length
scales l_n, lbar_n. Anything that underflows for moderate n is kept in
log form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import roots_legendre

LN2 = math.log(2.0)


class ConstraintError(ValueError):
    """A parameter violates one of the stated inequalities."""


# --------------------------------------------------------------- sequences

def log_a(n) -> float:
    """log a_n = -n(n+1)/2."""
    if n < 0:
        raise ValueError("a_n needs n >= 0")
    return -0.5 * n * (n + 1)


def a_seq(n: int) -> float:
    """a_n = exp(-n(n+1)/2); underflows to 0 near n = 38, use log_a beyond."""
    return math.exp(log_a(n))


def log_m(n) -> float:
    """log m_n = (n-1)n/4, i.e. m_n = a_{n-1}^(-1/2)."""
    if n < 1:
        raise ValueError("m_n needs n >= 1")
    return 0.25 * (n - 1) * n


def m_seq(n: int) -> float:
    return math.exp(log_m(n))


# --------------------------------------------------------------- mollifiers

EDGE = 0.25  # width of the rising and falling edges of the plateau, in u


def _f(v):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(v > 0, np.exp(-1.0 / np.where(v > 0, v, 1.0)), 0.0)


def _step(v):
    """Smooth step: 0 for v <= 0, 1 for v >= 1."""
    v = np.clip(v, 0.0, 1.0)
    a, b = _f(v), _f(1.0 - v)
    return a / (a + b)


def plateau(u):
    """C-infinity profile on (0, 1): 0 outside, 1 on [EDGE, 1 - EDGE]."""
    u = np.asarray(u, dtype=float)
    return _step(u / EDGE) * _step((1.0 - u) / EDGE)


@dataclass
class MollifierPair:
    """psi_n and phi_n for one n.

    psi_n(x) = (2 theta / (n x)) S((ln x - ln a_n) / n), where S is the
    plateau profile and theta = 1 / (2 int S). The log-coordinate
    u = (ln x - ln a_n)/n runs over (0, 1) exactly when x runs over
    (a_n, a_{n-1}), and dx / x = n du, so int psi_n = 2 theta int S = 1.
    Since theta < 1 and S <= 1, psi_n(x) < 2/(n x) holds by construction.

    phi_n(x) = |x| Psi(|x|) - int_0^{|x|} y psi_n(y) dy with Psi the
    antiderivative of psi_n, both tabulated on quad_resolution cells in u
    with Gauss-Legendre per cell.
    """

    n: int
    quad_resolution: int
    theta: float = field(init=False)
    _edges: np.ndarray = field(init=False, repr=False)
    _cum_s: np.ndarray = field(init=False, repr=False)
    _cum_m: np.ndarray = field(init=False, repr=False)

    ORDER = 10

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("mollifier index n must be >= 1")
        if self.quad_resolution < 4:
            raise ValueError("quad_resolution must be >= 4")
        self._nodes, self._weights = roots_legendre(self.ORDER)
        self._edges = np.linspace(0.0, 1.0, self.quad_resolution + 1)
        cs, cm = self._cell_integrals(self._edges[:-1], self._edges[1:])
        self._cum_s = np.concatenate([[0.0], np.cumsum(cs)])
        self._cum_m = np.concatenate([[0.0], np.cumsum(cm)])
        total = self._cum_s[-1]
        # the cap integral over the support is 2 > 1, so renormalizing never
        # needs theta > 1
        assert 2 * total > 1
        self.theta = 1.0 / (2.0 * total)

    def _cell_integrals(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        half = 0.5 * (hi - lo)
        u = 0.5 * (hi + lo)[..., None] + half[..., None] * self._nodes
        s = plateau(u)
        w = half[..., None] * self._weights
        return np.sum(w * s, axis=-1), np.sum(w * s * np.exp(self.n * (u - 1.0)), axis=-1)

    @property
    def log_a_n(self) -> float:
        return log_a(self.n)

    @property
    def support(self) -> tuple:
        return a_seq(self.n), a_seq(self.n - 1)

    def _u(self, x):
        with np.errstate(divide="ignore"):
            return (np.log(np.abs(x)) - self.log_a_n) / self.n

    def _cumulative(self, u):
        """(int_0^u S, int_0^u S e^{n(u'-1)}) for u in [0, 1]."""
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        k = np.minimum((u * self.quad_resolution).astype(int), self.quad_resolution - 1)
        left = self._edges[k]
        ps, pm = self._cell_integrals(left, u)
        return self._cum_s[k] + ps, self._cum_m[k] + pm

    def psi(self, x):
        """psi_n(x) for x > 0 (zero elsewhere)."""
        x = np.asarray(x, dtype=float)
        u = self._u(np.where(x > 0, x, 1.0))
        val = 2 * self.theta / (self.n * np.where(x > 0, x, 1.0)) * plateau(u)
        return np.where(x > 0, val, 0.0)

    def Psi(self, x):
        """int_0^{|x|} psi_n, i.e. |phi_n'(x)|."""
        s, _ = self._cumulative(self._u(np.where(x != 0, x, 1e-300)))
        return 2 * self.theta * s

    def dphi(self, x):
        x = np.asarray(x, dtype=float)
        return np.sign(x) * self.Psi(x)

    def d2phi(self, x):
        return self.psi(np.abs(np.asarray(x, dtype=float)))

    def phi(self, x):
        """phi_n(x) = int_0^{|x|} dy int_0^y psi_n."""
        ax = np.abs(np.asarray(x, dtype=float))
        s, m = self._cumulative(self._u(np.where(ax > 0, ax, 1e-300)))
        # int_0^{|x|} y psi(y) dy = 2 theta a_{n-1} int S e^{n(u-1)} du
        first = 2 * self.theta * np.exp(log_a(self.n - 1)) * m
        return np.where(ax > 0, ax * 2 * self.theta * s - first, 0.0)

    @property
    def kappa(self) -> float:
        """phi_n(x) = |x| - kappa_n for |x| >= a_{n-1}."""
        return 2 * self.theta * math.exp(log_a(self.n - 1)) * self._cum_m[-1]

    def describe(self) -> dict:
        return {"n": self.n, "shape": "log-coordinate C-infinity plateau",
                "edge_width_u": EDGE, "theta": self.theta,
                "quad_resolution": self.quad_resolution}


def make_mollifier(n: int, quad_resolution: int = 1024) -> MollifierPair:
    return MollifierPair(n, quad_resolution)


def _dense_grid(pair: MollifierPair, points: int):
    lo, hi = pair.support
    inner = np.exp(np.linspace(math.log(lo), math.log(hi), points))
    outer = np.concatenate([np.linspace(0, lo, 50)[1:], hi * np.linspace(1, 20, 200)])
    return np.sort(np.concatenate([inner, outer]))


def phi_props_check(pair: MollifierPair, points: int = 20001) -> dict:
    """Check the mollifier properties on a dense grid.

    The unit mass is recomputed by adaptive quadrature in s = ln x,
    independent of the construction table. Returns a dict of measured
    quantities and boolean flags; failures are reported, not raised.
    """
    n = pair.n
    lo, hi = pair.support
    mass, _ = integrate.quad(lambda s: pair.psi(math.exp(s)) * math.exp(s),
                             math.log(lo), math.log(hi), epsabs=1e-14, epsrel=1e-13,
                             limit=400)
    x = _dense_grid(pair, points)
    cap = float(np.max(pair.psi(x) * n * x))
    d2 = float(np.max(np.abs(pair.d2phi(x)) * n * x))
    dphi = float(np.max(np.abs(pair.dphi(np.concatenate([-x, x])))))
    gap = float(np.max(np.abs(x - pair.phi(x))))
    even = float(np.max(np.abs(pair.phi(x) - pair.phi(-x))))
    a_prev = math.exp(log_a(n - 1))
    out = {
        "n": n, "mass": mass, "cap_max": cap, "dphi_max": dphi, "gap_sup": gap,
        "d2phi_scaled_max": d2, "phi0": float(pair.phi(0.0)), "even_err": even,
        "kappa": float(pair.kappa), "a_prev": a_prev,
    }
    out["mass_ok"] = abs(mass - 1) <= 1e-9
    out["cap_ok"] = cap <= 2 + 1e-9
    out["dphi_ok"] = dphi <= 1 + 1e-12
    out["gap_ok"] = gap <= a_prev and 0 < pair.kappa < a_prev
    out["d2phi_ok"] = d2 <= 2 + 1e-9
    out["ok"] = all(out[k] for k in ("mass_ok", "cap_ok", "dphi_ok", "gap_ok", "d2phi_ok")) \
        and out["phi0"] == 0.0 and even == 0.0
    return out


# ------------------------------------------------------------ gamma_m

@dataclass
class GammaSequence:
    gamma: float
    alpha: float
    values: list
    m_bar: int | None
    gamma_inf: float
    terminated: bool


def gamma_closed_form(gamma: float, alpha: float, m: int) -> float:
    """gamma_m = 1 + (gamma - alpha/2)(1 - gamma^m)/(1 - gamma)."""
    return 1 + (gamma - alpha / 2) * (1 - gamma ** m) / (1 - gamma)


def gamma_seq(gamma: float, alpha: float, cap: int = 10000) -> GammaSequence:
    """Iterate gamma_{m+1} = gamma gamma_m + 1 - alpha/2 from gamma_0 = 1
    until the first value above 2.

    If alpha >= 2(2 gamma - 1) the limit (1 - alpha/2)/(1 - gamma) is at
    most 2 and the sequence need not cross 2; the iteration then stops
    after ``cap`` steps with terminated=False and m_bar=None.
    """
    if not 0.5 < gamma < 1:
        raise ConstraintError("gamma must lie in (1/2, 1)")
    if not 0 < alpha < 2:
        raise ConstraintError("alpha must lie in (0, 2)")
    vals = [1.0]
    while vals[-1] <= 2 and len(vals) <= cap:
        vals.append(gamma * vals[-1] + 1 - alpha / 2)
    done = vals[-1] > 2
    return GammaSequence(gamma, alpha, vals, len(vals) - 2 if done else None,
                         (1 - alpha / 2) / (1 - gamma), done)


# ------------------------------------------------------------ epsilon grid

EPS1_RULE = "ε_1 ∈ (0, 1/32(2(2γ−1)−α))"
EPS0_RULE = "ε_0 ∈ (0, (1−γ)ε_1/4)"


@dataclass
class EpsGrid:
    gamma: float
    alpha: float
    eps0: float
    eps1: float
    L: int
    betas: np.ndarray
    lambdas: np.ndarray

    def beta(self, i: int) -> float:
        return float(self.betas[i])


def eps1_bound(gamma: float, alpha: float) -> float:
    return (2 * (2 * gamma - 1) - alpha) / 32


def eps0_bound(gamma: float, eps1: float) -> float:
    return (1 - gamma) * eps1 / 4


def eps_grid(gamma: float, alpha: float, eps1: float, eps0: float) -> EpsGrid:
    """Build beta_i = i eps0 (i <= L), beta_{L+1} = 1/2 - eps1 and
    lambda_i = 2(beta_i + eps1), with L = floor((1/2 - 6 eps1)/eps0)."""
    if not 0.5 < gamma < 1:
        raise ConstraintError("gamma must lie in (1/2, 1)")
    b1 = eps1_bound(gamma, alpha)
    if not 0 < eps1 < b1:
        raise ConstraintError(f"eps1={eps1} violates {EPS1_RULE} (bound {b1:.6g})")
    b0 = eps0_bound(gamma, eps1)
    if not 0 < eps0 < b0:
        raise ConstraintError(f"eps0={eps0} violates {EPS0_RULE} (bound {b0:.6g})")
    L = int(math.floor((0.5 - 6 * eps1) / eps0 * (1 + 1e-12)))
    betas = np.concatenate([eps0 * np.arange(L + 1), [0.5 - eps1]])
    lambdas = 2 * (betas[: L + 1] + eps1)
    return EpsGrid(gamma, alpha, eps0, eps1, L, betas, lambdas)


# ------------------------------------------------------------ length scales

BIN_ENVELOPE_C = {1: 4 * 4 * 1, 2: 4 * 16 * 2}  # 4 * 4^q * C(q-1)


@dataclass
class LengthScales:
    n: int
    log_l_n: float
    log_lbar_n: float
    log_sqrt_a_n: float
    n_M: int
    n_0: int
    lemma36_holds: bool


def n_M(eps1: float, M: int) -> int:
    """Smallest n >= 1 with a_n^eps1 <= 2^(-M-8)."""
    target = (M + 8) * LN2 / eps1
    n = max(1, int(math.floor((-1 + math.sqrt(1 + 8 * target)) / 2)) - 1)
    while 0.5 * n * (n + 1) < target:
        n += 1
    return n


def n_0(eps0: float, eps1: float) -> int:
    """sup{n : sqrt(a_n) < 2^(-a_n^(-eps0 eps1/4))}, 0 if the set is empty.

    In logs the condition reads n(n+1)/4 > ln 2 exp(eps0 eps1 n(n+1)/8).
    """
    e = eps0 * eps1
    g = lambda y: math.log(y / 4) - math.log(LN2) - e * y / 8
    # g is concave in y = n(n+1) with maximum at y = 8/e
    ypk = 8 / e
    if g(ypk) <= 0:
        return 0
    hi = ypk * 2
    while g(hi) > 0:
        hi *= 2
    y = optimize.brentq(g, ypk, hi, xtol=1e-9, rtol=1e-15)
    n = int(math.floor((-1 + math.sqrt(1 + 4 * y)) / 2)) + 1
    while n >= 1 and not n * (n + 1) / 4 > LN2 * math.exp(e * n * (n + 1) / 8):
        n -= 1
    return n


def log_l(n, beta_next, gamma, alpha, eps1) -> float:
    la = log_a(n)
    return max(math.log(129) + (1 - beta_next) * la,
               (2 / alpha) * (gamma - beta_next - eps1) * la)


def log_lbar(n, beta_i, eps1) -> float:
    return (beta_i + 5 * eps1) * log_a(n)


def length_scales(n, beta_i, beta_next, gamma, alpha, eps1, M, eps0) -> LengthScales:
    """l_n, lbar_n and sqrt(a_n) in logs, n_M, n_0 and the comparison
    l_n < sqrt(a_n) < lbar_n / 2."""
    ll = log_l(n, beta_next, gamma, alpha, eps1)
    lb = log_lbar(n, beta_i, eps1)
    ls = 0.5 * log_a(n)
    holds = ll < ls < lb - LN2
    return LengthScales(n, ll, lb, ls, n_M(eps1, M), n_0(eps0, eps1), holds)


def bin_log_envelope(n, beta_i, beta_next, gamma, alpha, eps1, K0, q) -> float:
    """log of c K0^q l_n / lbar_n with c = 4 * 4^q * C(q-1)."""
    return (math.log(BIN_ENVELOPE_C[q]) + q * math.log(K0)
            + log_l(n, beta_next, gamma, alpha, eps1) - log_lbar(n, beta_i, eps1))
