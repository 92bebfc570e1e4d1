"""Gaussian noise, white in time, with Riesz spatial correlation |r|^-alpha.

Increments are synthesized spectrally on the torus. The field

    dW = sqrt(dt) * irfftn( sqrt(lambda_m / h^q) * rfftn(eps) ),

with eps iid standard normal on the grid, has covariance dt * k_N(x - y)
where k_N(r) = L^-q sum_m lambda_m exp(i xi_m r) is the periodized
(and band-limited) kernel.

Random numbers come from a Philox generator keyed by (seed, stream_id)
with the step index in the top counter word, so an increment depends
only on (seed, stream_id, step_index).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from scipy.special import gammaln
from scipy.stats import linregress

from .grid import Field, TorusGrid

ZERO_MODE_POLICIES = ("riesz_matched", "clamp_to_first_mode", "zero")
_MASK64 = (1 << 64) - 1


class NoiseError(ValueError):
    """Invalid noise parameters."""


def check_alpha(alpha: float, q: int) -> None:
    if not (np.isfinite(alpha) and 0 < alpha < min(2, q)):
        raise NoiseError(f"alpha must lie in (0, 2∧q); got alpha={alpha} with q={q}")


@dataclass(frozen=True)
class NoiseSpec:
    """Parameters of the driving noise.

    zero_mode_policy selects lambda_0: "riesz_matched" makes the periodized
    kernel equal |r|^-alpha plus a smooth correction vanishing at r = 0;
    "clamp_to_first_mode" copies the |m| = 1 value; "zero" removes the mean.
    include_constant_part adds an independent spatially constant Brownian
    increment of unit intensity (the "+1" of the kernel bound).
    """

    alpha: float
    zero_mode_policy: str = "riesz_matched"
    include_constant_part: bool = False
    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and 0 < self.alpha < 2):
            raise NoiseError(f"alpha must lie in (0, 2∧q); got alpha={self.alpha}")
        if self.zero_mode_policy not in ZERO_MODE_POLICIES:
            raise NoiseError(f"zero_mode_policy must be one of {ZERO_MODE_POLICIES}")
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v <= _MASK64:
                raise NoiseError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def with_stream(self, stream_id: int, seed: int | None = None) -> "NoiseSpec":
        return NoiseSpec(self.alpha, self.zero_mode_policy, self.include_constant_part,
                         self.seed if seed is None else seed, stream_id)

    def describe(self) -> dict:
        return {"alpha": self.alpha, "zero_mode_policy": self.zero_mode_policy,
                "include_constant_part": self.include_constant_part,
                "seed": int(self.seed), "stream_id": int(self.stream_id)}


@dataclass(frozen=True)
class NoiseIncrement:
    field: Field
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise NoiseError("increment dt must be > 0")


def riesz_constant(alpha: float, q: int) -> float:
    """c(alpha, q) with |x|^-alpha having Fourier transform c |xi|^(alpha - q)."""
    return float(np.exp(0.5 * q * np.log(np.pi) + (q - alpha) * np.log(2)
                        + gammaln((q - alpha) / 2) - gammaln(alpha / 2)))


@lru_cache(maxsize=32)
def lattice_zeta(alpha: float, q: int) -> float:
    """sum over nonzero n in Z^q of |n|^-alpha, by analytic continuation."""
    if q == 1:
        return float(2 * mpmath.zeta(alpha))
    s = alpha / 2
    return float(4 * mpmath.zeta(s) * mpmath.dirichlet(s, [0, 1, 0, -1]))


def matched_zero_mode(alpha: float, q: int, L: float) -> float:
    """lambda_0 for which the periodized kernel is |r|^-alpha + O(r^2)."""
    return -lattice_zeta(alpha, q) * L ** (q - alpha)


def riesz_spectrum(grid: TorusGrid, alpha: float,
                   zero_mode_policy: str = "riesz_matched") -> np.ndarray:
    """Multipliers lambda_m = c(alpha, q) |xi_m|^(alpha - q) on the fftn layout.

    The array has shape grid.shape, with frequencies ordered as in
    numpy.fft.fftfreq along each axis.
    """
    check_alpha(alpha, grid.q)
    if zero_mode_policy not in ZERO_MODE_POLICIES:
        raise NoiseError(f"zero_mode_policy must be one of {ZERO_MODE_POLICIES}")
    k = 2 * np.pi * np.fft.fftfreq(grid.N, d=grid.h)
    mesh = np.meshgrid(*([k] * grid.q), indexing="ij")
    xi = np.sqrt(sum(m * m for m in mesh))
    c = riesz_constant(alpha, grid.q)
    lam = np.zeros(grid.shape)
    nz = xi > 0
    lam[nz] = c * xi[nz] ** (alpha - grid.q)
    zero = (0,) * grid.q
    if zero_mode_policy == "clamp_to_first_mode":
        lam[zero] = c * (2 * np.pi / grid.L) ** (alpha - grid.q)
    elif zero_mode_policy == "riesz_matched":
        lam[zero] = matched_zero_mode(alpha, grid.q, grid.L)
    return lam


def periodized_kernel(grid: TorusGrid, alpha: float,
                      zero_mode_policy: str = "riesz_matched") -> np.ndarray:
    """k_N on the grid lags (fftn order), the covariance of dW per unit dt."""
    lam = riesz_spectrum(grid, alpha, zero_mode_policy)
    return np.real(np.fft.ifftn(lam)) / grid.cell_volume


def spectrum_csv(grid: TorusGrid, alpha: float, zero_mode_policy: str = "riesz_matched") -> str:
    """Spectrum as CSV rows (m indices, |xi|, lambda) for debugging."""
    lam = riesz_spectrum(grid, alpha, zero_mode_policy)
    m = np.fft.fftfreq(grid.N, d=1.0 / grid.N).astype(int)
    mesh = np.meshgrid(*([m] * grid.q), indexing="ij")
    xi = 2 * np.pi / grid.L * np.sqrt(sum(a * a for a in mesh))
    names = ["m%d" % i for i in range(grid.q)]
    lines = [",".join(names + ["xi_abs", "lambda"])]
    for idx in np.ndindex(grid.shape):
        lines.append(",".join([str(mm[idx]) for mm in mesh] + [repr(float(xi[idx])),
                                                               repr(float(lam[idx]))]))
    return "\n".join(lines) + "\n"


@lru_cache(maxsize=16)
def _unit_amplitude(grid: TorusGrid, alpha: float, policy: str) -> np.ndarray:
    lam = riesz_spectrum(grid, alpha, policy)
    amp = np.sqrt(lam[..., : grid.N // 2 + 1] / grid.cell_volume)
    amp.setflags(write=False)
    return amp


class NoiseStream:
    """Increment source for one (seed, stream_id) key.

    ``draws`` counts the increments produced, which lets callers check
    how much noise a computation consumed.
    """

    def __init__(self, grid: TorusGrid, spec: NoiseSpec, dt: float):
        if not dt > 0:
            raise NoiseError("dt must be > 0")
        check_alpha(spec.alpha, grid.q)
        self.grid = grid
        self.spec = spec
        self.dt = float(dt)
        self._amp = np.sqrt(self.dt) * _unit_amplitude(grid, spec.alpha, spec.zero_mode_policy)
        self._bitgen = np.random.Philox(key=[spec.seed & _MASK64, spec.stream_id & _MASK64])
        self._rng = np.random.Generator(self._bitgen)
        self._state = self._bitgen.state
        self.draws = 0

    def _seek(self, step_index: int):
        if step_index < 0:
            raise NoiseError("step_index must be >= 0")
        st = self._state
        st["state"]["counter"] = np.array([0, 0, 0, step_index], dtype=np.uint64)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        self._bitgen.state = st

    def normals(self, step_index: int):
        """The standard normals behind increment ``step_index``.

        Returns (eps, c) with eps of grid shape and c the scalar used for
        the constant component (0.0 when that component is off).
        """
        self._seek(step_index)
        eps = self._rng.standard_normal(self.grid.shape)
        c = self._rng.standard_normal() if self.spec.include_constant_part else 0.0
        return eps, c

    def synthesize(self, eps: np.ndarray, c=0.0) -> np.ndarray:
        """Map normals to increment values; leading batch axes allowed."""
        axes = tuple(range(-self.grid.q, 0))
        out = np.fft.irfftn(self._amp * np.fft.rfftn(eps, axes=axes), s=self.grid.shape, axes=axes)
        if self.spec.include_constant_part:
            c = np.asarray(c, dtype=float)
            out += np.sqrt(self.dt) * c.reshape(c.shape + (1,) * self.grid.q)
        return out

    def increment_values(self, step_index: int) -> np.ndarray:
        eps, c = self.normals(step_index)
        self.draws += 1
        return self.synthesize(eps, c)

    def increment(self, step_index: int) -> NoiseIncrement:
        return NoiseIncrement(Field(self.grid, self.increment_values(step_index)), self.dt)


def sample_increment(grid: TorusGrid, spec: NoiseSpec, dt: float,
                     step_index: int) -> NoiseIncrement:
    """One noise increment over a slab of length dt, keyed by
    (spec.seed, spec.stream_id, step_index)."""
    return NoiseStream(grid, spec, dt).increment(step_index)


def pairing(inc, phi) -> float:
    """Grid quadrature of <dW, phi>."""
    a = inc.field if isinstance(inc, NoiseIncrement) else inc
    b = phi.values if isinstance(phi, Field) else np.asarray(phi)
    return float(np.sum(a.values * b) * a.grid.cell_volume)


def pairing_variance(grid: TorusGrid, spec: NoiseSpec, dt: float, phi) -> float:
    """dt int int phi(x) phi(y) k_N(x - y) dx dy by direct double sum."""
    v = phi.values if isinstance(phi, Field) else np.asarray(phi, dtype=float)
    k = periodized_kernel(grid, spec.alpha, spec.zero_mode_policy)
    if spec.include_constant_part:
        k = k + 1.0
    idx = np.indices(grid.shape).reshape(grid.q, -1)
    flat = v.reshape(-1)
    total = 0.0
    for j in range(flat.size):
        lag = tuple(((idx[:, j:j + 1] - idx) % grid.N))
        total += flat[j] * np.sum(flat * k[lag])
    return float(dt * total * grid.cell_volume ** 2)


@dataclass
class CovarianceEstimate:
    lags: np.ndarray
    cov: np.ndarray
    stderr: np.ndarray
    slope: float
    slope_stderr: float

    def rows(self):
        return list(zip(self.lags.tolist(), self.cov.tolist(), self.stderr.tolist()))


def empirical_covariance(spec: NoiseSpec, grid: TorusGrid, dt: float, replicas: int,
                         lags, chunk: int = 100, fit_lags=None) -> CovarianceEstimate:
    """Monte Carlo covariance of dW at spatial lags along axis 0.

    Each replica uses stream (spec.seed, spec.stream_id + r). The estimate
    averages x -> dW(x) dW(x + r) over all sites, then over replicas; the
    standard error is the replica spread over sqrt(replicas). The log-log
    slope is fitted over ``fit_lags`` (default: all positive lags).
    """
    if replicas < 100:
        raise NoiseError("need at least 100 replicas")
    lags = np.asarray(lags, dtype=float)
    shifts = np.rint(lags / grid.h).astype(int)
    pos = shifts[shifts > 0]
    if np.any(pos < 4) or np.any(lags > grid.L / 8 + 1e-12) or np.any(lags < 0):
        raise NoiseError("lags must be 0 or lie in [4h, L/8]")
    per = np.empty((replicas, lags.size))
    base = NoiseStream(grid, spec, dt)
    for start in range(0, replicas, chunk):
        stop = min(start + chunk, replicas)
        eps, cs = [], []
        for r in range(start, stop):
            sid = (spec.stream_id + r) & _MASK64
            e, c = NoiseStream(grid, spec.with_stream(sid), dt).normals(0)
            eps.append(e)
            cs.append(c)
        x = base.synthesize(np.array(eps), np.array(cs))
        for j, k in enumerate(shifts):
            per[start:stop, j] = np.mean((x * np.roll(x, -k, axis=1)).reshape(stop - start, -1),
                                         axis=1)
    cov = per.mean(axis=0)
    err = per.std(axis=0, ddof=1) / np.sqrt(replicas)
    sel = lags > 0 if fit_lags is None else np.isin(lags, np.asarray(fit_lags, dtype=float))
    slope, slope_err = np.nan, np.nan
    if np.count_nonzero(sel) >= 3 and np.all(cov[sel] > 0):
        fit = linregress(np.log(lags[sel]), np.log(cov[sel]))
        slope, slope_err = float(fit.slope), float(fit.stderr)
    return CovarianceEstimate(lags, cov, err, slope, slope_err)
