"""Double integrals against the kernel |w - z|^-alpha + 1 on uniform grids.

Two rules are used. In 1-D the samples are read as a piecewise-linear
interpolant and integrated exactly against |r|^-alpha (product
integration), which makes the singular diagonal harmless and keeps the
rule second order. In 2-D the rule is midpoint off the diagonal with the
exact cell average of |r|^-alpha on the diagonal cell.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.signal import fftconvolve


class QuadratureError(RuntimeError):
    """Quadrature that could not be carried out or did not converge."""


def _antideriv(x, alpha):
    # A'' = |x|^-alpha, A(0) = A'(0) = 0
    if alpha == 1.0:
        ax = np.abs(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(ax > 0, ax * np.log(np.where(ax > 0, ax, 1.0)), 0.0)
        return out
    return np.abs(x) ** (2 - alpha) / ((1 - alpha) * (2 - alpha))


def hat_weights_1d(offsets, alpha: float) -> np.ndarray:
    """Weights int int hat(s) hat(s') |j + s - s'|^-alpha for unit spacing.

    Equivalent to int hat*hat(r) |j + r|^-alpha dr, i.e. the second
    difference of the antiderivative A with A'' = |x|^-alpha.
    """
    j = np.asarray(offsets, dtype=float)
    A = lambda x: _antideriv(x, alpha)
    return A(j + 1) - 2 * A(j) + A(j - 1)


@lru_cache(maxsize=64)
def cell_average_2d(alpha: float) -> float:
    """Mean of |r|^-alpha over the unit square centred at the origin."""
    val, _ = integrate.quad(lambda th: (2 * np.cos(th)) ** (alpha - 2), 0, np.pi / 4,
                            epsabs=1e-14, epsrel=1e-13)
    return 8.0 * val / (2 - alpha)


def kernel_weights(shape, h: float, alpha: float, periodic: bool = False) -> np.ndarray:
    """Singular-part weights M(d) for offsets d, excluding the +1 part.

    For non-periodic use the array covers offsets -(n-1)..(n-1) per axis and
    is centred. For periodic use it is laid out in FFT order over offsets
    taken as minimal images.
    """
    q = len(shape)
    if periodic:
        axes = [np.fft.fftfreq(n, d=1.0 / n) for n in shape]
    else:
        axes = [np.arange(-(n - 1), n, dtype=float) for n in shape]
    if q == 1:
        return h ** (2 - alpha) * hat_weights_1d(axes[0], alpha)
    if q != 2:
        raise QuadratureError("only q = 1, 2 supported")
    d0, d1 = np.meshgrid(*axes, indexing="ij")
    r = np.hypot(d0, d1)
    with np.errstate(divide="ignore"):
        w = np.where(r > 0, r, 1.0) ** (-alpha)
    w[r == 0] = cell_average_2d(alpha)
    return h ** (4 - alpha) * w


def riesz_form(f: np.ndarray, g: np.ndarray, h: float, alpha: float):
    """Return (singular, plus_one) for int int f(w) g(z) (|w-z|^-alpha, 1).

    f and g are samples on the same uniform grid of spacing h in 1-D or
    2-D, taken to vanish outside it.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise QuadratureError("f and g must share a grid")
    q = f.ndim
    w = kernel_weights(f.shape, h, alpha)
    conv = fftconvolve(g, w, mode="full")
    sl = tuple(slice(n - 1, 2 * n - 1) for n in f.shape)
    sing = float(np.sum(f * conv[sl]))
    vol = h ** q
    plus = float(np.sum(f) * vol * np.sum(g) * vol)
    return sing, plus


def gaussian_riesz_moment(s2: float, alpha: float, q: int) -> float:
    """E|X|^-alpha for X ~ N(0, s2 I_q); closed form used as an oracle."""
    from scipy.special import gammaln
    return float(np.exp(-0.5 * alpha * np.log(2 * s2)
                        + gammaln((q - alpha) / 2) - gammaln(q / 2)))
