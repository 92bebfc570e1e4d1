"""Periodic grids, sampled fields and the spectral heat semigroup.

The spatial domain is the torus [0, L)^q with N points per axis. Transforms
use numpy's real FFT, so a field of shape (N,)*q maps to coefficients of
shape (N,)*(q-1) + (N//2 + 1,).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class GridError(ValueError):
    """Invalid grid parameters or mismatched fields."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the torus [0, L)^q.

    Attributes
    ----------
    q : int
        Spatial dimension, 1 or 2.
    L : float
        Side length of the periodic box.
    N : int
        Points per axis, a power of two and at least 8.
    """

    q: int
    L: float
    N: int

    def __post_init__(self):
        if self.q not in (1, 2):
            raise GridError(f"q must be 1 or 2, got {self.q!r}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise GridError(f"L must be positive and finite, got {self.L!r}")
        n = int(self.N)
        if n != self.N or n < 8 or n & (n - 1):
            raise GridError(f"N must be a power of two >= 8, got {self.N!r}")
        object.__setattr__(self, "N", n)
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.q

    @property
    def size(self) -> int:
        return self.N ** self.q

    @property
    def cell_volume(self) -> float:
        return self.h ** self.q

    @cached_property
    def axis(self) -> np.ndarray:
        """Coordinates of the sites along one axis."""
        return np.arange(self.N) * self.h

    @cached_property
    def coords(self) -> tuple:
        """Site coordinates as a tuple of q arrays of shape `shape`."""
        return tuple(np.meshgrid(*([self.axis] * self.q), indexing="ij"))

    @cached_property
    def frequencies(self) -> np.ndarray:
        """Angular frequencies xi_m = 2 pi m / L, m = -N/2 .. N/2-1."""
        m = np.arange(-self.N // 2, self.N // 2)
        return 2 * np.pi * m / self.L

    @cached_property
    def _rfft_axes(self) -> tuple:
        # per-axis angular frequencies in rfftn layout
        full = 2 * np.pi * np.fft.fftfreq(self.N, d=self.h)
        half = 2 * np.pi * np.fft.rfftfreq(self.N, d=self.h)
        return (full,) * (self.q - 1) + (half,)

    @cached_property
    def xi2(self) -> np.ndarray:
        """|xi|^2 on the rfftn coefficient layout."""
        mesh = np.meshgrid(*self._rfft_axes, indexing="ij")
        return sum(k * k for k in mesh)

    def deriv_multiplier(self, axis: int) -> np.ndarray:
        """i*xi_axis on the rfftn layout, with the Nyquist mode set to zero."""
        if not 0 <= axis < self.q:
            raise GridError(f"axis must be in 0..{self.q - 1}, got {axis}")
        k = self._rfft_axes[axis].copy()
        k[self.N // 2] = 0.0
        shape = [1] * self.q
        shape[axis] = k.size
        return 1j * k.reshape(shape)

    def displacement(self, x0) -> tuple:
        """Minimal-image displacement y - x0 of every site, per axis."""
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (self.q,))
        out = []
        for c, a in zip(self.coords, x0):
            d = c - a
            out.append(d - self.L * np.round(d / self.L))
        return tuple(out)

    def describe(self) -> dict:
        return {"q": self.q, "L": self.L, "N": self.N}


def make_grid(q: int, L: float, N: int) -> TorusGrid:
    """Build a TorusGrid, validating q in {1, 2} and N a power of two >= 8."""
    return TorusGrid(q, L, N)


class Field:
    """Real values sampled on a TorusGrid at one time.

    Fields are treated as values: operations return new Fields and the
    stored array is marked read-only.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values):
        arr = np.array(values, dtype=float)
        if arr.shape != grid.shape:
            if arr.size != grid.size:
                raise GridError(
                    f"field needs {grid.size} values, got {arr.size}")
            arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise GridError("field contains NaN or Inf")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    @classmethod
    def constant(cls, grid: TorusGrid, c: float = 0.0) -> "Field":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "Field":
        """Sample fn(*coords) on the grid."""
        return cls(grid, np.broadcast_to(fn(*grid.coords), grid.shape))

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise GridError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def mean(self) -> float:
        return float(np.mean(self.values))

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def __repr__(self):
        return f"Field(q={self.grid.q}, N={self.grid.N}, sup={self.sup_norm():.3g})"


def heat_multiplier(grid: TorusGrid, t: float) -> np.ndarray:
    """Spectral multiplier exp(-|xi|^2 t / 2) of P_t on the rfftn layout."""
    if t < 0:
        raise GridError(f"heat semigroup time must be >= 0, got {t}")
    return np.exp(-0.5 * t * grid.xi2)


def heat_apply_array(grid: TorusGrid, values: np.ndarray, t: float) -> np.ndarray:
    """P_t applied to raw arrays; leading axes beyond the grid are batch axes."""
    if t < 0:
        raise GridError(f"heat semigroup time must be >= 0, got {t}")
    if t == 0:
        return np.array(values, dtype=float)
    axes = tuple(range(-grid.q, 0))
    coef = np.fft.rfftn(values, axes=axes)
    coef *= heat_multiplier(grid, t)
    return np.fft.irfftn(coef, s=grid.shape, axes=axes)


def heat_semigroup_apply(f: Field, t: float) -> Field:
    """Return P_t f, the periodic heat flow with generator Laplacian/2.

    P_0 f is f itself (no transform round trip).
    """
    if t < 0:
        raise GridError(f"heat semigroup time must be >= 0, got {t}")
    if t == 0:
        return f
    return Field(f.grid, heat_apply_array(f.grid, f.values, t))


def spectral_gradient(f: Field) -> list:
    """Spectral partial derivatives of f along each axis (0-based)."""
    grid = f.grid
    axes = tuple(range(grid.q))
    coef = np.fft.rfftn(f.values, axes=axes)
    return [Field(grid, np.fft.irfftn(coef * grid.deriv_multiplier(a), s=grid.shape, axes=axes))
            for a in range(grid.q)]


@dataclass(frozen=True)
class ParabolicPoint:
    """A space-time point (t, x) with x reduced modulo L."""

    t: float
    x: tuple
    L: float

    def __post_init__(self):
        if not np.isfinite(self.t) or self.t < 0:
            raise GridError(f"time must be finite and >= 0, got {self.t}")
        x = tuple(float(v) % self.L for v in np.atleast_1d(self.x))
        object.__setattr__(self, "x", x)


def parabolic_distance(p: ParabolicPoint, r: ParabolicPoint) -> float:
    """d((t,x),(t',x')) = sqrt|t'-t| + |x'-x| with torus distance in space."""
    if p.L != r.L or len(p.x) != len(r.x):
        raise GridError("points live on different domains")
    d = np.subtract(r.x, p.x)
    d -= p.L * np.round(d / p.L)
    return float(np.sqrt(abs(r.t - p.t)) + np.sqrt(np.sum(d * d)))
