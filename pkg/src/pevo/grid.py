"""Periodic grid, spectral transforms, D_x multipliers and Sobolev norms.

Conventions used by every other module:

* nodes ``x_j = -L + j*(2L/N)``, ``j = 0..N-1``;
* frequencies ``xi_k = (pi/L)*k`` stored in numpy FFT order, so the Nyquist
  index ``k = -N/2`` sits at position ``N/2``;
* ``hat(u) = fft(u)`` without scaling; the continuum L2 norm on [-L, L) is
  ``sqrt(2L/N**2 * sum |hat(u)_k|**2)`` (Parseval with quadrature weight 2L/N).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ParameterError(ValueError):
    """A numerical parameter lies outside its admissible domain."""


class GridMismatch(ValueError):
    """Two objects that must share a grid do not."""


def bracket(xi, h=1.0):
    """Regularized modulus ``<xi>_h = sqrt(h**2 + xi**2)``, ``h >= 1``."""
    if np.any(np.asarray(h) < 1):
        raise ParameterError(f"bracket parameter h must be >= 1, got {h}")
    xi = np.asarray(xi, dtype=float)
    return np.sqrt(h * h + xi * xi)


def japanese(x):
    """``<x> = <x>_1``."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + x * x)


@dataclass(frozen=True)
class Grid:
    """Equispaced periodic grid on [-L, L) with N (even) nodes."""

    N: int = 256
    L: float = 40.0
    x: np.ndarray = field(init=False, repr=False, compare=False)
    xi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N <= 0 or self.N % 2:
            raise ParameterError(f"N must be a positive even integer, got {self.N}")
        if self.L <= 0:
            raise ParameterError(f"L must be positive, got {self.L}")
        x = -self.L + np.arange(self.N) * (2.0 * self.L / self.N)
        xi = np.fft.fftfreq(self.N, d=1.0 / self.N) * (np.pi / self.L)
        x.setflags(write=False)
        xi.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def dxi(self) -> float:
        return np.pi / self.L

    @property
    def nyquist(self) -> int:
        """Position of the Nyquist mode in FFT order."""
        return self.N // 2

    @property
    def xi_max(self) -> float:
        return np.pi * self.N / (2.0 * self.L)

    def mode(self, k: int) -> np.ndarray:
        """The Fourier mode ``exp(i xi_k x)`` sampled on the nodes."""
        return np.exp(1j * (np.pi / self.L) * k * self.x)

    # transforms ---------------------------------------------------------
    def fft(self, u):
        return np.fft.fft(u, axis=-1)

    def ifft(self, U):
        return np.fft.ifft(U, axis=-1)

    def l2_weight(self) -> float:
        return 2.0 * self.L / self.N

    def inner(self, u, v) -> complex:
        """Quadrature L2 inner product ``<u, v> = (2L/N) sum u conj(v)``."""
        return self.l2_weight() * np.vdot(v, u)

    def check(self, other: "Grid"):
        if other is not self and (other.N != self.N or other.L != self.L):
            raise GridMismatch(f"grid ({self.N}, {self.L}) vs ({other.N}, {other.L})")

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.N * factor, self.L)


@dataclass(frozen=True)
class Field:
    """Complex samples of a function of x on a grid."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.grid.N,):
            raise GridMismatch(f"field has shape {v.shape}, grid N = {self.grid.N}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __add__(self, other):
        self.grid.check(other.grid)
        return Field(self.values + other.values, self.grid)

    def __sub__(self, other):
        self.grid.check(other.grid)
        return Field(self.values - other.values, self.grid)

    def __mul__(self, c):
        return Field(self.values * c, self.grid)

    __rmul__ = __mul__


def _values(u):
    return u.values if isinstance(u, Field) else np.asarray(u)


def sobolev_norm(u, s: float, h: float = 1.0, grid: Grid | None = None) -> float:
    """``||u||_s = (sum_k <xi_k>_h^{2s} |u_k|^2)^{1/2}``, L2-normalized at s = 0.

    ``u`` may be a :class:`Field` or a raw array (then ``grid`` is needed).
    Raw arrays of shape (..., N) return an array of norms.
    """
    if isinstance(u, Field):
        grid = u.grid
    elif grid is None:
        raise TypeError("raw arrays need an explicit grid")
    U = grid.fft(_values(u))
    w = bracket(grid.xi, h) ** (2.0 * s)
    sq = (2.0 * grid.L / grid.N**2) * np.sum(w * np.abs(U) ** 2, axis=-1)
    return np.sqrt(sq)


def derivative(u, j: int, grid: Grid | None = None, max_order: int | None = None):
    """``D_x^j u`` with ``D = -i d/dx``, via the exact multiplier ``xi**j``.

    For real input and odd ``j`` the Nyquist coefficient is dropped so the
    result is the derivative of a real trigonometric interpolant.
    """
    if j < 0:
        raise ParameterError("derivative order must be >= 0")
    if max_order is not None and j > max_order:
        raise ParameterError(f"derivative order {j} exceeds configured maximum {max_order}")
    is_field = isinstance(u, Field)
    if is_field:
        grid = u.grid
    elif grid is None:
        raise TypeError("raw arrays need an explicit grid")
    vals = _values(u)
    if j == 0:
        out = np.asarray(vals, dtype=complex)
        return Field(out, grid) if is_field else out.copy()
    U = grid.fft(vals)
    mult = grid.xi ** j
    if j % 2 == 1 and not np.any(np.imag(vals)):
        mult = mult.copy()
        mult[grid.nyquist] = 0.0
    out = grid.ifft(mult * U)
    return Field(out, grid) if is_field else out


def _mode_numbers(grid: Grid) -> np.ndarray:
    return np.rint(grid.xi * grid.L / np.pi).astype(int)


def embed_index(grid: Grid, fine: Grid) -> np.ndarray:
    """Positions of the coarse modes inside the FFT-ordered spectrum of ``fine``.

    The coarse Nyquist mode is identified with the fine mode of the same
    (negative) frequency, so embedding followed by truncation is the identity.
    """
    if fine.L != grid.L or fine.N < grid.N:
        raise GridMismatch("fine grid must share L and have at least as many nodes")
    return _mode_numbers(grid) % fine.N


def interpolate(u, grid: Grid, fine: Grid) -> np.ndarray:
    """Trigonometric interpolation of coarse samples onto ``fine`` nodes."""
    U = np.fft.fft(_values(u), axis=-1)
    Uf = np.zeros(U.shape[:-1] + (fine.N,), dtype=complex)
    Uf[..., embed_index(grid, fine)] = U * (fine.N / grid.N)
    return np.fft.ifft(Uf, axis=-1)


def restrict(uf, fine: Grid, grid: Grid) -> np.ndarray:
    """Keep the coarse band of a fine-grid function and resample on ``grid``."""
    Uf = np.fft.fft(np.asarray(uf), axis=-1)
    U = Uf[..., embed_index(grid, fine)] * (grid.N / fine.N)
    return np.fft.ifft(U, axis=-1)
