"""Sampled symbols a(x, xi), left (Kohn-Nirenberg) quantization and positivity checks."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .grid import Field, Grid, GridMismatch, bracket, embed_index


class NumericError(RuntimeError):
    """A numerical kernel failed (eigen-solver, quadrature, ...)."""


class ResolutionError(ValueError):
    """The grid is too coarse for the requested derivative check."""


@dataclass(frozen=True)
class Symbol:
    """Samples ``A(x_j, xi_k)`` on grid x frequency (frequency axis in FFT order).

    ``evaluator(x, xi)`` optionally evaluates the same symbol off the lattice;
    it is used for derivative checks at refined steps.
    """

    samples: np.ndarray
    grid: Grid
    order: float = 0.0
    h: float = 1.0
    evaluator: Callable | None = field(default=None, compare=False, repr=False)
    x_independent: bool = False

    def __post_init__(self):
        a = np.asarray(self.samples, dtype=complex)
        if a.shape != (self.grid.N, self.grid.N):
            raise GridMismatch(f"symbol shape {a.shape} does not match N = {self.grid.N}")
        if not np.all(np.isfinite(a)):
            raise ValueError("symbol samples are not finite")
        a.setflags(write=False)
        object.__setattr__(self, "samples", a)

    @classmethod
    def from_function(cls, func, grid, order=0.0, h=1.0):
        X, XI = np.meshgrid(grid.x, grid.xi, indexing="ij")
        return cls(np.broadcast_to(func(X, XI), X.shape), grid, order, h, evaluator=func)

    @classmethod
    def multiplier(cls, m, grid, order=0.0, h=1.0):
        """x-independent symbol from values m(xi_k) (FFT order)."""
        m = np.broadcast_to(np.asarray(m, dtype=complex), (grid.N,))
        return cls(np.tile(m, (grid.N, 1)), grid, order, h, x_independent=True)

    @classmethod
    def coefficient(cls, c, grid):
        """xi-independent symbol c(x_j): quantizes to pointwise multiplication."""
        c = np.broadcast_to(np.asarray(c, dtype=complex), (grid.N,))
        return cls(np.tile(c[:, None], (1, grid.N)), grid, 0.0)

    def __add__(self, other):
        self.grid.check(other.grid)
        return Symbol(self.samples + other.samples, self.grid, max(self.order, other.order),
                      self.h, x_independent=self.x_independent and other.x_independent)

    def scale(self, c):
        return Symbol(self.samples * c, self.grid, self.order, self.h,
                      x_independent=self.x_independent)


@lru_cache(maxsize=8)
def _phase(N: int) -> np.ndarray:
    j = np.arange(N)
    E = np.exp(2j * np.pi * np.outer(j, j) / N)
    E.setflags(write=False)
    return E


@lru_cache(maxsize=8)
def _dft(N: int) -> np.ndarray:
    j = np.arange(N)
    F = np.exp(-2j * np.pi * np.outer(j, j) / N)
    F.setflags(write=False)
    return F


def quantize_apply(a: Symbol, u) -> np.ndarray | Field:
    """Left quantization ``(Au)(x_j) = sum_k a(x_j, xi_k) u_k exp(i xi_k x_j)``."""
    vals = u.values if isinstance(u, Field) else np.asarray(u)
    if isinstance(u, Field):
        a.grid.check(u.grid)
    elif vals.shape[-1] != a.grid.N:
        raise GridMismatch("field length does not match symbol grid")
    U = np.fft.fft(vals)
    if a.x_independent:
        out = np.fft.ifft(a.samples[0] * U)
    else:
        out = (a.samples * _phase(a.grid.N)) @ U / a.grid.N
    return Field(out, a.grid) if isinstance(u, Field) else out


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense grid-basis realization of a quantized symbol."""

    entries: np.ndarray
    grid: Grid
    meta: dict = field(default_factory=dict, compare=False)

    def apply(self, u):
        vals = u.values if isinstance(u, Field) else u
        out = self.entries @ vals
        return Field(out, self.grid) if isinstance(u, Field) else out

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            return OperatorMatrix(self.entries @ other.entries, self.grid)
        return self.apply(other)

    def fourier(self) -> np.ndarray:
        """Matrix in the unitary Fourier basis ``Q A Q^*`` with ``Q = F / sqrt(N)``."""
        F = _dft(self.grid.N)
        return F @ self.entries @ F.conj().T / self.grid.N

    @classmethod
    def from_fourier(cls, Ah, grid, meta=None):
        """Inverse of :meth:`fourier`."""
        F = _dft(grid.N)
        return cls(F.conj().T @ Ah @ F / grid.N, grid, meta or {})

    def to_csv(self, path):
        """Row-major dump, one ``re,im`` pair per entry."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in self.entries:
                w.writerow([f"{z:.17g}" for v in row for z in (v.real, v.imag)])


def to_matrix(a: Symbol) -> OperatorMatrix:
    N = a.grid.N
    if a.x_independent:
        F = _dft(N)
        ent = (F.conj().T * a.samples[0]) @ F / N
    else:
        ent = (a.samples * _phase(N)) @ _dft(N) / N
    return OperatorMatrix(ent, a.grid, {"order": a.order, "h": a.h})


def differential_matrix(coeffs, grid: Grid) -> OperatorMatrix:
    """Matrix of ``sum_j c_j(x) D_x^j`` from a list of coefficient samples."""
    N = grid.N
    F = _dft(N)
    Finv = F.conj().T / N
    ent = np.zeros((N, N), dtype=complex)
    for j, c in enumerate(coeffs):
        if c is None:
            continue
        c = np.broadcast_to(np.asarray(c, dtype=complex), (N,))
        if not np.any(c):
            continue
        ent += c[:, None] * ((Finv * grid.xi**j) @ F)
    return OperatorMatrix(ent, grid)


def restrict_operator(Af: np.ndarray, fine: Grid, grid: Grid) -> OperatorMatrix:
    """Galerkin restriction of a fine-grid matrix to the coarse band of modes."""
    Fh = np.fft.fft(np.fft.ifft(Af, axis=1), axis=0)
    idx = embed_index(grid, fine)
    return OperatorMatrix.from_fourier(Fh[np.ix_(idx, idx)], grid)


def dealiased_differential_matrix(coeffs, grid: Grid, pad: int = 2) -> OperatorMatrix:
    """``sum_j c_j(x) D^j`` with products formed on a ``pad``-times finer grid.

    ``coeffs[j]`` is either None, an array on the fine grid, or a callable of x.
    The result acts on the coarse band without wrap-around of product modes.
    """
    fine = grid.refine(pad)
    cf = [c(fine.x) if callable(c) else c for c in coeffs]
    return restrict_operator(differential_matrix(cf, fine).entries, fine, grid)


# ---------------------------------------------------------------------------
# finite differences

def fd_weights(m: int, offsets) -> np.ndarray:
    """Weights of the m-th derivative at 0 on the given node offsets (Fornberg)."""
    z = np.asarray(offsets, dtype=float)
    n = len(z)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, z[0]
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, z[i]
        for j in range(i):
            c3 = z[i] - z[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def central_offsets(m: int, accuracy: int = 4) -> np.ndarray:
    half = (m + 1) // 2 - 1 + accuracy // 2
    return np.arange(-half, half + 1)


def _lattice_derivative(a, m, step, axis, accuracy=4):
    """m-th derivative along ``axis`` by a central stencil; invalid edges become nan."""
    if m == 0:
        return a
    off = central_offsets(m, accuracy)
    if len(off) > a.shape[axis] // 2:
        raise ResolutionError(f"{a.shape[axis]} samples cannot resolve derivative order {m}")
    w = fd_weights(m, off) / step**m
    out = np.zeros_like(a)
    for o, wk in zip(off, w):
        out = out + wk * np.roll(a, -o, axis=axis)
    half = off[-1]
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(0, half)
    out[tuple(idx)] = np.nan
    idx[axis] = slice(a.shape[axis] - half, None)
    out[tuple(idx)] = np.nan
    return out


@dataclass
class OrderTable:
    """Constants ``C_{alpha,beta}`` of a symbol-class estimate."""

    order: float
    constants: dict
    refined: dict | None = None
    diverging: list = field(default_factory=list)

    def max_constant(self) -> float:
        return max(self.constants.values())


def symbol_derivatives(a: Symbol, alpha: int, beta: int, refine: int = 1):
    """``d_xi^alpha D_x^beta a`` on the lattice (or an interior sub-lattice).

    Returns ``(values, xi)`` with values on an ascending-xi layout and nan where
    the stencil does not fit.  With ``refine > 1`` and an evaluator, derivatives
    are taken with steps ``dx/refine``, ``dxi/refine`` at the lattice points.
    """
    g = a.grid
    order = np.argsort(g.xi)
    xi = g.xi[order]
    if refine > 1 and a.evaluator is not None:
        hx, hxi = g.dx / refine, g.dxi / refine
        offx = central_offsets(beta) if beta else np.array([0])
        offk = central_offsets(alpha) if alpha else np.array([0])
        wx = fd_weights(beta, offx) / hx**beta if beta else np.array([1.0])
        wk = fd_weights(alpha, offk) / hxi**alpha if alpha else np.array([1.0])
        X, XI = np.meshgrid(g.x, xi, indexing="ij")
        out = np.zeros(X.shape, dtype=complex)
        for ox, cx in zip(offx, wx):
            for ok, ck in zip(offk, wk):
                out += cx * ck * a.evaluator(X + ox * hx, XI + ok * hxi)
        return out * (-1j) ** beta, xi
    vals = a.samples[:, order]
    if beta:
        if a.x_independent:
            vals = np.zeros_like(vals)
        else:
            vals = _lattice_derivative(vals, beta, g.dx, 0) * (-1j) ** beta
    if alpha:
        vals = _lattice_derivative(vals, alpha, g.dxi, 1)
    return vals, xi


def verify_symbol_order(a: Symbol, alpha_max: int, beta_max: int, order: float | None = None,
                        refine: int = 2, growth_tol: float = 0.25) -> OrderTable:
    """Estimate ``C_{alpha,beta} = sup |d_xi^alpha D_x^beta a| / <xi>_h^{m-alpha}``.

    With an evaluator the table is recomputed at steps divided by ``refine`` and
    entries that grow by more than ``growth_tol`` are flagged as diverging.
    """
    if alpha_max > 7 or beta_max > 7:
        raise ResolutionError("derivative orders above 7 are not supported")
    m = a.order if order is None else order
    table, fine, diverging = {}, {}, []
    for al in range(alpha_max + 1):
        for be in range(beta_max + 1):
            d, xi = symbol_derivatives(a, al, be)
            r = np.abs(d) / bracket(xi, a.h) ** (m - al)
            table[(al, be)] = float(np.nanmax(r))
            if a.evaluator is not None and refine > 1:
                d2, _ = symbol_derivatives(a, al, be, refine=refine)
                fine[(al, be)] = float(np.nanmax(np.abs(d2) / bracket(xi, a.h) ** (m - al)))
                if fine[(al, be)] > (1 + growth_tol) * table[(al, be)] + 1e-12:
                    diverging.append((al, be))
    return OrderTable(m, table, fine or None, diverging)


def garding_defect(A: OperatorMatrix, order_shift: float = 0.0, h: float = 1.0) -> float:
    """Smallest value of ``Re<Au, u> / ||u||^2_{order_shift}`` over the discrete space.

    Computed as the minimum eigenvalue of ``W^{-1/2} sym(A) W^{-1/2}`` in the
    unitary Fourier basis, where ``sym`` is the Hermitian part and W the
    diagonal weight ``<xi>_h^{2 order_shift}``.
    """
    Ah = A.fourier()
    H = 0.5 * (Ah + Ah.conj().T)
    wi = bracket(A.grid.xi, h) ** (-order_shift)
    H = wi[:, None] * H * wi[None, :]
    try:
        ev = np.linalg.eigvalsh(H)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigen-solver failed; cond(A) = {np.linalg.cond(A.entries):.3e}") from exc
    return float(ev[0])


def dump_defects_csv(rows, path):
    """Write ``(label, value)`` defect rows for offline inspection."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "defect"])
        for label, val in rows:
            w.writerow([label, f"{val:.17g}"])
