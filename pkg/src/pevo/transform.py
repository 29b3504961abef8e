"""The change-of-variable symbols lambda_{p-k}, Lambda, e^{+-Lambda} and their inverse."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .cutoffs import CutoffPair
from .grid import Field, Grid, ParameterError, bracket, japanese
from .symbols import (NumericError, OperatorMatrix, Symbol, differential_matrix, quantize_apply,
                      restrict_operator, to_matrix)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
EXP_LIMIT = 40.0


def _cumulative_integral(xabs, B, a, sub):
    """``int_0^{xabs} <y>^{-a} psi(<y>/B) dy`` for every (B, xabs) pair.

    ``xabs`` must be sorted ascending; composite 8-point Gauss-Legendre with
    ``sub`` panels per gap between consecutive abscissae.
    """
    from .cutoffs import psi

    edges = np.concatenate([[0.0], xabs])
    lo = edges[:-1, None] + (edges[1:] - edges[:-1])[:, None] * (np.arange(sub) / sub)[None, :]
    width = ((edges[1:] - edges[:-1]) / sub)[:, None]
    y = lo[..., None] + width[..., None] * (0.5 * (_GL_NODES + 1.0))
    wts = width[..., None] * 0.5 * _GL_WEIGHTS
    yb = japanese(y)
    g = yb[None] ** (-a) * psi(yb[None] / B[:, None, None, None])
    panel = np.sum(g * wts[None], axis=(2, 3))
    return np.cumsum(panel, axis=1)


def lambda_integral(x, B, a, sub=4, check=True):
    """Signed x-integral of the lambda_{p-k} density on arbitrary x, B arrays.

    Returns an array shaped like ``np.broadcast(x, B)``.
    """
    x, B = np.broadcast_arrays(np.asarray(x, float), np.asarray(B, float))
    ux, inv_x = np.unique(np.abs(x), return_inverse=True)
    uB, inv_B = np.unique(B, return_inverse=True)
    nz = ux > 0
    vals = np.zeros((len(uB), len(ux)))
    if np.any(nz):
        cur = _cumulative_integral(ux[nz], uB, a, sub)
        while check:
            fine = _cumulative_integral(ux[nz], uB, a, 2 * sub)
            err = np.max(np.abs(fine - cur))
            cur, sub = fine, 2 * sub
            if err <= 1e-10 * max(1.0, np.max(np.abs(fine))):
                break
            if sub > 256:
                raise NumericError(f"lambda quadrature not converged (difference {err:.2e})")
        vals[:, nz] = cur
    out = vals[inv_B.reshape(B.shape), inv_x.reshape(x.shape)]
    return np.sign(x) * out


def lambda_function(k, p, M, h, cutoffs: CutoffPair, L=None):
    """``(x, xi) -> lambda_{p-k}(x, xi)``; ``L`` enables the periodic edge taper."""
    a = (p - k) / (p - 1)

    def lam(x, xi):
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        bxi = bracket(xi, h)
        w = cutoffs.omega(xi / h)
        out = np.zeros(x.shape)
        on = w != 0
        if M == 0 or not np.any(on):
            return out
        integ = lambda_integral(x[on], bxi[on] ** (p - 1), a)
        out[on] = M * w[on] * integ * bxi[on] ** (1 - k)
        if L is not None:
            out *= cutoffs.taper(x, L)
        return out

    return lam


def build_lambda(k: int, M: float, h: float, grid: Grid, cutoffs: CutoffPair,
                 periodic: bool = True) -> Symbol:
    """Sample ``lambda_{p-k}`` on grid x frequency (real valued, order 0 or log)."""
    p = cutoffs.p
    if not 1 <= k <= p - 1:
        raise ParameterError(f"k must lie in 1..{p - 1}")
    if h < 1:
        raise ParameterError("h must be >= 1")
    if M < 0:
        raise ParameterError("M must be nonnegative")
    fn = lambda_function(k, p, M, h, cutoffs, grid.L if periodic else None)
    return Symbol.from_function(fn, grid, order=0.0, h=h)


@dataclass
class TransformPack:
    """Lambda symbols and derived operators for one choice of (M, h).

    ``E``, ``Einv_approx`` and ``r`` are collocation matrices on the working
    grid. Conjugated generators are formed on a grid ``oversample`` times
    finer and restricted back to the working band of modes, so products of
    e^{+-Lambda} with high derivatives do not wrap around the spectrum.
    """

    p: int
    M: np.ndarray
    h: float
    grid: Grid
    cutoffs: CutoffPair
    lambdas: list
    Lambda: Symbol
    expLambda: Symbol
    expNegLambda: Symbol
    neumann_order: int = 8
    delta: float = 0.0
    C_log: float = 0.0
    oversample: int = 2
    tuning: dict | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    # dense realizations -------------------------------------------------
    @property
    def E(self) -> np.ndarray:
        if "E" not in self._cache:
            self._cache["E"] = to_matrix(self.expLambda).entries
        return self._cache["E"]

    @property
    def Einv_approx(self) -> np.ndarray:
        """Matrix of the quantized e^{-Lambda} (not the exact inverse)."""
        if "Em" not in self._cache:
            self._cache["Em"] = to_matrix(self.expNegLambda).entries
        return self._cache["Em"]

    @property
    def r(self) -> np.ndarray:
        """Neumann kernel ``r = I - e^{Lambda} e^{-Lambda}``, so that
        ``(e^Lambda)^{-1} = e^{-Lambda} (I + r + r^2 + ...)``."""
        if "r" not in self._cache:
            self._cache["r"] = np.eye(self.grid.N) - self.E @ self.Einv_approx
        return self._cache["r"]

    @property
    def fine_grid(self) -> Grid:
        return self.grid.refine(self.oversample)

    def _fine_factor(self):
        if "fine" not in self._cache:
            fine = self.fine_grid
            X, XI = np.meshgrid(fine.x, fine.xi, indexing="ij")
            Ef = to_matrix(Symbol(np.exp(self.Lambda.evaluator(X, XI)), fine)).entries
            self._cache["fine"] = (Ef, lu_factor(Ef))
        return self._cache["fine"]

    @property
    def sigma(self) -> float:
        """Loss of derivatives 2*delta."""
        return 2.0 * self.delta

    def is_trivial(self) -> bool:
        return not np.any(self.Lambda.samples)

    def apply_exp(self, u):
        return quantize_apply(self.expLambda, u)

    def conjugate(self, coeffs) -> OperatorMatrix:
        """``(e^Lambda)^{-1} A e^Lambda`` for ``A = sum_j c_j(x) D^j`` on the working band.

        ``coeffs[j]`` is None, a callable of x, or samples on :attr:`fine_grid`.
        """
        fine = self.fine_grid
        cf = [c(fine.x) if callable(c) else c for c in coeffs]
        Af = differential_matrix(cf, fine).entries
        if not self.is_trivial():
            Ef, lu = self._fine_factor()
            Af = lu_solve(lu, Af @ Ef)
        return restrict_operator(Af, fine, self.grid)

    def neumann_matrix(self, order=None) -> np.ndarray:
        """Dense ``e^{-Lambda} (I + r + ... + r^order)``."""
        n = self.neumann_order if order is None else order
        I = np.eye(self.grid.N, dtype=complex)
        S = I.copy()
        for _ in range(n):
            S = I + self.r @ S
        return self.Einv_approx @ S

    def summary(self) -> dict:
        return {
            "p": self.p,
            "M": [float(m) for m in self.M],
            "h": float(self.h),
            "neumann_order": int(self.neumann_order),
            "delta": float(self.delta),
            "C_log": float(self.C_log),
            "sigma": float(self.sigma),
            "max_abs_Lambda": float(np.max(np.abs(self.Lambda.samples), initial=0.0)),
            "N": self.grid.N,
            "L": self.grid.L,
            "oversample": self.oversample,
        }


def fit_log_growth(Lambda: Symbol):
    """Fit ``sup_x |Lambda(., xi)| <= C + delta log<xi>_h``.

    ``delta`` is the least-squares slope (clipped at 0) over the far field
    |xi| >= 2h, where the excision is fully switched on; the ramp h < |xi| < 2h
    would otherwise pass for logarithmic growth. C is then the smallest
    constant making the bound hold at every sample.
    """
    sup = np.max(np.abs(Lambda.samples), axis=0)
    xi = Lambda.grid.xi
    lb = np.log(bracket(xi, Lambda.h))
    on = (sup > 0) & (np.abs(xi) >= 2.0 * Lambda.h)
    if np.count_nonzero(on) < 2 or np.ptp(lb[on]) == 0:
        on = sup > 0
    if np.count_nonzero(on) < 2 or np.ptp(lb[on]) == 0:
        return 0.0, float(np.max(sup, initial=0.0))
    delta = max(0.0, float(np.polyfit(lb[on], sup[on], 1)[0]))
    C = float(np.max(sup - delta * lb))
    return delta, max(C, 0.0)


def lambda_bound(k: int, p: int, M: float, h: float, x, xi):
    """Closed-form envelope of ``|lambda_{p-k}(x, xi)|``.

    ``k = 1``: ``M (log 2 + (p-1) log <xi>_h)``. ``k >= 2``:
    ``M (p-1)/(k-1) <x>^{(k-1)/(p-1)} <xi>_h^{1-k}`` on the set
    ``<x> <= <xi>_h^{p-1}``; beyond it the x-integral has saturated, so the
    envelope is continued by its value on the boundary of that set.
    """
    x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
    b = bracket(xi, h)
    if k == 1:
        return M * (np.log(2.0) + (p - 1) * np.log(b))
    e = (k - 1) / (p - 1)
    return M * (p - 1) / (k - 1) * np.minimum(japanese(x), b ** (p - 1)) ** e * b ** (1 - k)


def derivative_constants(fn, h: float, x, xi, pairs, step: float = 1e-2) -> dict:
    """Fitted ``delta_{alpha,beta} = sup |d_xi^alpha D_x^beta fn| <xi>_h^alpha`` on a lattice.

    Derivatives use 4th-order central differences with steps ``step`` in x
    and ``step * h`` in xi. ``fn`` is evaluated once on the tensor lattice
    of all stencil shifts.
    """
    from .symbols import central_offsets, fd_weights

    x, xi = np.asarray(x, float), np.asarray(xi, float)
    pairs = [tuple(q) for q in pairs]
    offs = np.unique(np.concatenate([central_offsets(m) for q in pairs for m in q if m] + [[0]]))
    hx, hk = step, step * h
    xs = (x[:, None] + offs[None, :] * hx).ravel()
    ks = (xi[:, None] + offs[None, :] * hk).ravel()
    X, XI = np.meshgrid(xs, ks, indexing="ij")
    F = np.asarray(fn(X, XI), dtype=complex).reshape(len(x), len(offs), len(xi), len(offs))
    pos = {int(o): i for i, o in enumerate(offs)}
    weight = bracket(xi, h)
    out = {}
    for al, be in pairs:
        ox = central_offsets(be) if be else np.array([0])
        ok = central_offsets(al) if al else np.array([0])
        wx = fd_weights(be, ox) / hx**be if be else np.ones(1)
        wk = fd_weights(al, ok) / hk**al if al else np.ones(1)
        d = np.zeros((len(x), len(xi)), dtype=complex)
        for a, ca in zip(ox, wx):
            for b, cb in zip(ok, wk):
                d += ca * cb * F[:, pos[int(a)], :, pos[int(b)]]
        d *= (-1j) ** be
        out[(al, be)] = float(np.max(np.abs(d) * weight[None, :] ** al))
    return out


def build_pack(p: int, M, h: float, grid: Grid, cutoffs: CutoffPair | None = None,
               neumann_order: int = 8, periodic: bool = True, oversample: int = 2) -> TransformPack:
    """Assemble Lambda = sum_k lambda_{p-k} and e^{+-Lambda} for constants M."""
    cutoffs = cutoffs or CutoffPair(p)
    M = np.asarray(M, dtype=float).reshape(-1)
    if M.shape != (p - 1,):
        raise ParameterError(f"expected {p - 1} constants (M_{p - 1}, ..., M_1), got {M.shape}")
    if np.any(M < 0):
        raise ParameterError("transform constants must be nonnegative")
    lambdas = [build_lambda(k, M[k - 1], h, grid, cutoffs, periodic) for k in range(1, p)]
    Lam = np.sum([lam.samples for lam in lambdas], axis=0).real
    if np.max(np.abs(Lam), initial=0.0) > EXP_LIMIT:
        raise ParameterError(
            f"max |Lambda| = {np.max(np.abs(Lam)):.1f} overflows e^Lambda; increase h or lower M")
    fns = [lam.evaluator for lam in lambdas]

    def Lfun(x, xi):
        return sum(f(x, xi) for f in fns)

    Lsym = Symbol(Lam, grid, 0.0, h, evaluator=Lfun)
    ep = Symbol(np.exp(Lam), grid, 0.0, h, evaluator=lambda x, xi: np.exp(Lfun(x, xi)))
    em = Symbol(np.exp(-Lam), grid, 0.0, h, evaluator=lambda x, xi: np.exp(-Lfun(x, xi)))
    delta, C = fit_log_growth(Lsym)
    return TransformPack(p, M, float(h), grid, cutoffs, lambdas, Lsym, ep, em,
                         neumann_order, delta, C, oversample)


def estimate_neumann_norm(pack: TransformPack, iters: int = 200, tol: float = 1e-10,
                          seed: int = 0) -> float:
    """Spectral norm of the Neumann kernel r by power iteration on r^* r."""
    if pack.is_trivial():
        return 0.0
    r = pack.r
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(pack.grid.N) + 1j * rng.standard_normal(pack.grid.N)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = r.conj().T @ (r @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        new = np.sqrt(nw)
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(est)


def invert_exp_lambda(pack: TransformPack, u, exact: bool = False, rnorm: float | None = None):
    """Apply ``(e^Lambda)^{-1}``: truncated Neumann series, or a dense solve."""
    vals = u.values if isinstance(u, Field) else np.asarray(u)
    if pack.is_trivial():
        out = np.array(vals, dtype=complex)
    elif exact:
        out = np.linalg.solve(pack.E, vals)
    else:
        rn = estimate_neumann_norm(pack) if rnorm is None else rnorm
        if rn >= 1:
            raise ParameterError(f"Neumann series diverges: ||r|| = {rn:.3f} >= 1; increase h")
        y = np.array(vals, dtype=complex)
        r = pack.r
        for _ in range(pack.neumann_order):
            y = vals + r @ y
        out = pack.Einv_approx @ y
    return Field(out, pack.grid) if isinstance(u, Field) else out


def neumann_tail_bound(rnorm: float, order: int) -> float:
    """Geometric tail ``||r||^{n+1} / (1 - ||r||)`` of the truncated series."""
    if rnorm >= 1:
        return np.inf
    return rnorm ** (order + 1) / (1.0 - rnorm)


def write_pack_report(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)


class TuningError(RuntimeError):
    """No admissible transform constants were found."""

    def __init__(self, message, level=None, report=None):
        super().__init__(message)
        self.level = level
        self.report = report or {}


def defect_budget(coeffs, u=None, c0: float = 1.0) -> float:
    """``c0 (1 + sup gamma(u)) (1 + ||u||_{4p-3}^{4p-3})``."""
    from .coefficients import gamma_bar
    from .grid import sobolev_norm

    p = coeffs.p
    un = 0.0 if u is None else float(sobolev_norm(u, 4 * p - 3))
    return c0 * (1.0 + gamma_bar(coeffs, u)) * (1.0 + un ** (4 * p - 3))


def leading_bound(coeffs, u=None, t: float = 0.0) -> float:
    """Closed-form lower bound ``C1'(1+gamma)/(2^{p-2} 5^{-(p-1)/2} p C_p)`` for M_{p-1}.

    ``C1'`` is measured as ``sup_x |Im a_{p-1}(t, x, u)| <x> / (1 + gamma(u))``
    on the grid of ``u`` (or on [-40, 40] for u = None).
    """
    from .coefficients import gamma_bar

    p = coeffs.p
    xs = u.grid.x if u is not None else np.linspace(-40.0, 40.0, 801)
    uv = u.values if u is not None else 0.0
    g1 = 1.0 + gamma_bar(coeffs, u)
    im = np.abs(coeffs.eval(p - 1, t, xs, uv).imag) * japanese(xs)
    C1 = float(np.max(im)) / g1
    return C1 * g1 / (2.0 ** (p - 2) / np.sqrt(5.0) ** (p - 1) * p * coeffs.C_p)


def tune_constants(coeffs, u: Field | None, grid: Grid, cutoffs: CutoffPair | None = None, *,
                   absorber=None, c0: float = 40.0, h0: float = 4.0, M0: float = 1.0,
                   M_cap: float = 2.0**16, r_max: float = 0.5, neumann_order: int = 8,
                   t: float = 0.0, oversample: int = 2, seed: int = 0) -> TransformPack:
    """Choose M_{p-1}, ..., M_1 and h.

    Outer to inner, each M_{p-k} starts at ``M0`` and is doubled until the
    Garding defect of the conjugated generator, truncated to orders >= p-k, is
    at least ``-defect_budget``. Then h is raised to at least
    ``max(M_{p-2}, ..., M_1, h0)`` and the Neumann norm is certified against
    ``r_max``; if that fails h is doubled and the levels are re-tuned.
    The returned pack carries the record in ``pack.tuning``.
    """
    from .coefficients import FrozenCoefficients, generator_coefficients
    from .symbols import garding_defect
    from .trajectory import Trajectory

    p = coeffs.p
    cutoffs = cutoffs or CutoffPair(p)
    budget = defect_budget(coeffs, u, c0)
    state = None if u is None else Trajectory.constant(u)
    frozen = FrozenCoefficients(coeffs, state)
    fine = grid.refine(oversample)
    h = float(h0)
    attempts = []
    while True:
        if h > grid.xi_max:
            raise TuningError(f"h = {h:g} exceeds the largest grid frequency {grid.xi_max:.3g}; "
                              "refine the grid", None, {"attempts": attempts, "budget": budget})
        M = np.zeros(p - 1)
        levels = []
        pack = None
        for k in range(1, p):
            cs = generator_coefficients(frozen, t, fine, absorber, min_order=p - k)
            M[k - 1] = M0
            while True:
                try:
                    pack = build_pack(p, M, h, grid, cutoffs, neumann_order, oversample=oversample)
                except ParameterError as exc:
                    raise TuningError(f"level {p - k}: {exc}", p - k,
                                      {"attempts": attempts, "budget": budget}) from exc
                d = garding_defect(pack.conjugate(cs))
                if d >= -budget:
                    break
                if M[k - 1] * 2 > M_cap:
                    raise TuningError(f"level {p - k}: M reached the cap {M_cap:g} with defect {d:.4g} "
                                      f"< -{budget:.4g}", p - k,
                                      {"attempts": attempts, "budget": budget, "levels": levels})
                M[k - 1] *= 2
            levels.append({"level": p - k, "M": float(M[k - 1]), "defect": float(d)})
        need = max([h0] + [float(m) for m in M[1:]])
        if h < need:
            attempts.append({"h": h, "reason": "h below max(M_{p-2..1}, h0)"})
            h = need
            continue
        rn = estimate_neumann_norm(pack, seed=seed)
        attempts.append({"h": h, "M": [float(m) for m in M], "neumann_norm": rn, "levels": levels})
        if rn <= r_max:
            break
        h *= 2.0
    full = generator_coefficients(frozen, t, fine, absorber)
    untransformed = build_pack(p, np.zeros(p - 1), h, grid, cutoffs, neumann_order,
                               oversample=oversample)
    pack.tuning = {
        "budget": budget,
        "c0": c0,
        "levels": levels,
        "neumann_norm": rn,
        "defect": float(garding_defect(pack.conjugate(full))),
        "defect_untransformed": float(garding_defect(untransformed.conjugate(full))),
        "leading_bound": leading_bound(coeffs, u, t),
        "attempts": attempts,
    }
    return pack


def pack_report(pack: TransformPack) -> dict:
    rep = pack.summary()
    rep.update(getattr(pack, "tuning", {}) or {})
    if "neumann_norm" not in rep:
        rep["neumann_norm"] = estimate_neumann_norm(pack)
    rep["neumann_tail_bound"] = neumann_tail_bound(rep["neumann_norm"], pack.neumann_order)
    return rep
