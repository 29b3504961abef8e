"""Coefficient sets a_p, a_j(t, x, w), the control function gamma and the decay checker.

Coefficients are sympy expressions in the real symbols ``t``, ``x``, ``wr`` and
``wi`` (the state value is ``w = wr + i*wi``; use :data:`W` and :data:`Wbar`
to write expressions).  Derivatives in x and w are therefore exact; numerical
values come from :func:`sympy.lambdify`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import sympy as sp
from scipy.special import erfc

from .grid import Field, Grid, _values, derivative, interpolate, japanese, sobolev_norm

t, x, wr, wi = sp.symbols("t x wr wi", real=True)
W = wr + sp.I * wi
Wbar = wr - sp.I * wi
BRACKET_X = sp.sqrt(1 + x**2)

_ARGS = (t, x, wr, wi)


class CoefficientError(ValueError):
    """Coefficient evaluation produced non-finite values or bad input."""


def _lambdify(expr):
    f = sp.lambdify(_ARGS, expr, modules=["scipy", "numpy"])

    def call(tt, xx, ww):
        ww = np.asarray(ww, dtype=complex)
        out = f(tt, xx, ww.real, ww.imag)
        shape = np.broadcast(np.asarray(tt), np.asarray(xx), ww).shape
        return np.broadcast_to(np.asarray(out, dtype=complex), shape)

    return call


@dataclass
class CoefficientSet:
    """Coefficients of ``D_t u + a_p D_x^p u + sum_{j<p} a_j(t, x, u) D_x^j u = f``.

    Parameters
    ----------
    p : int
        Principal order (>= 2).
    ap : sympy expression in (t, x)
        Real principal coefficient.
    a : list of sympy expressions
        ``a[j]`` for ``j = 0..p-1``, functions of (t, x, wr, wi).
    gamma : sympy expression in (wr, wi)
        Positive control function.
    C_p, C : float
        Lower bound for ``ap`` and the constant in the decay conditions.
    """

    p: int
    ap: sp.Expr
    a: list
    gamma: sp.Expr = sp.Integer(1)
    C_p: float = 1.0
    C: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)
    _fns: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.p < 2:
            raise CoefficientError("p must be >= 2")
        self.ap = sp.sympify(self.ap)
        self.a = [sp.sympify(e) for e in self.a] + [sp.Integer(0)] * (self.p - len(self.a))
        if len(self.a) != self.p:
            raise CoefficientError(f"expected {self.p} lower-order coefficients, got {len(self.a)}")
        self.gamma = sp.sympify(self.gamma)
        if self.ap.free_symbols - {t, x}:
            raise CoefficientError("a_p may depend on t and x only")

    # -- symbolic derivatives ----------------------------------------------
    def expr(self, j: int) -> sp.Expr:
        return self.ap if j == self.p else self.a[j]

    def derivative_expr(self, j: int, beta: int = 0, order_w: int = 0, probe: str = "re"):
        """``(d_probe)^order_w D_x^beta a_j`` with ``D_x = -i d/dx``.

        ``probe`` selects the w-direction: "re" differentiates in Re w,
        "im" in Im w, "wirtinger" applies ``(d_re - i d_im)/2``.
        """
        e = self.expr(j)
        if beta:
            e = (-sp.I) ** beta * sp.diff(e, x, beta)
        for _ in range(order_w):
            if probe == "re":
                e = sp.diff(e, wr)
            elif probe == "im":
                e = sp.diff(e, wi)
            elif probe == "wirtinger":
                e = (sp.diff(e, wr) - sp.I * sp.diff(e, wi)) / 2
            else:
                raise ValueError(f"unknown probe {probe!r}")
        return e

    def fn(self, j: int, beta: int = 0, order_w: int = 0, probe: str = "re"):
        key = (j, beta, order_w, probe)
        if key not in self._fns:
            self._fns[key] = _lambdify(self.derivative_expr(j, beta, order_w, probe))
        return self._fns[key]

    def gamma_fn(self):
        if "gamma" not in self._fns:
            self._fns["gamma"] = _lambdify(self.gamma)
        g = self._fns["gamma"]
        return lambda ww: g(0.0, 0.0, ww).real

    # -- evaluation ----------------------------------------------------------
    def eval(self, j: int, tt, xx, ww=0.0, beta: int = 0, order_w: int = 0, probe="re"):
        out = np.array(self.fn(j, beta, order_w, probe)(tt, xx, ww))
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(out))[0]
            raise CoefficientError(f"coefficient a_{j} is not finite at sample index {tuple(bad)}")
        return out

    def eval_ap(self, tt, xx):
        return self.eval(self.p, tt, xx).real

    def dw(self, j: int, tt, xx, ww):
        """Complex derivative ``d a_j / d w`` (Wirtinger d/dw)."""
        return self.eval(j, tt, xx, ww, order_w=1, probe="wirtinger")

    @property
    def principal_depends_on_x(self) -> bool:
        return x in self.ap.free_symbols

    @property
    def principal_depends_on_t(self) -> bool:
        return t in self.ap.free_symbols

    @property
    def w_independent(self) -> bool:
        return all(not (e.free_symbols & {wr, wi}) for e in self.a)

    def scaled(self, s: float) -> "CoefficientSet":
        """``(a_j, gamma) -> (s a_j, s gamma)``; a_p is kept."""
        return CoefficientSet(self.p, self.ap, [s * e for e in self.a], s * self.gamma,
                              self.C_p, self.C, self.name, dict(self.params))

    # -- composition with a state --------------------------------------------
    def arrays(self, tt: float, xx, u) -> list:
        """``[a_0(t,x,u(x)), ..., a_{p-1}(t,x,u(x)), a_p(t,x)]`` on the nodes ``xx``."""
        return [self.eval(j, tt, xx, u) for j in range(self.p)] + [self.eval(self.p, tt, xx)]

    def describe(self) -> dict:
        return {
            "name": self.name,
            "p": self.p,
            "a_p": str(self.ap),
            "a": [str(e) for e in self.a],
            "gamma": str(self.gamma),
            "C_p": self.C_p,
            "C": self.C,
            "params": self.params,
        }


# ---------------------------------------------------------------------------
# decay-condition checker

@dataclass
class SampleSpec:
    """Lattice replacing the supremum over (t, x, w)."""

    t: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    x: np.ndarray = field(default_factory=lambda: np.linspace(-40.0, 40.0, 321))
    w: np.ndarray = field(default_factory=lambda: (np.linspace(-1, 1, 5)[:, None]
                                                   + 1j * np.linspace(-1, 1, 5)[None, :]).ravel())
    max_order_w: int = 2
    rtol: float = 1e-9

    def extents(self) -> dict:
        return {
            "t": [float(np.min(self.t)), float(np.max(self.t)), int(np.size(self.t))],
            "x": [float(np.min(self.x)), float(np.max(self.x)), int(np.size(self.x))],
            "w_abs_max": float(np.max(np.abs(self.w))),
            "w_count": int(np.size(self.w)),
        }


@dataclass
class ConditionResult:
    condition: str
    j: int
    beta: int
    order_w: int
    passed: bool
    worst_ratio: float
    bound: float
    witness: dict

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DecayReport:
    """Verdicts of every checked inequality; ``passed`` is their conjunction."""

    results: list
    C: float
    lattice: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> list:
        return [r for r in self.results if not r.passed]

    def by_condition(self, name: str) -> list:
        return [r for r in self.results if r.condition == name]

    def verdict(self, name: str) -> bool:
        return all(r.passed for r in self.by_condition(name))

    def fitted_constant(self, name: str | None = None) -> float:
        rs = self.results if name is None else self.by_condition(name)
        rs = [r for r in rs if r.condition != "ap"]
        return max((r.worst_ratio for r in rs), default=0.0)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "C": self.C,
            "lattice": self.lattice,
            "fitted_constant": self.fitted_constant(),
            "results": [r.to_dict() for r in self.results],
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _worst(ratio, T, X, Wl, condition, j, beta, order_w, bound, rtol):
    ratio = np.nan_to_num(np.asarray(ratio, dtype=float), nan=np.inf)
    k = int(np.argmax(ratio))  # first maximum in (t, x, w) lexicographic order
    idx = np.unravel_index(k, ratio.shape)
    worst = float(ratio[idx])
    witness = {"t": float(T[idx]), "x": float(X[idx]),
               "w": [float(np.real(Wl[idx])), float(np.imag(Wl[idx]))], "beta": beta}
    if order_w:
        witness["order_w"] = order_w
    ok = bool(worst <= bound * (1.0 + rtol))
    return ConditionResult(condition, j, beta, order_w, ok, worst, bound, witness)


def check_conditions(coeffs: CoefficientSet, sample: SampleSpec | None = None) -> DecayReport:
    """Check the lower-bound and decay hypotheses on a sample lattice.

    Every ratio ``|derivative| * <x>^{exponent} / gamma(w)`` is maximized over
    the lattice and compared with ``coeffs.C``; the principal bound is
    ``C_p / a_p <= 1``.
    """
    s = sample or SampleSpec()
    p, C = coeffs.p, coeffs.C
    T, X, Wl = np.meshgrid(np.asarray(s.t, float), np.asarray(s.x, float),
                           np.asarray(s.w, complex), indexing="ij")
    gam = coeffs.gamma_fn()(Wl)
    if np.any(gam <= 0):
        raise CoefficientError("control function gamma must be positive on the lattice")
    bx = japanese(X)
    res = []

    def ev(j, beta=0, order_w=0, probe="re"):
        return coeffs.eval(j, T, X, Wl, beta, order_w, probe)

    def add(cond, j, beta, order_w, ratio, bound=C):
        res.append(_worst(ratio, T, X, Wl, cond, j, beta, order_w, bound, s.rtol))

    # (ap): a_p >= C_p
    ap = ev(p).real
    add("ap", p, 0, 0, coeffs.C_p / np.where(ap > 0, ap, np.nan), 1.0)

    probes = ("re", "im")
    for j in range(3, p):
        for beta in range(0, 2 * j):
            e = (j - beta // 2) / (p - 1)
            add("im", j, beta, 0, np.abs(ev(j, beta).imag) * bx**e / gam)
        for beta in range(0, j):
            add("re", j, beta, 0, np.abs(ev(j, beta).real) * bx**0 / gam)
        for gw in range(1, s.max_order_w + 1):
            for beta in range(0, 2 * j):
                if (gw + beta) // 2 > j - 1:
                    continue
                e = (j - (gw + beta) // 2) / (p - 1)
                val = np.maximum(*(np.abs(ev(j, beta, gw, pr)) for pr in probes))
                add("dew", j, beta, gw, val * bx**e / gam)
    if p >= 3:
        add("Rea2", 2, 0, 0, np.abs(ev(2).real) / gam)
        add("a2", 2, 0, 0, np.abs(ev(2).imag) * bx ** (2 / (p - 1)) / gam)
        lhs = (np.abs(ev(1).imag) + np.abs(ev(2, 1).imag)
               + np.maximum(*(np.abs(ev(2, 0, 1, pr)) for pr in probes)))
    else:
        lhs = np.abs(ev(1).imag)
    add("a1", 1, 0, 0, lhs * bx ** (1 / (p - 1)) / gam)

    # x-dependent principal part
    if coeffs.principal_depends_on_x:
        for beta in range(1, 2 * p):
            if beta // 2 > p - 1:
                continue
            e = (p - beta // 2) / (p - 1)
            add("ap_im", p, beta, 0, np.abs(ev(p, beta).imag) * bx**e)
        for beta in range(1, p):
            add("ap_re", p, beta, 0, np.abs(ev(p, beta).real))
    return DecayReport(res, C, s.extents())


# ---------------------------------------------------------------------------
# composition with a state and linearization

def composed_coefficient(coeffs: CoefficientSet, j: int, u: Field, tt: float) -> Field:
    """Samples ``a_j(t, x_k, u(x_k))``."""
    return Field(coeffs.eval(j, tt, u.grid.x, u.values), u.grid)


def check_composed_bounds(coeffs: CoefficientSet, u: Field, beta_max: int, tt: float = 0.0,
                          C_prime: float | None = None, orders=None) -> DecayReport:
    """Bounds on x-derivatives of the composed coefficients ``a_j(t, x, u(x))``.

    For each j and ``1 <= beta <= beta_max`` the ratios

    * ``|Re D^beta a_j(u)| / (gamma(u) (1 + ||u||_{1+beta}^beta))``,
    * ``|Im D^beta a_j(u)| <x>^{(j-[beta/2])/(p-1)} / (gamma(u) (1 + ||u||_{1+beta}^beta))``

    are maximized over the grid (spectral derivatives). ``beta = 0`` reduces to
    the raw conditions at ``w = u(x)``. The fitted constant is the worst ratio;
    with ``C_prime`` given, the verdict compares against it, otherwise a
    verdict fails only for non-finite ratios.
    """
    g = u.grid
    p = coeffs.p
    js = list(range(3, p)) if orders is None else list(orders)
    gam = coeffs.gamma_fn()(u.values)
    bx = japanese(g.x)
    zeros = np.zeros(g.N)
    Tm, Wl = zeros + tt, u.values
    res = []
    for j in js:
        comp = coeffs.eval(j, tt, g.x, u.values)
        for beta in range(0, beta_max + 1):
            if beta // 2 > j - 1:
                continue
            d = derivative(comp, beta, grid=g) if beta else comp
            # beta = 0 is the pointwise check: no norm factor
            scale = gam * (1.0 + sobolev_norm(u, 1 + beta) ** beta) if beta else gam
            e = (j - beta // 2) / (p - 1)
            for cond, val in (("composed_re", np.abs(d.real)),
                              ("composed_im", np.abs(d.imag) * bx**e)):
                bound = np.inf if C_prime is None else C_prime
                r = _worst(val / scale, Tm, g.x, Wl, cond, j, beta, 0, bound, 1e-9)
                res.append(r)
    return DecayReport(res, np.inf if C_prime is None else C_prime,
                       {"N": g.N, "L": g.L, "t": tt})


class FrozenCoefficients:
    """Coefficients frozen along a state trajectory ``u(t, x)``.

    ``arrays(t, grid)`` returns ``[c_0, ..., c_p]`` with ``c_j(x) = a_j(t, x, u(t, x))``
    on the nodes of ``grid`` (u is interpolated in time by the trajectory and in
    space by trigonometric interpolation). With ``linearized=True`` the zero-order
    entry becomes ``a_0 + sum_h (d a_h / d w) D^h u``.
    """

    def __init__(self, coeffs: CoefficientSet, state=None, linearized: bool = False):
        self.coeffs = coeffs
        self.p = coeffs.p
        self.state = state
        self.linearized = linearized

    def _state_at(self, tt, grid: Grid):
        if self.state is None:
            return None, None
        u = self.state.at(tt)
        src = self.state.grid
        if grid.N == src.N:
            return u, src
        return interpolate(u, src, grid), grid

    def arrays(self, tt: float, grid: Grid) -> list:
        c = self.coeffs
        u, ug = self._state_at(tt, grid)
        uu = 0.0 if u is None else u
        out = [c.eval(j, tt, grid.x, uu) for j in range(self.p)]
        out.append(np.broadcast_to(c.eval(self.p, tt, grid.x), (grid.N,)))
        out = [np.array(np.broadcast_to(a, (grid.N,)), dtype=complex) for a in out]
        if self.linearized and u is not None and not c.w_independent:
            extra = np.zeros(grid.N, dtype=complex)
            for h in range(self.p):
                dh = derivative(u, h, grid=ug) if h else u
                extra += c.dw(h, tt, grid.x, u) * dh
            out[0] = out[0] + extra
        return out

    @property
    def time_dependent(self) -> bool:
        c = self.coeffs
        dep = any(t in e.free_symbols for e in c.a) or c.principal_depends_on_t
        return dep or (self.state is not None and len(self.state) > 1)

    @property
    def principal_depends_on_x(self) -> bool:
        return self.coeffs.principal_depends_on_x


def linearized_coefficients(coeffs: CoefficientSet, state) -> FrozenCoefficients:
    """Coefficients of the linearization at ``state``: ``a_j(u)`` for j >= 1 and
    ``a_0(u) + sum_h (d a_h/d w)(u) D^h u`` for j = 0."""
    return FrozenCoefficients(coeffs, state, linearized=True)


def gamma_bar(coeffs: CoefficientSet, u) -> float:
    """``sup_x gamma(u(x))`` (``gamma(0)`` for ``u is None``)."""
    vals = np.zeros(1) if u is None else _values(u)
    return float(np.max(coeffs.gamma_fn()(vals)))


# ---------------------------------------------------------------------------
# built-in coefficient families (used by configuration files)

def inverse_bracket_decay(exponent: float = 1.0, scale: float = 1.0):
    """``scale / <x>^exponent`` as a sympy expression."""
    return sp.Float(scale) / BRACKET_X ** sp.Float(exponent) if exponent else sp.Float(scale)


@dataclass(frozen=True)
class Absorber:
    """Damping layer near the edges of the periodic box.

    Adds ``sigma(x) D^m`` to the generator, with ``m`` the smallest even order
    ``>= p - 1`` and ``sigma >= 0`` an erfc ramp that is negligible for
    ``|x| < start*L`` and equals ``strength`` near ``|x| = L``. Its real symbol
    ``sigma(x) xi^m`` is nonnegative, so the layer only removes energy.
    """

    strength: float = 0.0
    start: float = 0.45
    width: float = 0.1

    def order(self, p: int) -> int:
        return 2 * ((p) // 2)

    def profile(self, xx, L: float):
        xx = np.asarray(xx, dtype=float)
        x0, w = self.start * L, self.width * L
        return self.strength * 0.5 * (erfc((x0 - xx) / w) + erfc((x0 + xx) / w))

    def to_dict(self) -> dict:
        return asdict(self)


def generator_coefficients(frozen, tt: float, grid: Grid, absorber: Absorber | None = None,
                           min_order: int = 0) -> list:
    """Coefficients ``c_j`` of the generator ``A = sum_j c_j(x) D^j`` on ``grid``.

    ``c_j = i a_j(t, x, u)``; orders below ``min_order`` are dropped (level
    truncation); the absorbing layer is added at its even order.
    """
    arr = frozen.arrays(tt, grid)
    p = len(arr) - 1
    out = [None if j < min_order else 1j * np.asarray(a) for j, a in enumerate(arr)]
    if absorber is not None and absorber.strength > 0:
        m = absorber.order(p)
        prof = absorber.profile(grid.x, grid.L)
        out[m] = prof if out[m] is None else out[m] + prof
    return out
