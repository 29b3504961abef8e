"""Code-defined scenario presets.

Each preset maps a flat parameter dict to a :class:`Scenario`: coefficients,
grid, initial datum, horizon and the sampling lattice used by the decay
checker. Parameters not given fall back to the preset defaults, which are
echoed into the resolved configuration of every run.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .coefficients import (BRACKET_X, Absorber, CoefficientError, CoefficientSet, SampleSpec, W,
                           x)
from .grid import Field, Grid, ParameterError, sobolev_norm


class ConfigError(ValueError):
    """Invalid run configuration or preset parameters."""


@dataclass
class Scenario:
    name: str
    kind: str  # "semilinear" or "linear"
    coeffs: CoefficientSet
    grid: Grid
    u0: Field
    T: float
    sample: SampleSpec
    absorber: Absorber | None = None
    forcing: object = None
    params: dict = field(default_factory=dict)


def _sech(e):
    return 2 / (sp.exp(e) + sp.exp(-e))


def _grid(params) -> Grid:
    try:
        return Grid(int(params["N"]), float(params["L"]))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


def _normalize(u, grid, target, s):
    n = float(sobolev_norm(u, s, grid=grid))
    return u * (target / n) if n > 0 else u


# ---------------------------------------------------------------------------
# water waves

KDV_DEFAULTS = {
    "gravity": 9.81,
    "depth": 1.0,
    "depth_variation": 0.0,
    "depth_scale": 10.0,
    "alpha": 1.0,
    "surface_tension": 0.0,
    "density": 1000.0,
    "amplitude_h4": 0.1,
    "width": 2.0,
    "N": 64,
    "L": 20.0,
    "T": 0.05,
}


def kdv_coefficients(params: dict) -> CoefficientSet:
    """KdV-type water-wave coefficients.

    From ``d_t u = c d_x(u^2/2 + 2 alpha u/3 + sigma d_x^2 u/3)`` with
    ``c = (3/2) sqrt(g/h)`` and ``sigma = h^3/3 - T_s h/(rho g)``, written as
    ``D_t u + a_3 D^3 u + a_2 D^2 u + a_1(u) D u = 0``:

    * ``a_3 = c sigma / 3``
    * ``a_2 = -i c sigma' / 3`` (zero for constant depth)
    * ``a_1(w) = -c (w + 2 alpha / 3)``

    The depth is ``h(x) = h0 (1 + depth_variation sech(x / depth_scale))``.
    """
    p = {**KDV_DEFAULTS, **params}
    g, h0, rho_ = float(p["gravity"]), float(p["depth"]), float(p["density"])
    alpha, Ts = float(p["alpha"]), float(p["surface_tension"])
    if g <= 0 or h0 <= 0 or rho_ <= 0 or p["depth_scale"] <= 0:
        raise ConfigError("gravity, depth, density and depth_scale must be positive")
    var = float(p["depth_variation"])
    hx = h0 * (1 + var * _sech(x / float(p["depth_scale"]))) if var else sp.Float(h0)
    c = sp.Rational(3, 2) * sp.sqrt(g / hx)
    sigma = hx**3 / 3 - Ts * hx / (rho_ * g)
    a3 = sp.simplify(c * sigma / 3) if var else sp.Float(float(c * sigma / 3))
    a2 = -sp.I * c * sp.diff(sigma, x) / 3 if var else sp.Integer(0)
    a1 = -c * (W + sp.Rational(2, 3) * alpha)
    grid = _grid(p)
    vals = np.asarray(sp.lambdify(x, a3, "numpy")(grid.x), dtype=float) * np.ones(grid.N)
    Cp = float(np.min(vals))
    if Cp <= 0:
        raise ConfigError(f"a_3 = c sigma / 3 must be positive; min over the grid is {Cp:.4g}")
    return CoefficientSet(3, a3, [sp.Integer(0), a1, a2], C_p=Cp, C=float(p.get("C", 1.0)),
                          name="kdv_variable_depth" if var else "kdv", params=p)


def preset_kdv(params: dict | None = None) -> Scenario:
    p = {**KDV_DEFAULTS, **(params or {})}
    coeffs = kdv_coefficients(p)
    grid = _grid(p)
    u = 1.0 / np.cosh(grid.x / float(p["width"])) ** 2
    u0 = Field(_normalize(u, grid, float(p["amplitude_h4"]), 4), grid)
    # real-valued waves: the state lattice is real; x runs over the grid nodes
    sample = SampleSpec(x=grid.x.copy(), w=np.linspace(-1.0, 1.0, 9).astype(complex))
    return Scenario(coeffs.name, "semilinear", coeffs, grid, u0, float(p["T"]), sample, params=p)


def preset_kdv_variable_depth(params: dict | None = None) -> Scenario:
    return preset_kdv({"depth_variation": 0.1, **(params or {})})


# ---------------------------------------------------------------------------
# Schrodinger type

SCHRODINGER_DEFAULTS = {
    "a2": 1.0,
    "re_a1": 0.0,
    "im_a1": 0.5,
    "decay_a1": 1.0,
    "im_a0": 0.5,
    "decay_a0": 1.0,
    "amplitude": 0.1,
    "k0": 1.0,
    "C": 1.0,
    "N": 128,
    "L": 40.0,
    "T": 0.05,
}


def preset_schrodinger(params: dict | None = None) -> Scenario:
    """p = 2 with ``a_1 = re + i b1 (1 + w^2) <x>^{-d1}`` and ``a_0 = i b0 (1 + w^2) <x>^{-d0}``.

    ``gamma(w) = 1 + |w|^2``. The nonlinearity ``1 + w^2`` is holomorphic and
    bounded by gamma.
    """
    p = {**SCHRODINGER_DEFAULTS, **(params or {})}
    if p["a2"] <= 0:
        raise ConfigError("a2 must be positive")
    grid = _grid(p)
    nl = 1 + W**2
    a1 = sp.Float(p["re_a1"]) + sp.I * sp.Float(p["im_a1"]) * nl / BRACKET_X ** sp.Float(p["decay_a1"])
    a0 = sp.I * sp.Float(p["im_a0"]) * nl / BRACKET_X ** sp.Float(p["decay_a0"])
    gamma = 1 + sp.Abs(W) ** 2
    coeffs = CoefficientSet(2, sp.Float(p["a2"]), [a0, a1], gamma=gamma, C_p=float(p["a2"]),
                            C=float(p["C"]), name="schrodinger", params=p)
    u0 = float(p["amplitude"]) * np.exp(-grid.x**2 / 4) * np.exp(1j * float(p["k0"]) * grid.x)
    return Scenario("schrodinger", "semilinear", coeffs, grid, Field(u0, grid), float(p["T"]),
                    SampleSpec(), params=p)


# ---------------------------------------------------------------------------
# linear third-order scenarios with an imaginary a_2

DECAYING_DEFAULTS = {
    "c": 1.0,
    "a3": 1.0,
    "N": 128,
    "L": 10.0,
    "T": 0.1,
    "x0": -3.0,
    "k0": 4.0,
    "absorber": None,
}


def preset_decaying_im_p3(params: dict | None = None) -> Scenario:
    """``D_t v + a_3 D^3 v + i c <x>^{-1} D^2 v = 0``: (a2) holds with constant c.

    The imaginary part of a_2 is anti-dissipative where ``c > 0``. A damping
    layer of strength ``6 (1 + c)`` (unless given) sits at the box edges.
    """
    p = {**DECAYING_DEFAULTS, **(params or {})}
    c = float(p["c"])
    grid = _grid(p)
    coeffs = CoefficientSet(3, sp.Float(p["a3"]), [0, 0, sp.I * c / BRACKET_X], C_p=float(p["a3"]),
                            C=max(abs(c), 1.0), name="decaying_im_p3", params=p)
    strength = 6.0 * (1.0 + abs(c)) if p["absorber"] is None else float(p["absorber"])
    u0 = np.exp(-(grid.x - float(p["x0"])) ** 2) * np.exp(1j * float(p["k0"]) * grid.x)
    return Scenario("decaying_im_p3", "linear", coeffs, grid, Field(u0, grid), float(p["T"]),
                    SampleSpec(), absorber=Absorber(strength), params={**p, "absorber": strength})


CONSTANT_DEFAULTS = {**DECAYING_DEFAULTS, "c": 1.0}


def preset_constant_im(params: dict | None = None) -> Scenario:
    """``a_2 = i c`` without decay: violates (a2) and must be rejected by the checker."""
    p = {**CONSTANT_DEFAULTS, **(params or {})}
    c = float(p["c"])
    grid = _grid(p)
    coeffs = CoefficientSet(3, sp.Float(p["a3"]), [0, 0, sp.I * sp.Float(c)], C_p=float(p["a3"]),
                            C=max(abs(c), 1.0), name="constant_im", params=p)
    strength = 6.0 * (1.0 + abs(c)) if p["absorber"] is None else float(p["absorber"])
    u0 = np.exp(-(grid.x - float(p["x0"])) ** 2) * np.exp(1j * float(p["k0"]) * grid.x)
    return Scenario("constant_im", "linear", coeffs, grid, Field(u0, grid), float(p["T"]),
                    SampleSpec(), absorber=Absorber(strength), params={**p, "absorber": strength})


PRESETS = {
    "kdv": (preset_kdv, KDV_DEFAULTS, "KdV water waves, constant depth (p=3, semilinear)"),
    "kdv_variable_depth": (preset_kdv_variable_depth, {**KDV_DEFAULTS, "depth_variation": 0.1},
                           "KdV with h(x) = h0 (1 + 0.1 sech(x/10)) (p=3, x-dependent a_3)"),
    "schrodinger": (preset_schrodinger, SCHRODINGER_DEFAULTS,
                    "Schrodinger type with decaying complex a_1, a_0 (p=2, semilinear)"),
    "decaying_im_p3": (preset_decaying_im_p3, DECAYING_DEFAULTS,
                       "Im a_2 = c/<x> (p=3, linear, needs the transform)"),
    "constant_im": (preset_constant_im, CONSTANT_DEFAULTS,
                    "Im a_2 = c constant (p=3, linear, fails the decay check)"),
}


def build_scenario(name: str, params: dict | None = None) -> Scenario:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}")
    builder, defaults, _ = PRESETS[name]
    unknown = set(params or {}) - set(defaults) - {"C"}
    if unknown:
        raise ConfigError(f"unknown parameters for {name}: {', '.join(sorted(unknown))}")
    try:
        return builder(params)
    except (CoefficientError, ParameterError) as exc:
        raise ConfigError(str(exc)) from exc


def preset_defaults(name: str) -> dict:
    return dict(PRESETS[name][1])
