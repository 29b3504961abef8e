import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy.integrate import quad

from pevo.coefficients import Absorber, CoefficientSet, x
from pevo.cutoffs import CutoffPair, omega, psi, rho, smoothstep
from pevo.grid import Grid, ParameterError, bracket, japanese
from pevo.scenarios import preset_decaying_im_p3
from pevo.symbols import NumericError
from pevo.transform import (TuningError, build_lambda, build_pack, derivative_constants,
                            estimate_neumann_norm, invert_exp_lambda, lambda_bound, lambda_function,
                            lambda_integral, neumann_tail_bound, pack_report, tune_constants,
                            write_pack_report)

from conftest import smooth_random

G64 = Grid(64, 10.0)


# -- cutoffs -----------------------------------------------------------------

@given(st.floats(-50, 50), st.integers(2, 5))
def test_omega_shape(y, p):
    w = float(omega(y, p))
    if abs(y) <= 1:
        assert w == 0.0
    elif abs(y) >= 2:
        assert w == pytest.approx(np.sign(y) ** (p - 1))
    else:
        assert 0 <= abs(w) <= 1


@given(st.floats(-5, 5))
def test_psi_shape(y):
    v = float(psi(y))
    assert 0.0 <= v <= 1.0
    if abs(y) <= 0.5:
        assert v == 1.0
    if abs(y) >= 1:
        assert v == 0.0


def test_cutoffs_monotone_joins():
    t = np.linspace(-0.5, 1.5, 2001)
    assert np.all(np.diff(smoothstep(t)) >= 0)
    y = np.linspace(1, 2, 1001)
    assert np.all(np.diff(omega(y, 3)) >= 0)
    assert np.all(np.diff(psi(np.linspace(0.5, 1, 1001))) <= 0)
    assert rho(1.0) == 0.0 and rho(2.0) == 1.0


# -- lambda symbols -----------------------------------------------------------

@pytest.mark.parametrize("p,k", [(2, 1), (3, 1), (3, 2), (4, 3)])
def test_lambda_vanishes_below_h_and_at_origin(p, k):
    h = 4.0
    lam = build_lambda(k, 2.0, h, G64, CutoffPair(p))
    low = np.abs(G64.xi) <= h
    assert np.all(lam.samples[:, low] == 0)
    x0 = np.flatnonzero(G64.x == 0.0)
    assert np.all(lam.samples[x0] == 0)


def test_lambda_p2_is_asinh():
    h, M = 3.0, 1.7
    fn = lambda_function(1, 2, M, h, CutoffPair(2))
    for xi in (-9.0, 6.5, 12.0):
        xs = np.linspace(-0.45 * bracket(xi, h), 0.45 * bracket(xi, h), 13)
        xs = xs[japanese(xs) <= bracket(xi, h) / 2]
        got = fn(xs, np.full_like(xs, xi))
        oracle = np.array([quad(lambda y: 1.0 / np.sqrt(1 + y * y), 0, xv, epsabs=1e-13)[0] for xv in xs])
        assert np.allclose(got, M * np.sign(xi) * oracle, rtol=0, atol=1e-8)
        assert np.allclose(oracle, np.arcsinh(xs), atol=1e-12)


def test_lambda_integral_refuses_unconverged():
    with pytest.raises(NumericError):
        lambda_integral(np.array([1e9]), np.array([1e12]), 0.5, sub=1)


@pytest.mark.parametrize("k,p", [(0, 3), (3, 3)])
def test_build_lambda_rejects_bad_level(k, p):
    with pytest.raises(ParameterError):
        build_lambda(k, 1.0, 4.0, G64, CutoffPair(p))


# -- packs --------------------------------------------------------------------

def test_zero_pack_is_identity(rng):
    pack = build_pack(3, [0.0, 0.0], 4.0, G64)
    assert pack.is_trivial()
    assert np.all(pack.Lambda.samples == 0)
    assert np.all(pack.expLambda.samples == 1) and np.all(pack.expNegLambda.samples == 1)
    u = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    assert np.array_equal(invert_exp_lambda(pack, u), u)
    assert estimate_neumann_norm(pack) == 0.0


def test_pack_sums_levels():
    pack = build_pack(4, [1.0, 2.0, 0.5], 4.0, G64)
    total = sum(l.samples for l in pack.lambdas).real
    assert np.max(np.abs(pack.Lambda.samples - total)) <= 1e-12


def test_pack_log_growth_fit():
    pack = build_pack(3, [1.0, 1.0], 4.0, Grid(128, 10.0))
    sup = np.max(np.abs(pack.Lambda.samples), axis=0)
    env = pack.C_log + pack.delta * np.log(bracket(pack.grid.xi, pack.h))
    assert np.all(sup <= env + 1e-12)
    assert pack.sigma == 2 * pack.delta


def test_pack_bounds_on_grid_samples():
    g = Grid(128, 10.0)
    M, h, p = (1.0, 1.0), 10.0, 3
    pack = build_pack(p, M, h, g, periodic=False)
    X, XI = np.meshgrid(g.x, g.xi, indexing="ij")
    for k, lam in enumerate(pack.lambdas, start=1):
        assert np.all(np.abs(lam.samples) <= lambda_bound(k, p, M[k - 1], h, X, XI) + 1e-8)


def test_pack_rejects_bad_constants():
    with pytest.raises(ParameterError):
        build_pack(3, [1.0], 4.0, G64)
    with pytest.raises(ParameterError):
        build_pack(3, [1.0, -1.0], 4.0, G64)
    with pytest.raises(ParameterError, match="overflows"):
        build_pack(3, [64.0, 64.0], 4.0, G64)


def test_exp_lambda_decay_in_x():
    # |D_x^beta e^{+-Lambda}| <~ C_beta <x>^{-beta} e^{+-Lambda}; constants stable under refinement
    consts = []
    for N in (128, 256):
        g = Grid(N, 10.0)
        pack = build_pack(3, [1.0, 1.0], 4.0, g, periodic=False)
        row = []
        for sym in (pack.expLambda, pack.expNegLambda):
            E = sym.samples
            dE = np.fft.ifft(np.fft.fft(E, axis=0) * g.xi[:, None], axis=0)
            inner = np.abs(g.x) < 0.5 * g.L
            row.append(np.max((np.abs(dE) * japanese(g.x)[:, None] / np.abs(E))[inner]))
        consts.append(row)
    assert np.all(np.isfinite(consts))
    assert np.allclose(consts[0], consts[1], rtol=0.2)


def test_derivative_constants_h_uniform():
    x = np.linspace(-40, 40, 81)
    rows = []
    for h in (10.0, 20.0, 40.0):
        fns = [lambda_function(k, 3, 1.0, h, CutoffPair(3)) for k in (1, 2)]
        xi = np.linspace(-5 * h, 5 * h, 121)
        rows.append(derivative_constants(lambda X, XI: fns[0](X, XI) + fns[1](X, XI), h, x, xi,
                                         [(0, 1), (1, 1), (0, 2)]))
    for key in rows[0]:
        vals = [r[key] for r in rows]
        assert max(vals) <= 1.2 * min(vals)


def test_derivative_constants_of_known_function():
    # f = sin(x) <xi>_h: D_x f = -i cos(x) <xi>_h, d_xi D_x f = -i cos(x) xi / <xi>_h
    h = 2.0
    fn = lambda X, XI: np.sin(X) * bracket(XI, h)
    x = np.linspace(-3, 3, 61)
    xi = np.linspace(-20, 20, 81)
    c = derivative_constants(fn, h, x, xi, [(1, 1)], step=1e-3)
    oracle = np.max(np.abs(np.cos(x))[:, None] * np.abs(xi)[None, :])
    assert c[(1, 1)] == pytest.approx(oracle, rel=1e-6)


# -- Neumann inverse ------------------------------------------------------------

def test_neumann_round_trip_and_dense_residual(rng):
    sc = preset_decaying_im_p3({"N": 64})
    pack = tune_constants(sc.coeffs, None, sc.grid, absorber=sc.absorber)
    rn = estimate_neumann_norm(pack)
    assert rn <= 0.5
    bound = neumann_tail_bound(0.5, pack.neumann_order)
    assert bound == pytest.approx(2.0**-9 / 0.5)
    for _ in range(3):
        u = smooth_random(sc.grid, rng, kmax=20)
        back = invert_exp_lambda(pack, pack.apply_exp(u))
        assert np.linalg.norm(back - u) / np.linalg.norm(u) <= bound
        y = invert_exp_lambda(pack, u, exact=True)
        assert np.linalg.norm(pack.apply_exp(y) - u) / np.linalg.norm(u) <= 1e-10


def test_neumann_norm_nonincreasing_in_h():
    g = Grid(256, 10.0)
    norms = [estimate_neumann_norm(build_pack(3, [1.0, 1.0], h, g)) for h in (5.0, 10.0, 20.0)]
    assert norms[0] >= norms[1] >= norms[2]


def test_neumann_refuses_small_h(rng):
    pack = build_pack(3, [1.0, 1.0], 2.0, G64)
    assert estimate_neumann_norm(pack) >= 1.0
    with pytest.raises(ParameterError, match="diverges"):
        invert_exp_lambda(pack, rng.standard_normal(64))


def test_tail_bound():
    assert neumann_tail_bound(0.5, 3) == pytest.approx(0.0625 / 0.5)
    assert neumann_tail_bound(1.0, 3) == np.inf


# -- tuning --------------------------------------------------------------------

def test_tuning_real_coefficients_keeps_initial_constants():
    c = CoefficientSet(3, 1, [0, 0.5 + 0 * x, 0.3])
    pack = tune_constants(c, None, G64, absorber=Absorber(6.0))
    assert np.all(pack.M == 1.0)


def test_tuned_constant_monotone_in_strength():
    M = []
    for c in (0.1, 1.0, 10.0):
        sc = preset_decaying_im_p3({"c": c, "N": 64})
        try:
            M.append(tune_constants(sc.coeffs, None, sc.grid, absorber=sc.absorber).M[0])
        except TuningError as exc:
            # no representable transform: the required constant lies beyond the overflow limit
            assert exc.level == 2
            M.append(np.inf)
    assert M[0] <= M[1] <= M[2]


def test_tuned_constant_dominates_leading_bound():
    for c in (0.1, 1.0):
        sc = preset_decaying_im_p3({"c": c, "N": 64})
        pack = tune_constants(sc.coeffs, None, sc.grid, absorber=sc.absorber)
        assert pack.M[0] >= pack.tuning["leading_bound"]


def test_tuning_reports_cap():
    sc = preset_decaying_im_p3({"c": 1.0, "N": 64})
    with pytest.raises(TuningError, match="cap") as info:
        tune_constants(sc.coeffs, None, sc.grid, absorber=None, c0=1e-6, M_cap=2.0)
    assert info.value.level == 2


def test_pack_report_serializes(tmp_path):
    sc = preset_decaying_im_p3({"N": 64})
    pack = tune_constants(sc.coeffs, None, sc.grid, absorber=sc.absorber)
    rep = pack_report(pack)
    for key in ("M", "h", "delta", "sigma", "neumann_norm", "neumann_tail_bound", "budget", "defect"):
        assert key in rep
    write_pack_report(rep, tmp_path / "pack.json")
    assert json.loads((tmp_path / "pack.json").read_text())["M"] == [1.0, 1.0]
