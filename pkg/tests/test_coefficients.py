import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from pevo.coefficients import (BRACKET_X, CoefficientError, CoefficientSet, FrozenCoefficients,
                               SampleSpec, W, Wbar, check_composed_bounds, check_conditions,
                               composed_coefficient, gamma_bar, generator_coefficients,
                               linearized_coefficients, t, x)
from pevo.grid import Field, Grid, derivative, sobolev_norm
from pevo.scenarios import kdv_coefficients, preset_decaying_im_p3, preset_constant_im
from pevo.trajectory import Trajectory

G = Grid(64, 20.0)
GAMMA = 1 + W * Wbar


def _ratio(rep, cond, j, beta=0, order_w=0):
    for r in rep.results:
        if (r.condition, r.j, r.beta, r.order_w) == (cond, j, beta, order_w):
            return r
    raise KeyError((cond, j, beta))


def test_saturated_decay_passes_with_ratio_one():
    c = CoefficientSet(4, 1, [0, 0, 0, sp.I / BRACKET_X], C=1.0)
    r = _ratio(check_conditions(c), "im", 3)
    assert r.passed and r.worst_ratio <= 1.0 + 1e-12
    assert r.worst_ratio == pytest.approx(1.0)


def test_constant_imaginary_part_fails_at_far_edge():
    c = CoefficientSet(4, 1, [0, 0, 0, 0.5 * sp.I], C=1.0)
    sample = SampleSpec()
    rep = check_conditions(c, sample)
    r = _ratio(rep, "im", 3)
    assert not r.passed and not rep.passed
    assert abs(r.witness["x"]) == np.max(np.abs(sample.x))


def test_a2_condition_fitted_constant():
    c = CoefficientSet(3, 1, [0, 0, sp.I * GAMMA / BRACKET_X], gamma=GAMMA, C=1.0)
    sample = SampleSpec(x=np.linspace(-40, 40, 2001))
    rep = check_conditions(c, sample)
    assert rep.verdict("a2")
    assert rep.fitted_constant("a2") == pytest.approx(1.0, rel=1e-9)


def test_principal_lower_bound():
    rep = check_conditions(CoefficientSet(3, 0.5, [], C_p=1.0))
    assert not rep.verdict("ap")
    assert check_conditions(CoefficientSet(3, 2.0, [], C_p=1.0)).verdict("ap")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_coefficient_reports_location():
    c = CoefficientSet(3, 1, [0, 1 / x, 0])
    with pytest.raises(CoefficientError, match="a_1"):
        check_conditions(c, SampleSpec(x=np.array([-1.0, 0.0, 1.0])))


def test_gamma_must_be_positive():
    c = CoefficientSet(3, 1, [], gamma=W * Wbar)
    with pytest.raises(CoefficientError, match="gamma"):
        check_conditions(c)


def test_rejects_bad_principal_part():
    with pytest.raises(CoefficientError):
        CoefficientSet(1, 1, [])
    with pytest.raises(CoefficientError):
        CoefficientSet(3, W, [])


@given(st.floats(0.05, 3.0), st.floats(1.0, 5.0))
def test_verdict_monotone_in_C(C, extra):
    a = [0, 0.3 * sp.I / BRACKET_X, sp.I * C / BRACKET_X]
    lo = check_conditions(CoefficientSet(3, 1, a, C=C))
    hi = check_conditions(CoefficientSet(3, 1, a, C=C * extra))
    for r0, r1 in zip(lo.results, hi.results):
        assert (not r0.passed) or r1.passed


SCALES = st.floats(0.01, 100.0)


@given(SCALES)
def test_verdicts_scale_covariant(s):
    for sc in (preset_decaying_im_p3(), preset_constant_im()):
        base = check_conditions(sc.coeffs, sc.sample)
        scaled = check_conditions(sc.coeffs.scaled(s), sc.sample)
        assert [r.passed for r in base.results] == [r.passed for r in scaled.results]


def test_composed_coefficient_examples(rng):
    u = Field(rng.standard_normal(64) + 1j * rng.standard_normal(64), G)
    c = CoefficientSet(3, 1, [W**2, W, sp.exp(-x**2) + t])
    assert np.allclose(composed_coefficient(c, 2, u, 0.5).values, np.exp(-G.x**2) + 0.5)
    assert np.array_equal(composed_coefficient(c, 1, u, 0.0).values, u.values)
    sq = composed_coefficient(c, 0, u, 0.0).values
    assert np.max(np.abs(sq - u.values**2)) <= 1e-15 * np.max(np.abs(u.values) ** 2) * 4


def test_composed_coefficient_commutes_with_subsampling(rng):
    fine = Grid(128, 20.0)
    coarse = Grid(64, 20.0)
    uf = rng.standard_normal(128) + 1j * rng.standard_normal(128)
    c = CoefficientSet(3, 1, [0, sp.I * W / BRACKET_X, W**2])
    for j in (1, 2):
        a = composed_coefficient(c, j, Field(uf, fine), 0.0).values[::2]
        b = composed_coefficient(c, j, Field(uf[::2], coarse), 0.0).values
        assert np.array_equal(a, b)


def _smooth_coeffs():
    e = sp.exp(-x**2 / 8)
    return CoefficientSet(4, 1, [0, 0, 0, (0.3 + sp.I) * e * (1 + W)])


def test_composed_bounds_at_zero_state_match_raw_conditions():
    c = _smooth_coeffs()
    g = Grid(128, 20.0)
    zero = Field(np.zeros(g.N), g)
    comp = check_composed_bounds(c, zero, beta_max=3)
    sample = SampleSpec(x=g.x, w=np.zeros(1, complex))
    for beta in range(4):
        expr_re = np.abs(c.eval(3, 0.0, g.x, 0.0, beta=beta).real)
        expr_im = np.abs(c.eval(3, 0.0, g.x, 0.0, beta=beta).imag) * (1 + g.x**2) ** ((3 - beta // 2) / 6)
        assert _ratio(comp, "composed_re", 3, beta).worst_ratio == pytest.approx(expr_re.max(), rel=1e-8)
        assert _ratio(comp, "composed_im", 3, beta).worst_ratio == pytest.approx(expr_im.max(), rel=1e-8)
    raw = check_conditions(c, sample)
    assert _ratio(raw, "im", 3, 0).worst_ratio == pytest.approx(
        _ratio(comp, "composed_im", 3, 0).worst_ratio, rel=1e-12)


def test_composed_bounds_beta_zero_is_pointwise_check(rng):
    c = _smooth_coeffs()
    u = Field(0.3 * np.exp(-G.x**2) * (1 + 1j), G)
    comp = check_composed_bounds(c, u, beta_max=0)
    raw = np.abs(c.eval(3, 0.0, G.x, u.values).imag) * np.sqrt(1 + G.x**2) / c.gamma_fn()(u.values)
    assert _ratio(comp, "composed_im", 3, 0).worst_ratio == pytest.approx(raw.max(), rel=1e-12)


def test_composed_bounds_single_mode_closed_form():
    c = CoefficientSet(4, 1, [0, 0, 0, W])
    k = 3
    xi1 = k * np.pi / G.L
    u = Field(0.1 * G.mode(k), G)
    comp = check_composed_bounds(c, u, beta_max=2)
    for beta in (1, 2):
        scale = 1.0 + sobolev_norm(u, 1 + beta) ** beta
        oracle = np.max(np.abs((xi1**beta * u.values).real)) / scale
        r = _ratio(comp, "composed_re", 3, beta)
        assert np.isfinite(r.worst_ratio)
        assert r.worst_ratio == pytest.approx(oracle, rel=1e-9)


def test_composed_bounds_w_independent(rng):
    c = CoefficientSet(4, 1, [0, 0, 0, sp.I * sp.exp(-x**2 / 8)])
    g = Grid(128, 20.0)
    ref = check_composed_bounds(c, Field(np.zeros(g.N), g), beta_max=3)
    C = ref.fitted_constant()
    for _ in range(3):
        u = Field(rng.standard_normal(g.N) * 0.5, g)
        rep = check_composed_bounds(c, u, beta_max=3, C_prime=C)
        assert rep.passed
        assert _ratio(rep, "composed_im", 3, 0).worst_ratio == pytest.approx(
            _ratio(ref, "composed_im", 3, 0).worst_ratio, rel=1e-12)


def test_linearization_w_independent_is_identity():
    c = CoefficientSet(3, 1, [sp.exp(-x**2), 0.5, sp.I / BRACKET_X])
    u = Trajectory.constant(Field(np.sin(G.x) + 0j, G))
    lin = linearized_coefficients(c, u).arrays(0.0, G)
    ref = FrozenCoefficients(c, u).arrays(0.0, G)
    for a, b in zip(lin, ref):
        assert np.array_equal(a, b)


def test_linearization_transport_term():
    c = CoefficientSet(2, 1, [0, W])
    u = Field(np.exp(-G.x**2) * (1 + 0.5j), G)
    lin = linearized_coefficients(c, Trajectory.constant(u)).arrays(0.0, G)
    assert np.allclose(lin[0], derivative(u, 1).values, atol=1e-12)


@pytest.mark.parametrize("expr", [W**2, sp.exp(W) / BRACKET_X, W * Wbar + W**3])
def test_wirtinger_derivative_matches_difference_quotient(expr, rng):
    c = CoefficientSet(2, 1, [0, expr])
    u = 0.5 * (rng.standard_normal(16) + 1j * rng.standard_normal(16))
    v = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    xs = np.linspace(-3, 3, 16)
    errs = []
    for eps in (1e-3, 1e-4):
        dq = (c.eval(1, 0.0, xs, u + eps * v) - c.eval(1, 0.0, xs, u)) / eps
        holo = c.dw(1, 0.0, xs, u) * v
        anti = c.eval(1, 0.0, xs, u, order_w=1, probe="re") - 1j * c.eval(1, 0.0, xs, u, order_w=1, probe="im")
        conj_part = 0.5 * np.conj(v) * (c.eval(1, 0.0, xs, u, order_w=1, probe="re")
                                        + 1j * c.eval(1, 0.0, xs, u, order_w=1, probe="im"))
        errs.append(np.max(np.abs(dq - holo - conj_part)))
        assert np.allclose(anti / 2, c.dw(1, 0.0, xs, u))
    assert errs[1] < errs[0] / 5


def test_generator_coefficients_level_truncation():
    c = CoefficientSet(3, 2, [1, 2, 3])
    fz = FrozenCoefficients(c)
    full = generator_coefficients(fz, 0.0, G)
    assert np.allclose(full[3], 2j) and np.allclose(full[0], 1j)
    cut = generator_coefficients(fz, 0.0, G, min_order=2)
    assert cut[0] is None and cut[1] is None and np.allclose(cut[2], 3j)


def test_gamma_bar():
    c = CoefficientSet(2, 1, [], gamma=GAMMA)
    assert gamma_bar(c, None) == 1.0
    assert gamma_bar(c, np.array([0.0, 2.0j])) == pytest.approx(5.0)


def test_variable_depth_principal_checks():
    c = kdv_coefficients({"depth_variation": 0.1})
    g = Grid(64, 20.0)
    rep = check_conditions(c, SampleSpec(x=g.x.copy(), w=np.linspace(-1, 1, 5).astype(complex)))
    assert rep.by_condition("ap_im") and rep.by_condition("ap_re")
    assert rep.verdict("ap")
    assert c.C_p == pytest.approx(np.min(c.eval_ap(0.0, g.x)))


def test_report_json(tmp_path):
    rep = check_conditions(preset_constant_im().coeffs)
    rep.to_json(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["passed"] is False
    assert {"condition", "witness", "worst_ratio"} <= set(data["results"][0])
