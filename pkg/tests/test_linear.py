import csv

import numpy as np
import pytest
import sympy as sp

from conftest import smooth_random
from pevo.coefficients import BRACKET_X, Absorber, CoefficientSet, W, generator_coefficients, wi, wr, x
from pevo.grid import Field, Grid, interpolate, restrict, sobolev_norm
from pevo.linear import (InstabilityError, LinearProblem, assemble_generator, conjugated_generator,
                         energy_audit, solve_linear, solve_transformed, write_norms_csv)
from pevo.symbols import differential_matrix
from pevo.scenarios import preset_kdv_variable_depth
from pevo.trajectory import Trajectory, read_frames
from pevo.transform import (build_pack, estimate_neumann_norm, invert_exp_lambda,
                            neumann_tail_bound, tune_constants)


def _packet(g, x0=-3.0, k0=4.0):
    return Field(np.exp(-(g.x - x0) ** 2) * np.exp(1j * k0 * g.x), g)


@pytest.fixture(scope="module")
def decaying():
    """Im a_2 = 1/<x> on L = 10 with a damping layer and its tuned pack."""
    g = Grid(64, 10.0)
    c = CoefficientSet(3, 1, [0, 0, sp.I / BRACKET_X])
    ab = Absorber(12.0)
    pack = tune_constants(c, None, g, absorber=ab)
    return c, g, ab, pack


def test_zero_data_gives_zero():
    g = Grid(32, 5.0)
    c = CoefficientSet(3, 1, [0, sp.exp(-x**2), sp.I / BRACKET_X])
    v = solve_linear(LinearProblem(c, g, Field(np.zeros(32), g), 0.1))
    assert not np.any(v.frames)


def test_free_schrodinger_multiplier():
    g = Grid(128, 10.0)
    u0 = Field(np.exp(-g.x**2) * (1 + 0.3j * g.x), g)
    v = solve_linear(LinearProblem(CoefficientSet(2, 1, []), g, u0, 0.1))
    exact = np.fft.ifft(np.exp(-1j * g.xi**2 * 0.1) * np.fft.fft(u0.values))
    assert np.max(np.abs(v.final.values - exact)) < 1e-8


def test_airy_multiplier_preserves_norm():
    g = Grid(128, 10.0)
    u0 = _packet(g, 0.0, 2.0)
    v = solve_linear(LinearProblem(CoefficientSet(3, 2.0, [0, 0.5]), g, u0, 0.1))
    exact = np.fft.ifft(np.exp(-1j * (2.0 * g.xi**3 + 0.5 * g.xi) * 0.1) * np.fft.fft(u0.values))
    assert np.max(np.abs(v.final.values - exact)) < 1e-8
    n = v.norms(0)
    assert np.max(np.abs(n - n[0])) < 1e-10


def test_unitarity_over_unit_time():
    g = Grid(64, 10.0)
    c = CoefficientSet(3, 1.0, [0.3, -0.7, 0.2])
    v = solve_linear(LinearProblem(c, g, _packet(g, 0.0, 1.0), 1.0))
    n = v.norms(0)
    assert np.max(np.abs(n - n[0])) < 1e-9


def test_generator_trivial_examples():
    g = Grid(16, 4.0)
    A = assemble_generator(LinearProblem(CoefficientSet(3, 1, []), g, Field(np.zeros(16), g), 1.0), 0.0)
    assert A.order == 3
    assert np.allclose(A.samples, 1j * g.xi[None, :] ** 3 * np.ones((16, 1)), rtol=0, atol=1e-14)
    B = assemble_generator(LinearProblem(CoefficientSet(2, 1, [0, 0.7]), g, Field(np.zeros(16), g), 1.0), 0.0)
    assert np.allclose(B.samples, 1j * (g.xi**2 + 0.7 * g.xi)[None, :] * np.ones((16, 1)), atol=1e-14)


def test_generator_variable_depth_hand_assembly():
    sc = preset_kdv_variable_depth()
    g, u = sc.grid, sc.u0.values.real
    c = sc.coeffs
    a3 = sp.lambdify(x, c.ap, "numpy")(g.x)
    a2 = sp.lambdify(x, c.a[2], "numpy")(g.x) * np.ones(g.N)
    a1 = sp.lambdify((x, wr, wi), c.a[1], "numpy")(g.x, u, 0.0 * u)
    oracle = 1j * (a3[:, None] * g.xi**3 + a2[:, None] * g.xi**2 + a1[:, None] * g.xi)
    A = assemble_generator(LinearProblem(c, g, sc.u0, sc.T, state=sc.u0), 0.0)
    assert np.max(np.abs(A.samples - oracle)) <= 1e-14 * np.max(np.abs(oracle))


def test_rk4_fourth_order_on_multiplier():
    g = Grid(32, 10.0)
    u0 = _packet(g, 0.0, 1.0)
    c = CoefficientSet(3, 1.0, [0, 0.5])
    exact = np.fft.ifft(np.exp(-1j * (g.xi**3 + 0.5 * g.xi) * 0.5) * np.fft.fft(u0.values))
    errs = []
    for dt in (0.005, 0.0025, 0.00125):
        v = solve_linear(LinearProblem(c, g, u0, 0.5, dt=dt, n_frames=2, stepper="rk4"))
        errs.append(np.linalg.norm(v.final.values - exact))
    for e0, e1 in zip(errs, errs[1:]):
        assert e1 < 1e-10 or e0 / e1 >= 8


def test_lawson_fourth_order_variable_coefficients(decaying):
    c, g, ab, _ = decaying
    u0 = _packet(g)
    run = lambda dt: solve_linear(LinearProblem(c, g, u0, 0.05, absorber=ab, dt=dt, n_frames=2)).final.values
    ref = run(0.05 / 1600)
    errs = [np.linalg.norm(run(0.05 / n) - ref) for n in (50, 100, 200)]
    for e0, e1 in zip(errs, errs[1:]):
        assert e1 < 1e-10 or e0 / e1 >= 8


def test_constant_coefficients_are_exact():
    g = Grid(64, 10.0)
    u0 = _packet(g, 0.0, 1.0)
    c = CoefficientSet(3, 1.0, [0.2, 0.5, -0.3])
    v = solve_linear(LinearProblem(c, g, u0, 1.0))
    sym = g.xi**3 - 0.3 * g.xi**2 + 0.5 * g.xi + 0.2
    exact = np.fft.ifft(np.exp(-1j * sym) * np.fft.fft(u0.values))
    assert np.max(np.abs(v.final.values - exact)) < 1e-12


def test_duhamel_linearity(decaying):
    c, g, ab, _ = decaying
    u0 = _packet(g)

    def f(t):
        return np.cos(3 * t) * np.exp(-(g.x - 1) ** 2)

    kw = dict(absorber=ab, dt=1e-3, n_frames=11)
    full = solve_linear(LinearProblem(c, g, u0, 0.1, forcing=f, **kw))
    hom = solve_linear(LinearProblem(c, g, u0, 0.1, **kw))
    inh = solve_linear(LinearProblem(c, g, Field(np.zeros(g.N), g), 0.1, forcing=f, **kw))
    assert np.max(np.abs(full.frames - hom.frames - inh.frames)) < 1e-10


def test_trivial_pack_reproduces_linear_solve(decaying):
    c, g, ab, _ = decaying
    pb = LinearProblem(c, g, _packet(g), 0.1, absorber=ab, pack=build_pack(3, [0, 0], 4.0, g))
    assert pb.pack.is_trivial()
    ts = solve_transformed(pb)
    ref = solve_linear(pb)
    assert np.max(np.abs(ts.v.frames - ref.frames)) < 1e-12
    assert np.max(np.abs(ts.w.frames - ref.frames)) < 1e-12


def test_transform_equivalence(decaying):
    c, g, ab, pack = decaying
    u0 = _packet(g)
    ref = solve_linear(LinearProblem(c, g, u0, 0.1, absorber=ab))
    half = solve_linear(LinearProblem(c, g, u0, 0.1, absorber=ab, dt=ref.diagnostics["dt"] / 2))
    tol = np.max(np.linalg.norm(ref.frames - half.frames, axis=1)) * np.sqrt(g.dx)
    ts = solve_transformed(LinearProblem(c, g, u0, 0.1, absorber=ab, pack=pack))
    dist = np.max(np.linalg.norm(ts.v.frames - ref.frames, axis=1)) * np.sqrt(g.dx)
    assert dist < 10 * tol


def test_transformed_growth_is_smaller(decaying):
    c, g, ab, pack = decaying
    pb = LinearProblem(c, g, _packet(g), 0.1, absorber=ab, n_frames=41)
    v = solve_linear(pb).norms(0)
    pb.pack = build_pack(3, pack.M, 4.0, g)
    w = solve_transformed(pb, exact_inverse=True).w.norms(0)
    assert w[-1] / w[0] < v[-1] / v[0]


@pytest.mark.parametrize("order", [1, 2, 3, 8])
def test_conjugation_residual_below_tail_bound(decaying, order, rng):
    c, g, ab, pack = decaying
    pb = LinearProblem(c, g, _packet(g), 0.01, absorber=ab)
    assembled = conjugated_generator(pb, pack).entries
    fine = pack.fine_grid
    # the same factors applied one by one on the product grid, inverse by Neumann series
    pf = build_pack(3, pack.M, pack.h, fine, neumann_order=order)
    rn = estimate_neumann_norm(pf)
    Af = differential_matrix(generator_coefficients(pb.frozen, 0.0, fine, ab), fine).entries
    tail = neumann_tail_bound(rn, order) * np.linalg.norm(pf.Einv_approx, 2)
    for _ in range(5):
        f = smooth_random(g, rng)
        AEf = Af @ pf.apply_exp(interpolate(f, g, fine))
        approx = restrict(invert_exp_lambda(pf, AEf, rnorm=rn), fine, g)
        res = sobolev_norm(approx - assembled @ f, 0, grid=g)
        assert res <= tail * sobolev_norm(AEf, 0, grid=fine)


def test_audit_skew_case_is_trivial():
    g = Grid(64, 10.0)
    v = solve_linear(LinearProblem(CoefficientSet(3, 1.0, [0, 0.5]), g, _packet(g), 0.2))
    a = energy_audit(v, 0.0, 0.0)
    assert np.ptp(a.lhs) < 1e-9 * a.lhs[0]
    assert a.passed and a.margin >= 1.0
    assert a.K_fit == 1.0


@pytest.mark.parametrize("N", [128, 256])
def test_audit_decaying_with_tuned_pack(N):
    g = Grid(N, 10.0)
    c = CoefficientSet(3, 1, [0, 0, sp.I / BRACKET_X])
    ab = Absorber(12.0)
    pack = tune_constants(c, None, g, absorber=ab)
    ts = solve_transformed(LinearProblem(c, g, _packet(g), 0.1, absorber=ab, pack=pack))
    a = energy_audit(ts.v, 0.0, pack.sigma, None, c, w=ts.w, pack=pack)
    assert a.fitted_on == "w"
    assert a.passed and a.margin >= 1.0


def test_audit_exponent_bookkeeping():
    g = Grid(32, 10.0)
    c = CoefficientSet(3, 1.0, [0, -W])
    u = Field(0.05 * np.exp(-g.x**2), g)
    v = solve_linear(LinearProblem(c, g, _packet(g), 0.05, state=u))
    r1 = energy_audit(v, 0.0, 0.0, u, c).exponent_rate
    r2 = energy_audit(v, 0.0, 0.0, u * 2.0, c).exponent_rate
    n = sobolev_norm(u, 9)
    assert r1 == pytest.approx(1 + n**9)
    assert r2 == pytest.approx(1 + (2 * n) ** 9)
    assert r2 > r1


def test_instability_reports_time():
    g = Grid(64, 10.0)
    c = CoefficientSet(3, 1.0, [])
    with pytest.raises(InstabilityError) as info:
        solve_linear(LinearProblem(c, g, _packet(g), 1.0, dt=0.1, n_frames=11, stepper="rk4"))
    assert 0 < info.value.time <= 1.0


def test_time_grid_validation():
    g = Grid(16, 4.0)
    c = CoefficientSet(2, 1, [])
    u0 = Field(np.zeros(16), g)
    with pytest.raises(ValueError):
        solve_linear(LinearProblem(c, g, u0, 1.0, dt=0.3))
    with pytest.raises(ValueError):
        LinearProblem(c, g, u0, -1.0)


def test_norms_csv_and_frames(tmp_path):
    g = Grid(32, 10.0)
    v = solve_linear(LinearProblem(CoefficientSet(2, 1, []), g, _packet(g), 0.05, n_frames=6))
    a = energy_audit(v, 1.0, 0.5)
    write_norms_csv(tmp_path / "n.csv", v, a)
    rows = list(csv.reader(open(tmp_path / "n.csv")))
    assert rows[0] == ["t", "norm_0", "norm_s", "norm_s_minus_sigma", "bound_rhs", "margin"]
    assert len(rows) == 7
    assert float(rows[-1][1]) == pytest.approx(v.norms(0)[-1], rel=1e-11)
    v.write_frames(tmp_path / "f.bin")
    back = read_frames(tmp_path / "f.bin", g.L)
    assert np.array_equal(back.frames, v.frames)
    assert np.array_equal(back.times, v.times)
    assert isinstance(back, Trajectory)
