"""Local-in-time solution of the semilinear problem by a Newton-type iteration.

The problem ``D_t u + a_p D^p u + sum_j a_j(t, x, u) D^j u = f``, ``u(0) = u0`` is
recast as ``T(u) = 0`` with

    T(u)(t) = u(t) - u0 + i int_0^t (a_p D^p u + sum_j a_j(u) D^j u - f) ds.

Everything lives on a uniform time grid; time integrals use a 4th-order
cumulative rule (cubic through the four nearest frames), and variable
coefficient products are dealiased exactly as in the linear solver, so that
``T``, its derivative ``DT`` and the solve map ``S`` are mutually consistent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, FrozenCoefficients, linearized_coefficients
from .cutoffs import rho
from .grid import Field, Grid, ParameterError, interpolate, restrict, sobolev_norm
from .linear import LinearProblem, _Generator, solve_linear
from .trajectory import Trajectory


class NewtonError(RuntimeError):
    """The outer iteration did not converge; ``report`` holds the history."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class SemilinearProblem:
    """Cauchy problem data plus the knobs of the outer iteration.

    Parameters
    ----------
    coeffs : CoefficientSet
    u0 : Field
    T : float
        Horizon ``T*``.
    forcing : None, callable ``t -> samples`` or Trajectory
    n_frames : int
        Uniform frames on ``[0, T]`` (the time grid of every trajectory).
    eps : float, optional
        Mollifier width of the target; ``T / 8`` when omitted.
    seed : "taylor", "zero" or a Trajectory
    target : "mollified" or "zero"
    smoothing : bool
        Zero the top third of the spectrum of each Newton update.
    """

    coeffs: CoefficientSet
    u0: Field
    T: float
    forcing: object = None
    s: float = 0.0
    tol: float = 1e-6
    max_iter: int = 10
    eps: float | None = None
    seed: object = "taylor"
    target: str = "mollified"
    n_frames: int = 51
    pad: int = 2
    smoothing: bool = False

    def __post_init__(self):
        if self.T <= 0:
            raise ParameterError("horizon T* must be positive")
        if self.tol <= 0:
            raise ParameterError("tolerance must be positive")
        if self.n_frames < 5:
            raise ParameterError("at least 5 frames are needed")
        if self.eps is None:
            self.eps = self.T / 8.0
        if self.target not in ("mollified", "zero"):
            raise ParameterError(f"unknown target {self.target!r}")
        if self.target == "mollified" and not 0 < self.eps < self.T / 2:
            raise ParameterError("mollifier width must lie in (0, T*/2)")

    @property
    def grid(self) -> Grid:
        return self.u0.grid

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_frames)

    def forcing_at(self, tt):
        f = self.forcing
        if f is None:
            return np.zeros(self.grid.N, dtype=complex)
        if isinstance(f, Trajectory):
            return f.at(tt)
        return np.asarray(f(tt), dtype=complex)

    def _check(self, traj: Trajectory):
        self.grid.check(traj.grid)
        if len(traj.times) != self.n_frames or not np.allclose(traj.times, self.times, rtol=0, atol=1e-14):
            raise ParameterError("trajectory is not sampled on the problem's time grid")


# ---------------------------------------------------------------------------
# helpers

def cumulative_integral(G: np.ndarray, times: np.ndarray) -> np.ndarray:
    """``int_0^{t_n} G`` at every frame for uniform ``times`` (4th order).

    Each interval integrates the cubic through the four nearest frames.
    """
    n = len(times)
    if n < 4:
        raise ParameterError("at least 4 frames are needed")
    dt = times[1] - times[0]
    out = np.zeros_like(G)
    w_first = np.array([9.0, 19.0, -5.0, 1.0]) / 24.0
    w_mid = np.array([-1.0, 13.0, 13.0, -1.0]) / 24.0
    w_last = np.array([1.0, -5.0, 19.0, 9.0]) / 24.0
    for k in range(n - 1):
        if k == 0:
            seg = w_first @ G[0:4].reshape(4, -1)
        elif k == n - 2:
            seg = w_last @ G[n - 4:n].reshape(4, -1)
        else:
            seg = w_mid @ G[k - 1:k + 3].reshape(4, -1)
        out[k + 1] = out[k] + dt * seg.reshape(G.shape[1:])
    return out


def _generator(problem: SemilinearProblem, frozen) -> _Generator:
    lp = LinearProblem(frozen, problem.grid, Field(np.zeros(problem.grid.N), problem.grid),
                       problem.T, n_frames=problem.n_frames, pad=problem.pad)
    return _Generator(lp)


def _apply(gen: _Generator, tt: float, v: np.ndarray) -> np.ndarray:
    """Samples of ``A(t) v`` (``A = i (a_p D^p + sum_j a_j D^j)``)."""
    V = np.fft.fft(v)
    return np.fft.ifft(gen.lin * V + gen.remainder(tt, V))


def graded_norm(traj: Trajectory, n: float = 0.0) -> float:
    """``sup_t (||g(t)||_n + ||D_t g(t)||_n)``."""
    return traj.graded_seminorm(n)


# ---------------------------------------------------------------------------
# the maps T, DT and S

def evaluate_T(u: Trajectory, problem: SemilinearProblem) -> Trajectory:
    """``T(u)`` on the frames of ``u``."""
    problem._check(u)
    gen = _generator(problem, FrozenCoefficients(problem.coeffs, u))
    G = np.array([_apply(gen, tt, fr) - 1j * problem.forcing_at(tt)
                  for tt, fr in zip(u.times, u.frames)])
    out = u.frames - problem.u0.values[None, :] + cumulative_integral(G, u.times)
    return Trajectory(u.times, out, u.grid)


def frechet_DT(u: Trajectory, v: Trajectory, problem: SemilinearProblem) -> Trajectory:
    """``DT(u) v = v + i int (a_p D^p v + sum_j a~_j(u) D^j v)``."""
    problem._check(u)
    problem._check(v)
    gen = _generator(problem, linearized_coefficients(problem.coeffs, u))
    G = np.array([_apply(gen, tt, fr) for tt, fr in zip(v.times, v.frames)])
    return Trajectory(v.times, v.frames + cumulative_integral(G, v.times), v.grid)


def solve_S(u: Trajectory, h: Trajectory, problem: SemilinearProblem, verify: bool = False):
    """``v = S(u, h)``, the solution of ``DT(u) v = h``.

    Differentiating ``DT(u) v = h`` gives ``D_t v + P~ v = D_t h`` with
    ``v(0) = h(0)``. Writing ``v = h + z`` turns this into the linear problem
    ``D_t z + P~ z = -P~ h``, ``z(0) = 0``, which needs no time derivative of h.
    With ``verify=True`` the pair ``(v, round-trip error)`` is returned.
    """
    problem._check(u)
    problem._check(h)
    g = problem.grid
    frozen = linearized_coefficients(problem.coeffs, u)
    gen = _generator(problem, frozen)

    def forcing(tt):
        # i F = -A h  with  A = i P~   =>   F = -P~ h = i A h
        return 1j * _apply(gen, tt, h.at(tt))

    lp = LinearProblem(frozen, g, Field(np.zeros(g.N), g), problem.T, forcing=forcing,
                       n_frames=problem.n_frames, pad=problem.pad)
    z = solve_linear(lp)
    v = Trajectory(h.times, h.frames + z.frames, g, dict(z.diagnostics))
    if verify:
        back = frechet_DT(u, v, problem) - h
        den = graded_norm(h) or 1.0
        return v, graded_norm(back) / den
    return v


# ---------------------------------------------------------------------------
# seeds and target

def _rhs0(problem: SemilinearProblem) -> np.ndarray:
    """``a_p(0) D^p u0 + sum_j a_j(0, x, u0) D^j u0 - f(0)``."""
    u0 = problem.u0
    gen = _generator(problem, FrozenCoefficients(problem.coeffs, Trajectory.constant(u0)))
    return -1j * _apply(gen, 0.0, u0.values) - problem.forcing_at(0.0)


def taylor_seed(problem: SemilinearProblem) -> Trajectory:
    """``w(t) = u0 - i t (a_p(0) D^p u0 + sum_j a_j(0, x, u0) D^j u0 - f(0))``."""
    tt = problem.times
    w1 = -1j * _rhs0(problem)
    frames = problem.u0.values[None, :] + tt[:, None] * w1[None, :]
    return Trajectory(tt, frames, problem.grid)


def zero_seed(problem: SemilinearProblem) -> Trajectory:
    tt = problem.times
    return Trajectory(tt, np.zeros((len(tt), problem.grid.N)), problem.grid)


def _seed(problem: SemilinearProblem) -> Trajectory:
    s = problem.seed
    if isinstance(s, Trajectory):
        problem._check(s)
        return s
    if s == "taylor":
        return taylor_seed(problem)
    if s == "zero":
        return zero_seed(problem)
    raise ParameterError(f"unknown seed {s!r}")


def mollified_target(w: Trajectory, eps: float, problem: SemilinearProblem, nodes: int = 8) -> Trajectory:
    """``phi_eps(t) = int_0^t rho(s / eps) (d/dt T w)(s) ds``.

    ``d/dt T w = d/dt w + A_w w - i f`` is formed on the frames and
    interpolated (cubic) inside each interval; rho is evaluated exactly at
    Gauss nodes, so every frame with ``t <= eps`` is exactly zero.
    """
    problem._check(w)
    if not 0 < eps < problem.T / 2:
        raise ParameterError("mollifier width must lie in (0, T*/2)")
    gen = _generator(problem, FrozenCoefficients(problem.coeffs, w))
    dw = w.time_derivative()
    G = np.array([dw[k] + _apply(gen, tt, w.frames[k]) - 1j * problem.forcing_at(tt)
                  for k, tt in enumerate(w.times)])
    gtraj = Trajectory(w.times, G, w.grid)
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    out = np.zeros_like(G)
    tt = w.times
    for k in range(len(tt) - 1):
        a, b = tt[k], tt[k + 1]
        acc = np.zeros(w.grid.N, dtype=complex)
        if b > eps:
            s = 0.5 * (b - a) * xg + 0.5 * (a + b)
            r = rho(s / eps)
            for sk, rk, wk in zip(s, r, wg):
                if rk:
                    acc += wk * rk * gtraj.at(sk)
            acc *= 0.5 * (b - a)
        out[k + 1] = out[k] + acc
    out[tt <= eps] = 0.0
    return Trajectory(tt, out, w.grid)


# ---------------------------------------------------------------------------
# residuals

def pde_residual(u: Trajectory, problem: SemilinearProblem) -> np.ndarray:
    """``||P_u(D) u - f||_0`` at every frame (D_t by 4th-order differences)."""
    problem._check(u)
    gen = _generator(problem, FrozenCoefficients(problem.coeffs, u))
    du = u.time_derivative()
    res = np.array([-1j * du[k] - 1j * _apply(gen, tt, u.frames[k]) - problem.forcing_at(tt)
                    for k, tt in enumerate(u.times)])
    return np.atleast_1d(sobolev_norm(res, 0, grid=u.grid))


def uniqueness_residual(u: Trajectory, v: Trajectory, problem: SemilinearProblem,
                        nodes: int = 8) -> float:
    """``sup_t ||P~~ (u - v)||_0`` with the homotopy-averaged zero-order term.

    ``P~~ w = D_t w + a_p D^p w + sum_j a_j(u) D^j w + b w`` where
    ``b = sum_j int_0^1 (d a_j/dw)(v + th (u - v)) dth D^j v``. The products
    are formed on the dealiasing grid, so ``P~~(u - v) = (P_u u - f) - (P_v v - f)``
    holds up to the theta quadrature.
    """
    problem._check(u)
    problem._check(v)
    d = u - v
    if not np.any(d.frames):
        return 0.0
    coeffs = problem.coeffs
    g = problem.grid
    gen = _generator(problem, FrozenCoefficients(coeffs, u))
    fine = gen.fine
    th, wth = np.polynomial.legendre.leggauss(nodes)
    th, wth = 0.5 * (th + 1.0), 0.5 * wth
    dd = d.time_derivative()
    worst = 0.0
    for k, tt in enumerate(u.times):
        main = -1j * dd[k] - 1j * _apply(gen, tt, d.frames[k])
        if not coeffs.w_independent:
            uf = interpolate(u.frames[k], g, fine)
            vf = interpolate(v.frames[k], g, fine)
            df = uf - vf
            b = np.zeros(fine.N, dtype=complex)
            Vf = np.fft.fft(vf)
            for j in range(coeffs.p):
                Djv = np.fft.ifft(fine.xi ** j * Vf) if j else vf
                avg = sum(w_ * coeffs.dw(j, tt, fine.x, vf + t_ * df) for t_, w_ in zip(th, wth))
                b += avg * Djv
            main = main + restrict(b * df, fine, g)
        worst = max(worst, float(sobolev_norm(main, 0, grid=g)))
    return worst


# ---------------------------------------------------------------------------
# Newton iteration

@dataclass
class NewtonReport:
    residuals: list = field(default_factory=list)
    graded: list = field(default_factory=list)
    contraction: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    seed: str = "taylor"
    target: str = "mollified"
    eps: float | None = None
    certified_interval: tuple = (0.0, 0.0)
    residual_interval: tuple = (0.0, 0.0)
    pde_residual: float | None = None
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "residuals": [float(r) for r in self.residuals],
            "graded_norms": [{str(k): float(v) for k, v in g.items()} for g in self.graded],
            "contraction": [float(c) for c in self.contraction],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "seed": self.seed,
            "target": self.target,
            "eps": None if self.eps is None else float(self.eps),
            "certified_interval": [float(a) for a in self.certified_interval],
            "residual_interval": [float(a) for a in self.residual_interval],
            "pde_residual": None if self.pde_residual is None else float(self.pde_residual),
            "message": self.message,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _smooth(traj: Trajectory) -> Trajectory:
    U = np.fft.fft(traj.frames, axis=1)
    keep = np.abs(traj.grid.xi) <= (2.0 / 3.0) * traj.grid.xi_max
    return Trajectory(traj.times, np.fft.ifft(U * keep, axis=1), traj.grid)


def newton_solve(problem: SemilinearProblem):
    """Iterate ``u <- u + S(u, target - T(u))`` until ``|||T(u) - target|||_0 <= tol``.

    Returns ``(u, report)``. Three consecutive residual increases, or running
    out of iterations, raise :class:`NewtonError` carrying the report.
    """
    u = _seed(problem)
    seed_name = problem.seed if isinstance(problem.seed, str) else "custom"
    if problem.target == "mollified":
        target = mollified_target(taylor_seed(problem), problem.eps, problem)
        certified = (0.0, float(problem.eps))
    else:
        target = zero_seed(problem)
        certified = (0.0, float(problem.T))
    rep = NewtonReport(seed=seed_name, target=problem.target,
                       eps=problem.eps if problem.target == "mollified" else None,
                       certified_interval=certified, residual_interval=certified)
    orders = sorted({0.0, float(problem.s)})
    increases = 0
    for it in range(problem.max_iter + 1):
        res = target - evaluate_T(u, problem)
        r = graded_norm(res, 0.0)
        rep.residuals.append(r)
        rep.graded.append({n: graded_norm(res, n) for n in orders})
        if len(rep.residuals) > 1:
            prev = rep.residuals[-2]
            rep.contraction.append(prev / r if r > 0 else float("inf"))
            increases = increases + 1 if r > prev else 0
        if r <= problem.tol:
            rep.converged = True
            break
        if increases >= 3:
            rep.message = "residual increased for 3 consecutive iterations"
            break
        if it == problem.max_iter:
            rep.message = f"no convergence in {problem.max_iter} iterations"
            break
        du = solve_S(u, res, problem)
        if problem.smoothing:
            du = _smooth(du)
        u = u + du
        rep.iterations = it + 1
    u = Trajectory(u.times, u.frames, u.grid, {"newton": rep.to_dict()})
    lo, hi = rep.residual_interval
    mask = (u.times >= lo - 1e-14) & (u.times <= hi + 1e-14)
    rep.pde_residual = float(np.max(pde_residual(u, problem)[mask]))
    if not rep.converged:
        raise NewtonError(rep.message, rep)
    rep.message = "converged"
    return u, rep
