"""Method-of-lines solver for the linear problem ``D_t v + A(t, x, D) v = f``.

The evolution law is ``d/dt v = i f - A v`` with generator
``A = sum_j c_j(t, x) D^j`` and ``c_j = i a_j``.  Time stepping is RK4 composed
with the exact integrating factor of the x-independent part of the generator
(Lawson), carried out on Fourier coefficients.  Variable-coefficient
products are formed on a ``pad``-times finer grid and truncated back, so no
product mode wraps around the spectrum.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import Absorber, CoefficientSet, FrozenCoefficients, generator_coefficients
from .grid import Field, Grid, ParameterError, bracket, embed_index, sobolev_norm
from .symbols import OperatorMatrix, Symbol
from .trajectory import Trajectory
from .transform import TransformPack, invert_exp_lambda

BLOWUP = 1e12


class InstabilityError(RuntimeError):
    """The discrete solution blew up."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


@dataclass
class LinearProblem:
    """Data of ``D_t v + a_p D^p v + sum_j a_j(t, x, u(t, x)) D^j v = f``, ``v(0) = u0``.

    ``coeffs`` is a :class:`CoefficientSet` (frozen along ``state``, which may be
    None, a Field or a Trajectory) or an already frozen coefficient object.
    ``forcing`` is None, a callable ``t -> samples`` or a Trajectory.
    """

    coeffs: object
    grid: Grid
    u0: Field
    T: float
    dt: float | None = None
    forcing: object = None
    s: float = 0.0
    n_frames: int = 11
    state: object = None
    absorber: Absorber | None = None
    stepper: str = "lawson"
    pad: int = 2
    pack: TransformPack | None = None
    safety: float = 2.0

    def __post_init__(self):
        if self.T <= 0:
            raise ParameterError("time horizon must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ParameterError("time step must be positive")
        if self.n_frames < 2:
            raise ParameterError("at least two frames (t = 0 and t = T) are stored")
        if self.stepper not in ("lawson", "rk4"):
            raise ParameterError(f"unknown stepper {self.stepper!r}")
        self.grid.check(self.u0.grid)

    @property
    def frozen(self) -> FrozenCoefficients:
        if isinstance(self.coeffs, CoefficientSet):
            st = self.state
            if isinstance(st, Field):
                st = Trajectory.constant(st)
            return FrozenCoefficients(self.coeffs, st)
        return self.coeffs

    @property
    def p(self) -> int:
        return self.frozen.p

    def forcing_at(self, t: float):
        f = self.forcing
        if f is None:
            return None
        if isinstance(f, Trajectory):
            return f.at(t)
        return np.asarray(f(t), dtype=complex)


def assemble_generator(problem: LinearProblem, t: float) -> Symbol:
    """Symbol ``i a_p xi^p + sum_j i a_j(t, x, u(t, x)) xi^j`` sampled on the grid."""
    g = problem.grid
    cs = generator_coefficients(problem.frozen, t, g, problem.absorber)
    samples = np.zeros((g.N, g.N), dtype=complex)
    for j, c in enumerate(cs):
        if c is not None:
            samples += np.asarray(c)[:, None] * g.xi[None, :] ** j
    return Symbol(samples, g, order=float(problem.p))


# ---------------------------------------------------------------------------
# stepping machinery

class _Generator:
    """Fourier-side application of ``A(t)`` split as ``diag(lin) + R(t)``."""

    def __init__(self, problem: LinearProblem):
        self.pb = problem
        self.g = problem.grid
        self.fine = self.g.refine(problem.pad)
        self.idx = embed_index(self.g, self.fine)
        self.xi_f = self.fine.xi
        fz = problem.frozen
        self.frozen = fz
        self.static = not fz.time_dependent
        p = fz.p
        c0 = generator_coefficients(fz, 0.0, self.g, problem.absorber)
        # Lawson: the x-independent (mean) part of every term goes into the
        # integrating factor; constant-coefficient problems are then exact
        self.cbar = np.zeros(p + 1, dtype=complex)
        if problem.stepper == "lawson":
            for j, c in enumerate(c0):
                if c is not None:
                    self.cbar[j] = complex(np.mean(c))
        self.lin = sum(self.cbar[j] * self.g.xi ** j for j in range(p + 1))
        self._cache = {}

    def coefficients(self, t):
        key = 0.0 if self.static else t
        if key not in self._cache:
            cs = generator_coefficients(self.frozen, key, self.fine, self.pb.absorber)
            cs = [c if c is None else np.asarray(c) - cb for c, cb in zip(cs, self.cbar)]
            cs = [None if (c is None or not np.any(c)) else c for c in cs]
            if not self.static and len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = cs
        return self._cache[key]

    def remainder(self, t, V):
        N, Nf = self.g.N, self.fine.N
        Vf = np.zeros(Nf, dtype=complex)
        Vf[self.idx] = V * (Nf / N)
        acc = np.zeros(Nf, dtype=complex)
        for j, c in enumerate(self.coefficients(t)):
            if c is None:
                continue
            if np.ptp(c.real) == 0 and np.ptp(c.imag) == 0:
                acc += np.fft.ifft(c[0] * self.xi_f**j * Vf)
            else:
                acc += c * np.fft.ifft(self.xi_f**j * Vf)
        return np.fft.fft(acc)[self.idx] * (N / Nf)

    def spectral_bound(self):
        """Upper bound of the remainder's spectral radius from coefficient sup-norms."""
        cs = self.coefficients(0.0)
        xa = np.abs(self.g.xi)
        rho = np.zeros_like(xa)
        for j, c in enumerate(cs):
            if c is not None:
                rho += np.max(np.abs(c)) * xa**j
        return float(np.max(rho))


class _DenseGenerator:
    """Same interface with a precomputed dense Fourier-side remainder."""

    def __init__(self, lin, R):
        self.lin = lin
        self.R = R
        self.static = True

    def remainder(self, t, V):
        return self.R @ V

    def spectral_bound(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.R))))


def _time_grid(problem: LinearProblem, rho: float):
    T, nf = problem.T, problem.n_frames
    intervals = nf - 1
    if problem.dt is not None:
        steps = T / problem.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ParameterError("T / dt must be an integer")
        steps = int(round(steps))
        if steps % intervals:
            raise ParameterError("number of steps must be a multiple of the number of frame intervals")
        return steps // intervals, problem.dt
    dt_max = problem.safety / rho if rho > 0 else T / intervals
    per = max(1, math.ceil((T / intervals) / dt_max))
    return per, T / (intervals * per)


def _integrate(gen, problem: LinearProblem, V0, forcing_hat):
    """Lawson-RK4 (or plain RK4 when ``gen.lin`` is zero) on Fourier coefficients."""
    rho = gen.spectral_bound()
    per, dt = _time_grid(problem, rho)
    nf = problem.n_frames
    times = np.linspace(0.0, problem.T, nf)
    E = np.exp(-gen.lin * dt)
    E2 = np.exp(-gen.lin * dt / 2)

    def rhs(t, V):
        out = -gen.remainder(t, V)
        if forcing_hat is not None:
            out = out + 1j * forcing_hat(t)
        return out

    V = np.array(V0, dtype=complex)
    frames = np.empty((nf, len(V)), dtype=complex)
    frames[0] = V
    scale = BLOWUP * (1.0 + np.linalg.norm(V0))
    t = 0.0
    for n in range(1, nf):
        for _ in range(per):
            a = rhs(t, V)
            b = rhs(t + dt / 2, E2 * (V + dt / 2 * a))
            c = rhs(t + dt / 2, E2 * V + dt / 2 * b)
            d = rhs(t + dt, E * V + dt * E2 * c)
            V = E * V + dt / 6 * (E * a + 2 * E2 * (b + c) + d)
            t += dt
            nv = np.linalg.norm(V)
            if not np.isfinite(nv) or nv > scale:
                raise InstabilityError(f"solution norm exceeded {scale:.1e} at t = {t:.6g}", t)
        t = times[n]
        frames[n] = V
    diag = {"dt": dt, "steps": per * (nf - 1), "dt_times_rho": dt * rho, "stepper": problem.stepper}
    return times, frames, diag


def _forcing_hat(problem: LinearProblem, transform=None):
    if problem.forcing is None:
        return None

    def fh(t):
        f = problem.forcing_at(t)
        if transform is not None:
            f = transform(f)
        return np.fft.fft(f)

    return fh


def solve_linear(problem: LinearProblem) -> Trajectory:
    """Integrate ``d/dt v = i f - A(t) v`` from ``v(0) = u0``."""
    gen = _Generator(problem)
    times, F, diag = _integrate(gen, problem, np.fft.fft(problem.u0.values), _forcing_hat(problem))
    return Trajectory(times, np.fft.ifft(F, axis=1), problem.grid, diag)


def conjugated_generator(problem: LinearProblem, pack: TransformPack, t: float = 0.0,
                         min_order: int = 0):
    """Working-band Fourier matrix of ``(e^Lambda)^{-1} A(t) e^Lambda``."""
    fine = pack.fine_grid
    cs = generator_coefficients(problem.frozen, t, fine, problem.absorber, min_order)
    return pack.conjugate(cs)


@dataclass
class TransformedSolution:
    w: Trajectory
    v: Trajectory
    generator: np.ndarray = field(repr=False, default=None)


def solve_transformed(problem: LinearProblem, exact_inverse: bool = False) -> TransformedSolution:
    """Solve the conjugated system for ``w = (e^Lambda)^{-1} v`` and map back ``v = e^Lambda w``.

    The conjugated generator is formed on the pack's finer grid and
    restricted to the working band (the operator the tuning certifies), so
    v agrees with :func:`solve_linear` up to discretization error. Initial
    datum and forcing are mapped by the truncated Neumann series (or a dense
    solve with ``exact_inverse``).

    Needs time-independent frozen coefficients (the conjugated generator is
    assembled once as a dense matrix).
    """
    pack = problem.pack
    if pack is None:
        raise ParameterError("solve_transformed needs a transform pack")
    if problem.frozen.time_dependent:
        raise ParameterError("solve_transformed supports time-independent coefficients only")
    if pack.is_trivial():
        v = solve_linear(problem)
        return TransformedSolution(v, v)
    g = problem.grid
    rn = None
    if not exact_inverse and not pack.is_trivial():
        from .transform import estimate_neumann_norm
        rn = estimate_neumann_norm(pack)
        if rn >= 1:
            raise ParameterError(f"Neumann series not certified: ||r|| = {rn:.3f} >= 1")
    Bh = conjugated_generator(problem, pack).fourier()
    base = _Generator(problem)
    R = Bh - np.diag(base.lin)
    gen = _DenseGenerator(base.lin, R)

    def inv(f):
        return invert_exp_lambda(pack, f, exact=exact_inverse, rnorm=rn)

    w0 = inv(problem.u0.values)
    times, F, diag = _integrate(gen, problem, np.fft.fft(w0), _forcing_hat(problem, inv))
    Wf = np.fft.ifft(F, axis=1)
    diag["neumann_norm"] = rn
    w = Trajectory(times, Wf, g, diag)
    V = np.array([pack.apply_exp(fr) for fr in Wf])
    v = Trajectory(times, V, g, dict(diag))
    return TransformedSolution(w, v, Bh)


# ---------------------------------------------------------------------------
# energy audit

@dataclass
class EnergyAudit:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    margin: float
    C_fit: float
    exponent_rate: float
    sigma: float
    s: float
    passed: bool
    K_fit: float = 1.0
    kappa: float = 1.0
    fitted_on: str = "v"
    gronwall_K: float | None = None
    gronwall_margin: float | None = None
    norms0: np.ndarray = None
    norms_s: np.ndarray = None

    def to_dict(self) -> dict:
        opt = lambda v: None if v is None else float(v)
        return {
            "margin": float(self.margin),
            "C_fit": float(self.C_fit),
            "K_fit": float(self.K_fit),
            "kappa": float(self.kappa),
            "fitted_on": self.fitted_on,
            "exponent_rate": float(self.exponent_rate),
            "sigma": float(self.sigma),
            "s": float(self.s),
            "passed": bool(self.passed),
            "gronwall_K": opt(self.gronwall_K),
            "gronwall_margin": opt(self.gronwall_margin),
        }


def _cumtrapz(y, t):
    out = np.zeros_like(y, dtype=float)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def _weighted_norm(A: np.ndarray, grid: Grid, s_out: float, s_in: float) -> float:
    """Operator norm of the sample-space matrix ``A`` from H^{s_in} to H^{s_out}."""
    Ah = OperatorMatrix(A, grid).fourier()
    b = bracket(grid.xi)
    return float(np.linalg.norm((b[:, None] ** s_out) * Ah * (b[None, :] ** -s_in), 2))


def _forcing_energy(forcing, times, s, grid, transform=None):
    if forcing is None:
        return np.zeros(len(times))
    vals = []
    for tt in times:
        f = forcing.at(tt) if isinstance(forcing, Trajectory) else np.asarray(forcing(tt), complex)
        if transform is not None:
            f = transform(f)
        vals.append(float(sobolev_norm(f, s, grid=grid)) ** 2)
    return _cumtrapz(np.array(vals), np.asarray(times))


def _fit_envelope(y, data, rate, t, win):
    """Smallest ``(C, K)`` with ``K >= 1`` and ``y <= C e^{K rate t} data`` on the window.

    K is the steepest log-slope from t = 0 inside the window; C then closes
    the bound at every window point.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        base0 = y[0] / data[0] if data[0] > 0 else 0.0
        K = 1.0
        if base0 > 0:
            for k in np.flatnonzero(win):
                if t[k] > t[0] and y[k] > 0:
                    K = max(K, np.log(y[k] / (base0 * data[k])) / (rate * (t[k] - t[0])))
        env = np.exp(K * rate * (t - t[0])) * data
        C = float(np.max(np.where(env > 0, y / env, 0.0)[win]))
    # the fitted bound is tight at the window points; keep it on the safe side of rounding
    return C * (1.0 + 1e-12), float(K)


def energy_audit(traj: Trajectory, s: float, sigma: float, u_frozen=None,
                 coeffs: CoefficientSet | None = None, forcing=None, w: Trajectory | None = None,
                 pack: TransformPack | None = None, fit_fraction: float = 0.1) -> EnergyAudit:
    """Check ``||v(t)||_{s-sigma}^2 <= C e^{K (1+||u||^{4p-3}_{4p-3}) t}(||u0||_s^2 + int ||f||_s^2)``.

    The constants are fitted on the first ``fit_fraction`` of the horizon and
    then held fixed; ``margin = min_t RHS/LHS`` over the whole run, so a value
    below 1 means the fitted bound was violated later on.

    With a transformed trajectory ``w`` and its ``pack`` the envelope
    ``(C_w, K)`` is fitted to ``||w||_s^2`` (data mapped by the inverse) and
    carried over to v through ``kappa = ||e^Lambda||^2_{s -> s-sigma}
    ||(e^Lambda)^{-1}||^2_{s -> s}``, i.e. ``C = kappa C_w``. Otherwise the
    envelope is fitted to v directly. K never drops below 1.

    The differential inequality ``d/dt ||w||^2 <= K_g (||f_w||^2 + ||w||^2)``
    is fitted on the same window (``gronwall_K``) and its worst ratio over
    the run is ``gronwall_margin``.
    """
    g = traj.grid
    t = traj.times
    p = coeffs.p if coeffs is not None else 2
    if u_frozen is None:
        unorm = 0.0
    else:
        uu = u_frozen.frames if isinstance(u_frozen, Trajectory) else (
            u_frozen.values if isinstance(u_frozen, Field) else np.asarray(u_frozen))
        unorm = float(np.max(sobolev_norm(uu, 4 * p - 3, grid=g)))
    rate = 1.0 + unorm ** (4 * p - 3)
    lhs = traj.norms(s - sigma) ** 2
    data = sobolev_norm(traj.frames[0], s, grid=g) ** 2 + _forcing_energy(forcing, t, s, g)
    win = t <= t[0] + fit_fraction * (t[-1] - t[0]) + 1e-12 * (t[-1] - t[0])
    win[:2] = True

    transformed = w is not None and pack is not None and not pack.is_trivial()
    if transformed:
        inv = np.linalg.inv(pack.E)
        kappa = (_weighted_norm(pack.E, g, s - sigma, s) * _weighted_norm(inv, g, s, s)) ** 2
        yw = w.norms(s) ** 2
        data_w = sobolev_norm(w.frames[0], s, grid=g) ** 2 + _forcing_energy(
            forcing, t, s, g, transform=lambda f: inv @ f)
        C_w, K = _fit_envelope(yw, data_w, rate, t, win)
        C_fit = kappa * C_w
        fitted_on = "w"
    else:
        kappa = 1.0
        C_fit, K = _fit_envelope(lhs, data, rate, t, win)
        fitted_on = "v"
    with np.errstate(over="ignore"):
        rhs = C_fit * np.exp(K * rate * (t - t[0])) * data
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(lhs > 0, rhs / lhs, np.inf)
    margin = float(np.min(m))

    gK = gm = None
    if w is not None and len(w) >= 5:
        e = w.norms(0) ** 2
        de = np.gradient(e, w.times, edge_order=2)
        fw = np.zeros_like(e)
        if forcing is not None:
            for k, tt in enumerate(w.times):
                f = forcing.at(tt) if isinstance(forcing, Trajectory) else forcing(tt)
                if transformed:
                    f = invert_exp_lambda(pack, f)
                fw[k] = float(sobolev_norm(f, 0, grid=g)) ** 2
        scale = e + fw
        wwin = w.times <= w.times[0] + fit_fraction * (w.times[-1] - w.times[0])
        wwin[:2] = True
        gK = float(max(np.max((de / scale)[wwin]), 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            gm = float(np.min(np.where(de > 0, gK * scale / np.where(de > 0, de, 1.0), np.inf)))
    return EnergyAudit(t, lhs, rhs, margin, C_fit, rate, sigma, s, margin >= 1.0, K, kappa,
                       fitted_on, gK, gm, traj.norms(0), traj.norms(s))


def write_norms_csv(path, traj: Trajectory, audit: EnergyAudit):
    """Columns: t, ||v||_0, ||v||_s, ||v||_{s-sigma}, bound_RHS, margin."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "norm_0", "norm_s", "norm_s_minus_sigma", "bound_rhs", "margin"])
        for k, tt in enumerate(traj.times):
            lhs = audit.lhs[k]
            m = audit.rhs[k] / lhs if lhs > 0 else float("inf")
            wr.writerow([f"{tt:.10g}", f"{audit.norms0[k]:.12e}", f"{audit.norms_s[k]:.12e}",
                         f"{math.sqrt(lhs):.12e}", f"{audit.rhs[k]:.12e}", f"{m:.12e}"])
