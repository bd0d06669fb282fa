"""Solvers for ``d_t u = d_x^2 u + F d_x u + G u + S`` on a 1-D grid.

Two schemes are available:

``crank-nicolson-strang``
    Strang splitting: half a step of the exact reaction ``exp(G dt / 2)``,
    a Crank-Nicolson step for diffusion, drift and source, and the second
    reaction half-step with ``G`` at the new time.  Second order in
    ``(h, dt)``.
``mild-duhamel``
    Exponential time differencing of the mild formulation with the exact
    heat multiplier ``exp(-k^2 dt)`` and trapezoidal-type quadrature of the
    Duhamel integral.  The implicit end-point term is resolved by Picard
    iteration on each step.  Spectral in space, second order in time.

Coefficients ``F``, ``G`` and ``S`` may be ``None``, scalars, arrays over
the spatial grid, arrays of shape ``(nsteps + 1, nx)`` aligned with the
time steps, or callables ``c(x, t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import (
    ConvergenceError,
    DomainError,
    GridMismatchError,
    InstabilityError,
    ValidationError,
    WindowTooSmallError,
)
from .spaces import GridFunction
from .stats import fit_loglog

SCHEMES = ("crank-nicolson-strang", "mild-duhamel")


def heat_kernel(x, t):
    """``p_t(x) = exp(-x^2 / 4t) / (2 sqrt(pi t))``."""
    if np.any(np.asarray(t) <= 0):
        raise DomainError("heat kernel needs t > 0")
    val = np.exp(-np.asarray(x, dtype=float) ** 2 / (4 * t)) / (2 * np.sqrt(np.pi * t))
    return float(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class SolverConfig:
    """Discretisation of ``[-L, L]`` with spacing ``h`` and time step ``dt``.

    ``store_every`` keeps every k-th time slice (the final one is always
    kept).  ``exact_reaction`` selects the pointwise exponential for the
    reaction half-steps; otherwise the (2,2) Padé approximant is used.
    """

    h: float
    dt: float
    L: float
    scheme: str = "crank-nicolson-strang"
    boundary: str = "periodic"
    padding: float = 0.0
    exact_reaction: bool = True
    store_every: int = 1
    picard_tol: float = 1e-10
    picard_max: int = 50

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        if self.boundary not in ("periodic", "padded"):
            raise ValidationError(f"unknown boundary {self.boundary!r}")
        if not (self.h > 0 and self.dt > 0 and self.L > 0):
            raise ValidationError("h, dt and L must be positive")
        if self.store_every < 1:
            raise ValidationError("store_every must be >= 1")
        GridFunction.expected_size(self.L, self.h, self.boundary)

    @property
    def nx(self):
        return GridFunction.expected_size(self.L, self.h, self.boundary)

    @property
    def x(self):
        return -self.L + self.h * np.arange(self.nx)

    def grid_function(self, values):
        return GridFunction(values, self.h, self.L, self.boundary, self.padding)

    def steps(self, T):
        n = max(1, math.ceil(T / self.dt - 1e-9))
        return n, T / n

    def describe(self):
        return (f"scheme={self.scheme} h={self.h!r} dt={self.dt!r} L={self.L!r} "
                f"boundary={self.boundary} padding={self.padding!r}")


@dataclass(frozen=True, eq=False)
class ParabolicProblem:
    """``d_t u = d_x^2 u + F d_x u + G u + source`` on ``[0, T]`` from ``u0``."""

    u0: GridFunction
    T: float
    F: object = None
    G: object = None
    source: object = None

    def __post_init__(self):
        if self.T < 0:
            raise ValidationError("horizon must be non-negative")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored time slices ``values[i] = u(t[i], x)``."""

    t: np.ndarray
    values: np.ndarray
    config: SolverConfig

    @property
    def x(self):
        return self.config.x

    @property
    def final(self):
        return self.config.grid_function(self.values[-1])

    def slice(self, i):
        return self.config.grid_function(self.values[i])

    def index_of(self, t, tol=1e-9):
        i = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[i] - t) > tol * max(1.0, abs(t)):
            raise ValidationError(f"time {t} is not a stored slice")
        return i

    def at(self, t):
        return self.slice(self.index_of(t))


def write_trajectory_csv(path, traj, extra=""):
    """``t,x,value`` rows under a one-line config header."""
    tt, xx = np.meshgrid(traj.t, traj.x, indexing="ij")
    data = np.column_stack([tt.ravel(), xx.ravel(), traj.values.ravel()])
    with open(path, "w") as fh:
        fh.write(f"# {traj.config.describe()} {extra}".rstrip() + "\n")
        fh.write("t,x,value\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.17g")


# ---------------------------------------------------------------------------
# coefficients


class _Coef:
    def __init__(self, coef, x, times, name):
        self.name = name
        self.x = x
        self.times = times
        self.kind = "none"
        self.value = None
        if coef is None:
            return
        if callable(coef):
            self.kind, self.value = "callable", coef
            return
        arr = np.asarray(coef, dtype=float)
        if arr.ndim == 0:
            self.kind, self.value = "const", float(arr)
        elif arr.ndim == 1:
            if arr.shape != x.shape:
                raise GridMismatchError(f"{name} has {arr.size} points, solver grid has {x.size}")
            self.kind, self.value = "space", arr
        elif arr.ndim == 2:
            if arr.shape != (times.size, x.size):
                raise GridMismatchError(
                    f"{name} has shape {arr.shape}, solver needs {(times.size, x.size)}")
            self.kind, self.value = "spacetime", arr
        else:
            raise GridMismatchError(f"{name} must be at most 2-D")

    @property
    def present(self):
        return self.kind != "none"

    @property
    def static(self):
        return self.kind in ("none", "const", "space")

    def at(self, k):
        if self.kind == "none":
            return 0.0
        if self.kind in ("const", "space"):
            return self.value
        if self.kind == "spacetime":
            return self.value[k]
        return np.asarray(self.value(self.x, self.times[k]), dtype=float) * np.ones_like(self.x)


# ---------------------------------------------------------------------------
# Crank-Nicolson building blocks


def _operator(n, h, periodic, drift):
    """Sparse ``D2 + diag(drift) D1`` with centred differences."""
    main = np.full(n, -2.0 / h**2)
    up = np.full(n, 1.0 / h**2)
    lo = np.full(n, 1.0 / h**2)
    if np.ndim(drift) or drift != 0.0:
        d = np.broadcast_to(np.asarray(drift, dtype=float), (n,))
        up = up + d / (2 * h)
        lo = lo - d / (2 * h)
    # row i: lo[i] u[i-1] + main[i] u[i] + up[i] u[i+1]
    rows = np.arange(n)
    data = [main, up[:-1], lo[1:]]
    cols = [rows, rows[1:], rows[:-1]]
    rr = [rows, rows[:-1], rows[1:]]
    if periodic:
        data += [up[-1:], lo[:1]]
        rr += [np.array([n - 1]), np.array([0])]
        cols += [np.array([0]), np.array([n - 1])]
    return sparse.csc_matrix((np.concatenate(data), (np.concatenate(rr), np.concatenate(cols))),
                             shape=(n, n))


class _CrankNicolson:
    def __init__(self, config, dt, drift):
        self.config = config
        self.dt = dt
        self.drift = drift
        self.n = config.nx
        self.periodic = config.boundary == "periodic"
        self.spectral = self.periodic and not drift.present
        if self.spectral:
            k = 2 * np.pi * sfft.rfftfreq(self.n, d=config.h)
            sigma = -4.0 / config.h**2 * np.sin(k * config.h / 2) ** 2
            self.denom = 1.0 - 0.5 * dt * sigma
            self.mult = (1.0 + 0.5 * dt * sigma) / self.denom
        else:
            self._cache = None
            self.eye = sparse.identity(self.n, format="csc")

    def _factor(self, k):
        if self.drift.static and self._cache is not None:
            return self._cache
        A = _operator(self.n, self.config.h, self.periodic, self.drift.at(k))
        lu = splinalg.splu((self.eye - 0.5 * self.dt * A).tocsc())
        out = (A, lu)
        if self.drift.static:
            self._cache = out
        return out

    def step(self, u, k, src):
        """Advance from step ``k`` to ``k + 1``; ``src`` is the trapezoidal source sum."""
        if self.spectral:
            rhs = sfft.rfft(u) * self.mult
            if src is not None:
                rhs = rhs + 0.5 * self.dt * sfft.rfft(src) / self.denom
            return sfft.irfft(rhs, n=self.n)
        A_old, _ = self._factor(k)
        _, lu_new = self._factor(k + 1)
        rhs = u + 0.5 * self.dt * (A_old @ u)
        if src is not None:
            rhs = rhs + 0.5 * self.dt * src
        return lu_new.solve(rhs)


def _reaction_factor(g, dt, exact):
    if exact:
        # overflow surfaces as an InstabilityError right after the step
        with np.errstate(over="ignore"):
            return np.exp(0.5 * dt * g)
    a = 0.25 * dt * np.asarray(g)
    return (1 + a) / (1 - a)


# ---------------------------------------------------------------------------
# exponential integrator building blocks


def _phi_functions(z):
    """``phi1 = (e^z - 1)/z`` and ``phi2 = (e^z - 1 - z)/z^2`` with series near 0."""
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    em = np.expm1(zs)
    phi1 = np.where(small, 1 + z / 2 + z**2 / 6, em / zs)
    phi2 = np.where(small, 0.5 + z / 6 + z**2 / 24, (em - zs) / zs**2)
    return phi1, phi2


class _Exponential:
    def __init__(self, config, dt):
        self.n = config.nx
        self.k = 2 * np.pi * sfft.rfftfreq(self.n, d=config.h)
        z = -self.k**2 * dt
        self.E = np.exp(z)
        phi1, phi2 = _phi_functions(z)
        self.w_old = dt * (phi1 - phi2)
        self.w_new = dt * phi2
        self.w_euler = dt * phi1
        self.ik = 1j * self.k
        if self.n % 2 == 0:
            self.ik[-1] = 0.0

    def dx(self, u_hat):
        return sfft.irfft(self.ik * u_hat, n=self.n)


# ---------------------------------------------------------------------------
# drivers


def _check_padding(config, T):
    if config.boundary == "padded" and config.padding < 8 * math.sqrt(T):
        raise WindowTooSmallError(
            f"padding {config.padding} < 8 sqrt(T) = {8 * math.sqrt(T):.4g} for a padded run")


def _check_finite(u, k):
    if not np.all(np.isfinite(u)):
        raise InstabilityError(f"non-finite values after step {k}", step=k)


def _solve(problem, config):
    if problem.u0.values.shape != (config.nx,):
        raise GridMismatchError(f"initial condition has {problem.u0.values.size} points, "
                                f"solver grid has {config.nx}")
    _check_padding(config, problem.T)
    nsteps, dt = config.steps(problem.T) if problem.T > 0 else (0, config.dt)
    times = dt * np.arange(nsteps + 1)
    x = config.x
    F = _Coef(problem.F, x, times, "F")
    G = _Coef(problem.G, x, times, "G")
    S = _Coef(problem.source, x, times, "source")
    u = problem.u0.values.astype(float).copy()
    keep = [0] + [k for k in range(1, nsteps + 1) if k % config.store_every == 0 or k == nsteps]
    out = np.empty((len(keep), u.size))
    out[0] = u
    slot = 1
    if config.scheme == "crank-nicolson-strang":
        stepper = _CrankNicolson(config, dt, F)
        half_old = _reaction_factor(G.at(0), dt, config.exact_reaction) if G.present else None
        for k in range(nsteps):
            if G.present:
                u = half_old * u
            src = S.at(k) + S.at(k + 1) if S.present else None
            u = stepper.step(u, k, src)
            if G.present:
                half_old = _reaction_factor(G.at(k + 1), dt, config.exact_reaction)
                u = half_old * u
            _check_finite(u, k + 1)
            if slot < len(keep) and keep[slot] == k + 1:
                out[slot] = u
                slot += 1
    else:
        ex = _Exponential(config, dt)
        implicit = F.present or G.present

        def nonlinear(u_hat, u, k):
            val = S.at(k) if S.present else 0.0
            if G.present:
                val = val + G.at(k) * u
            if F.present:
                val = val + F.at(k) * ex.dx(u_hat)
            return sfft.rfft(np.broadcast_to(val, u.shape))

        u_hat = sfft.rfft(u)
        n_old = nonlinear(u_hat, u, 0)
        for k in range(nsteps):
            base = ex.E * u_hat + ex.w_old * n_old
            if not implicit:
                n_new = nonlinear(None, u, k + 1)
                new_hat = base + ex.w_new * n_new
                new = sfft.irfft(new_hat, n=ex.n)
            else:
                new_hat = ex.E * u_hat + ex.w_euler * n_old
                new = sfft.irfft(new_hat, n=ex.n)
                for _ in range(config.picard_max):
                    n_new = nonlinear(new_hat, new, k + 1)
                    cand_hat = base + ex.w_new * n_new
                    cand = sfft.irfft(cand_hat, n=ex.n)
                    _check_finite(cand, k + 1)
                    diff = np.max(np.abs(cand - new))
                    new, new_hat = cand, cand_hat
                    if diff < config.picard_tol * max(1.0, np.max(np.abs(cand))):
                        break
                else:
                    raise ConvergenceError(
                        f"Picard iteration did not contract within {config.picard_max} "
                        f"iterations at step {k + 1}; use a smaller time step")
                n_new = nonlinear(new_hat, new, k + 1)
            _check_finite(new, k + 1)
            u, u_hat, n_old = new, new_hat, n_new
            if slot < len(keep) and keep[slot] == k + 1:
                out[slot] = u
                slot += 1
    return Trajectory(times[keep], out, config)


def solve_potential(problem, config):
    """Solve ``d_t u = d_x^2 u + G u (+ source)``; ``problem.F`` must be absent."""
    if problem.F is not None:
        raise ValidationError("solve_potential takes no drift; use solve_drift_potential")
    return _solve(problem, config)


def solve_drift_potential(problem, config):
    """Solve ``d_t u = d_x^2 u + F d_x u + G u (+ source)``."""
    return _solve(problem, config)


@dataclass(frozen=True)
class OrderResult:
    rate: float
    hs: tuple
    errors: tuple
    saturated: bool


def order_of_accuracy(problem_factory, exact, configs, solver=solve_drift_potential, floor=1e-13):
    """Empirical order from the max final-time error over a ladder of configs.

    ``problem_factory(config)`` builds the problem on the config's grid and
    ``exact(x, t)`` is the closed-form solution.  If any error is at
    round-off level (below ``floor`` relative to the solution) the rate is
    undefined and the result is reported as saturated.
    """
    configs = list(configs)
    hs = np.array([c.h for c in configs])
    if len(configs) < 2 or np.ptp(hs) == 0:
        raise ValidationError("degenerate ladder: need at least two distinct spacings")
    errors = []
    for cfg in configs:
        prob = problem_factory(cfg)
        traj = solver(prob, cfg)
        ref = np.asarray(exact(cfg.x, traj.t[-1]), dtype=float)
        errors.append(float(np.max(np.abs(traj.values[-1] - ref))))
    scale = max(1.0, max(float(np.max(np.abs(exact(c.x, prob.T)))) for c in configs[:1]))
    errors = np.array(errors)
    if np.any(errors <= floor * scale):
        return OrderResult(float("nan"), tuple(hs), tuple(errors), True)
    fit = fit_loglog(hs, errors)
    return OrderResult(fit.slope, tuple(hs), tuple(errors), False)
