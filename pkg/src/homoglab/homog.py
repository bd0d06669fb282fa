"""Rescaled potentials, homogenized constants, correctors and the exponential tilt.

The rescaled potential is ``V_eps(x, t) = eps^-beta V(x / eps, t / eps^alpha)``
with ``beta = 1/2 + alpha/4`` for ``alpha < 2`` and ``beta = alpha/2``
otherwise.  The correctors solve

    d_t Y = d_x^2 Y + V_eps,
    d_t Z = d_x^2 Z + |d_x Y|^2 - Vbar_eps(t),

from zero data, where ``Vbar_eps(t) = E |d_x Y(x, t)|^2``.  With them
``v = u exp(-(Y + Z))`` solves a heat equation with the constant potential
``Vbar_eps`` plus drift and lower-order terms that vanish as ``eps -> 0``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import integrate, interpolate

from . import fields
from .errors import (
    ConvergenceError,
    CoverageError,
    DomainError,
    GridMismatchError,
    InstabilityError,
    NonIntegrableError,
    ValidationError,
)
from .solver import ParabolicProblem, SolverConfig, Trajectory, heat_kernel, solve_potential
from .spaces import GridFunction, heat_semigroup_apply
from .stats import jackknife

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class ScalingRegime:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")

    @property
    def beta(self):
        return 0.5 + self.alpha / 4 if self.alpha < 2 else self.alpha / 2

    @property
    def tag(self):
        if self.alpha < 2:
            return "slow"
        return "diffusive" if self.alpha == 2 else "fast"


def _as_regime(regime):
    return regime if isinstance(regime, ScalingRegime) else ScalingRegime(float(regime))


def rescale_potential(realization, eps, regime, x=None, t=None):
    """``V_eps`` on the macroscopic points ``x`` (space) and ``t`` (time).

    Returns an array of shape ``(len(t), len(x))``.  When the macroscopic
    points map onto base-grid nodes the values are copied; otherwise they
    are bilinearly interpolated.  A periodic base grid wraps in ``x``.
    Without ``x``/``t`` the macroscopic grid is the image of the base grid.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    if eps >= 1:
        log.info("eps = %g >= 1 lies outside the asymptotic regime", eps)
    reg = _as_regime(regime)
    g = realization.grid
    amp = eps ** (-reg.beta)
    tscale = eps**reg.alpha
    if x is None:
        x = eps * g.x
    if t is None:
        t = tscale * g.t
    xi = (np.asarray(x, dtype=float) / eps - g.x0) / g.hx
    si = (np.asarray(t, dtype=float) / tscale - g.t0) / g.ht
    tol = 1e-6
    if np.any(si < -tol) or np.any(si > g.nt - 1 + tol):
        raise CoverageError("base field does not cover the rescaled time window")
    if g.periodic_x:
        xi = np.mod(xi, g.nx)
        xi = np.where(xi > g.nx - tol, xi - g.nx, xi)
    elif np.any(xi < -tol) or np.any(xi > g.nx - 1 + tol):
        raise CoverageError("base field does not cover the rescaled space window")
    ri, rs = np.rint(xi), np.rint(si)
    vals = realization.values
    if np.all(np.abs(xi - ri) < tol) and np.all(np.abs(si - rs) < tol):
        ix = np.mod(ri.astype(int), g.nx) if g.periodic_x else ri.astype(int)
        it = np.clip(rs.astype(int), 0, g.nt - 1)
        return amp * vals[np.ix_(it, ix)]
    si = np.clip(si, 0, g.nt - 1)
    i0 = np.clip(np.floor(si).astype(int), 0, max(g.nt - 2, 0))
    ws = si - i0
    i1 = np.minimum(i0 + 1, g.nt - 1)
    if g.periodic_x:
        j0 = np.floor(xi).astype(int) % g.nx
        wx = xi - np.floor(xi)
        j1 = (j0 + 1) % g.nx
    else:
        xi = np.clip(xi, 0, g.nx - 1)
        j0 = np.clip(np.floor(xi).astype(int), 0, max(g.nx - 2, 0))
        wx = xi - j0
        j1 = np.minimum(j0 + 1, g.nx - 1)
    ws = ws[:, None]
    out = ((1 - ws) * ((1 - wx) * vals[np.ix_(i0, j0)] + wx * vals[np.ix_(i0, j1)])
           + ws * ((1 - wx) * vals[np.ix_(i1, j0)] + wx * vals[np.ix_(i1, j1)]))
    return amp * out


# ---------------------------------------------------------------------------
# homogenized constants


def _quad(f, a, b, rtol, points=None, what="integral"):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        val, err = integrate.quad(f, a, b, epsrel=rtol, epsabs=0.0, limit=500, points=points)
    if caught and err > 100 * rtol * max(abs(val), 1e-300):
        raise ConvergenceError(f"adaptive quadrature for {what} stalled "
                               f"(value {val:.6g}, error estimate {err:.2g})")
    return val


def _line(f, scale, breakpoints=(), support=None, rtol=1e-10):
    """Integral of ``f`` over the real line split around ``[-12 scale, 12 scale]``."""
    if support is not None and math.isfinite(support):
        pts = sorted({p for p in breakpoints if -support < p < support}) or None
        return _quad(f, -support, support, rtol, pts)
    a = 12.0 * scale
    pts = sorted({p for p in breakpoints if -a < p < a}) or None
    mid = _quad(f, -a, a, rtol, pts)
    tails = _quad(f, a, math.inf, rtol) + _quad(f, -math.inf, -a, rtol)
    return mid + tails


def _time_points(model, upper):
    pts = [model.time_scale * k for k in (0.25, 1.0, 4.0, 16.0)]
    return [p for p in pts if 0 < p < upper] or None


def vbar_slow(model, rtol=1e-8):
    """``(1 / 2 sqrt(pi)) int_0^inf Phi-bar(t) t^-1/2 dt`` via ``t = tau^2``."""
    if model.x_decay <= 1 or model.t_decay <= 0.5:
        raise NonIntegrableError("declared decay too slow for the slow-regime constant")
    if model.is_zero:
        return 0.0
    f = lambda tau: fields.phi_bar(model, tau * tau, rtol=rtol * 1e-2)
    ts = math.sqrt(model.time_scale)
    upper = math.inf
    if model.support is not None and math.isfinite(model.support[1]):
        upper = math.sqrt(model.support[1])
    pts = [ts * k for k in (0.5, 1.0, 2.0, 4.0) if ts * k < upper]
    a = 6.0 * ts if upper == math.inf else upper
    val = _quad(f, 0.0, min(a, upper), rtol, pts or None, "vbar_slow")
    if upper == math.inf:
        val += _quad(f, a, math.inf, rtol, None, "vbar_slow tail")
    return val / math.sqrt(math.pi)


def _kernel_phi_integral(model, t, rtol=1e-10):
    """``int p_t(x) Phi(x, t) dx``; the narrower of the two factors sets the variable."""
    ell = model.length_scale
    st = math.sqrt(t)
    if st <= ell:
        # x = sqrt(t) eta: the kernel becomes a fixed Gaussian in eta
        f = lambda eta: math.exp(-eta * eta / 4) / (2 * math.sqrt(math.pi)) \
            * float(model.func(np.array(st * eta), np.array(t)))
        bps = tuple(b / st for b in model.x_breakpoints)
        return _line(f, 2.0, bps, None, rtol)
    f = lambda x: heat_kernel(x, t) * float(model.func(np.array(x), np.array(t)))
    support = None if model.support is None else model.support[0]
    return _line(f, ell, model.x_breakpoints, support, rtol)


def vbar_diffusive(model, rtol=1e-6):
    """``int_0^inf int p_t(x) Phi(x, t) dx dt``."""
    if model.x_decay <= 1 or model.t_decay <= 0.5:
        raise NonIntegrableError("declared decay too slow for the diffusive-regime constant")
    if model.is_zero:
        return 0.0
    f = lambda t: _kernel_phi_integral(model, t, rtol * 1e-2)
    ts = model.time_scale
    ell2 = model.length_scale**2
    upper = math.inf
    if model.support is not None and math.isfinite(model.support[1]):
        upper = model.support[1]
    pts = sorted({p for p in (ell2 / 4, ell2, ts, 4 * ts) if 0 < p < min(upper, 20 * ts)})
    a = min(upper, 20 * max(ts, ell2))
    val = _quad(f, 0.0, a, rtol, pts or None, "vbar_diffusive")
    if upper == math.inf:
        val += _quad(f, a, math.inf, rtol, None, "vbar_diffusive tail")
    return val


def vbar_fast(model, rtol=1e-8):
    """``int_0^inf Phi(0, t) dt``."""
    if model.t_decay <= 1:
        raise NonIntegrableError("declared time decay too slow for the fast-regime constant")
    if model.is_zero:
        return 0.0
    f = lambda t: float(model.func(np.array(0.0), np.array(t)))
    ts = model.time_scale
    upper = math.inf
    if model.support is not None and math.isfinite(model.support[1]):
        upper = model.support[1]
    a = min(upper, 40 * ts)
    val = _quad(f, 0.0, a, rtol, _time_points(model, a), "vbar_fast")
    if upper == math.inf:
        val += _quad(f, a, math.inf, rtol, None, "vbar_fast tail")
    return val


def vbar(model, alpha):
    """Homogenized constant for the regime selected by ``alpha``."""
    tag = _as_regime(alpha).tag
    return {"slow": vbar_slow, "diffusive": vbar_diffusive, "fast": vbar_fast}[tag](model)


# ---------------------------------------------------------------------------
# Vbar_eps(t)


def vbar_eps_quadrature(model, eps, alpha, t, rtol=1e-7):
    """``E |d_x Y^eps(x, t)|^2`` by quadrature.

    Writing the double Duhamel integral in the variables ``u = a + b`` and
    ``sigma = b - a`` and using ``int p'_a(y) p'_b(y - x) dy = -p''_{a+b}(x)``
    together with ``d_u p_u = p''_u``, the ``u`` integral is explicit.  In
    microscopic variables (``T = t / eps^alpha``, ``c = eps^(2 - alpha)``):

        Vbar_eps(t) = int_0^T dsigma (4 pi sigma)^-1/2 int Phi(xi, sigma) exp(-c xi^2 / 4 sigma) dxi
                      - eps^(alpha/2) int_0^T dsigma int Phi(xi, sigma) p_{2t - eps^alpha sigma}(eps xi) dxi.

    The first integral is taken in ``sigma = tau^2`` to remove the
    ``sigma^-1/2`` endpoint singularity.
    """
    if t < 0:
        raise DomainError("time must be non-negative")
    if model.is_zero or t == 0:
        return 0.0
    if model.x_decay <= 1:
        raise NonIntegrableError("declared spatial decay too slow")
    T = t / eps**alpha
    c = eps ** (2 - alpha)
    ell = model.length_scale
    support = None if model.support is None else model.support[0]
    inner_tol = rtol * 1e-2

    def first(sig):
        w = math.sqrt(4 * sig / c)
        if w <= ell:
            f = lambda e: float(model.func(np.array(w * e), np.array(sig))) * math.exp(-e * e)
            g = w * _line(f, 1.0, tuple(b / w for b in model.x_breakpoints), None, inner_tol)
        else:
            f = lambda x: float(model.func(np.array(x), np.array(sig))) * math.exp(-x * x / (w * w))
            g = _line(f, ell, model.x_breakpoints, support, inner_tol)
        return g / (2 * math.sqrt(math.pi * sig))

    def second(sig):
        s = 2 * t - eps**alpha * sig
        width = math.sqrt(2 * s) / eps
        f = lambda x: float(model.func(np.array(x), np.array(sig))) * heat_kernel(eps * x, s)
        return _line(f, min(ell, width), model.x_breakpoints, support, inner_tol)

    rt = math.sqrt(T)
    tpts = [math.sqrt(p) for p in (_time_points(model, T) or [])]
    # first(sigma) tends to Phi(0, 0) / sqrt(c) as sigma -> 0, so the tau-integrand vanishes there
    A = _quad(lambda tau: 2 * tau * first(tau * tau) if tau > 0 else 0.0,
              0.0, rt, rtol, tpts or None, "Vbar_eps (first term)")
    B = _quad(second, 0.0, T, rtol, _time_points(model, T), "Vbar_eps (second term)")
    return A - eps ** (alpha / 2) * B


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    n: int


def vbar_eps(model, eps, alpha, t, method="quadrature", n=500, seed=0, L=5.0, threads=1):
    """``Vbar_eps(t)`` by quadrature (returns ``(value, None)``) or Monte Carlo.

    The Monte Carlo path samples ``n`` base fields, solves for ``Y^eps``
    and averages ``|d_x Y^eps(0, t)|^2``; it returns ``(mean, stderr)``.
    """
    if method == "quadrature":
        return vbar_eps_quadrature(model, eps, alpha, t), None
    if method != "monte-carlo":
        raise ValidationError(f"unknown method {method!r}")
    vals = corrector_moments(model, eps, alpha, t, n, seed, L=L, threads=threads)["dY2"]
    est, se = jackknife(vals)
    return float(est), float(se)


def vbar_eps_curve(model, eps, alpha, T, nodes=48):
    """``Vbar_eps`` tabulated on nodes clustered near 0 and a PCHIP interpolant."""
    t0 = min(1e-2 * eps**alpha, T / 10)
    ts = np.concatenate([[0.0], np.geomspace(t0, T, nodes - 1)])
    vals = np.array([vbar_eps_quadrature(model, eps, alpha, t) for t in ts])
    return ts, vals, interpolate.PchipInterpolator(ts, vals)


# ---------------------------------------------------------------------------
# micro/macro grids


@dataclass(frozen=True)
class MultiscaleSetup:
    """Macroscopic solver grid and the aligned microscopic base grid."""

    eps: float
    regime: ScalingRegime
    config: SolverConfig
    base_grid: fields.Grid
    T: float
    nsteps: int

    @property
    def times(self):
        return self.config.dt * np.arange(self.nsteps + 1)


def multiscale_setup(model, eps, alpha, L, T, scheme="mild-duhamel", resolution=8,
                     max_h=1 / 16, max_dt=1 / 64, store_every=1):
    """Grids resolving the microscopic scales: ``h <= eps ell / resolution`` and
    ``dt <= eps^alpha tau / resolution`` in macroscopic units.
    """
    reg = _as_regime(alpha)
    h_target, dt_target = max_h, max_dt
    if not model.is_zero:
        # a vanishing field has no microscopic scale to resolve
        h_target = min(max_h, eps * model.length_scale / resolution)
        dt_target = min(max_dt, eps**reg.alpha * model.time_scale / resolution)
    nx = math.ceil(2 * L / h_target - 1e-9)
    h = 2 * L / nx
    nsteps = math.ceil(T / dt_target - 1e-9)
    dt = T / nsteps
    cfg = SolverConfig(h=h, dt=dt, L=L, scheme=scheme, boundary="periodic", store_every=store_every)
    base = fields.Grid(-L / eps, h / eps, nx, 0.0, dt / eps**reg.alpha, nsteps + 1, periodic_x=True)
    return MultiscaleSetup(eps, reg, cfg, base, T, nsteps)


def sample_potential(model, setup, seed):
    """One base field on the micro grid and its rescaled ``V_eps`` on the solver grid."""
    if model.kind == "shot-noise":
        raise ValidationError("periodic multiscale runs need a Gaussian model")
    real = fields.sample_gaussian_field(model, setup.base_grid, seed)
    return real, rescale_potential(real, setup.eps, setup.regime, setup.config.x, setup.times)


# ---------------------------------------------------------------------------
# correctors


def spectral_dx(values, h, order=1):
    """Spectral derivative along the last axis of periodic samples."""
    n = values.shape[-1]
    k = 2 * np.pi * sfft.rfftfreq(n, d=h)
    mult = (1j * k) ** order
    if n % 2 == 0 and order % 2 == 1:
        mult[-1] = 0.0
    return sfft.irfft(sfft.rfft(values, axis=-1) * mult, n=n, axis=-1)


def _dx(values, h, method, boundary="periodic"):
    if method == "spectral":
        if boundary != "periodic":
            raise ValidationError("spectral derivatives need a periodic grid")
        return spectral_dx(values, h)
    if boundary == "periodic":
        return (np.roll(values, -1, axis=-1) - np.roll(values, 1, axis=-1)) / (2 * h)
    return np.gradient(values, h, axis=-1, edge_order=2)


def corrector_Y(V_eps, config, T=None):
    """``Y`` with ``d_t Y = d_x^2 Y + V_eps``, ``Y(0) = 0``.

    ``V_eps`` is any coefficient accepted by the solver; for an array of
    shape ``(nsteps + 1, nx)`` the horizon follows from its row count.
    """
    if T is None:
        arr = np.asarray(V_eps) if not callable(V_eps) else None
        if arr is None or arr.ndim != 2:
            raise ValidationError("horizon T is required unless V_eps is a space-time array")
        T = (arr.shape[0] - 1) * config.dt
    zero = config.grid_function(np.zeros(config.nx))
    return solve_potential(ParabolicProblem(zero, T, source=V_eps), config)


def _curve_values(vbar_curve, times):
    if vbar_curve is None:
        return np.zeros_like(times)
    if callable(vbar_curve):
        return np.asarray(vbar_curve(times), dtype=float) * np.ones_like(times)
    arr = np.asarray(vbar_curve, dtype=float)
    if arr.ndim == 0:
        return np.full_like(times, float(arr))
    if arr.shape != times.shape:
        raise GridMismatchError("Vbar_eps curve does not match the corrector time steps")
    return arr


def corrector_Z(Y, vbar_curve, config, derivative="spectral"):
    """``Z`` with ``d_t Z = d_x^2 Z + |d_x Y|^2 - Vbar_eps(t)``, ``Z(0) = 0``.

    ``Y`` must store every time step of ``config``.  ``vbar_curve`` is a
    callable of ``t``, an array over the stored times, or a constant.
    """
    n, dt = config.steps(Y.t[-1]) if Y.t[-1] > 0 else (0, config.dt)
    if Y.t.size != n + 1 or not np.allclose(Y.t, dt * np.arange(n + 1)):
        raise GridMismatchError("Y must store every time step of the solver config")
    dY = _dx(Y.values, config.h, derivative, config.boundary)
    source = dY**2 - _curve_values(vbar_curve, Y.t)[:, None]
    zero = config.grid_function(np.zeros(config.nx))
    return solve_potential(ParabolicProblem(zero, Y.t[-1], source=source), config)


@dataclass(frozen=True, eq=False)
class CorrectorPair:
    Y: Trajectory
    Z: Trajectory
    vbar_times: np.ndarray
    vbar_values: np.ndarray
    seed: int
    eps: float
    alpha: float


def correctors(model, setup, seed, curve=None):
    """Sample a field and build both correctors on ``setup``'s grid."""
    if curve is None:
        curve = vbar_eps_curve(model, setup.eps, setup.regime.alpha, setup.T)
    _, V = sample_potential(model, setup, seed)
    Y = corrector_Y(V, setup.config)
    Z = corrector_Z(Y, curve[2], setup.config)
    return CorrectorPair(Y, Z, curve[0], curve[1], int(seed), setup.eps, setup.regime.alpha), V


def corrector_moments(model, eps, alpha, t, n, seed, L=5.0, threads=1):
    """Per-realization ``Y``, ``d_x Y`` and ``d_x^2 Y`` at ``(0, t)``.

    Realization ``r`` uses the seed sequence ``(seed, r)``; results are in
    realization order whatever the thread count.
    """
    from .harness import map_ordered, realization_seed

    setup = multiscale_setup(model, eps, alpha, L, t, store_every=10**9)
    i0 = int(np.argmin(np.abs(setup.config.x)))

    def one(r):
        _, V = sample_potential(model, setup, realization_seed(seed, 0, r))
        y = corrector_Y(V, setup.config).values[-1]
        return (y[i0], spectral_dx(y, setup.config.h)[i0], spectral_dx(y, setup.config.h, 2)[i0])

    rows = np.array(map_ordered(one, range(n), threads))
    return {"Y2": rows[:, 0] ** 2, "dY2": rows[:, 1] ** 2, "d2Y2": rows[:, 2] ** 2}


# ---------------------------------------------------------------------------
# transform and limit


def _check_aligned(*trajs):
    ref = trajs[0]
    for tr in trajs[1:]:
        if tr.values.shape != ref.values.shape or not np.allclose(tr.t, ref.t) \
                or not np.allclose(tr.x, ref.x):
            raise GridMismatchError("trajectories are not on the same grid")


def transform_v(u, Y, Z):
    """``v = u exp(-(Y + Z))`` slice by slice."""
    _check_aligned(u, Y, Z)
    return Trajectory(u.t.copy(), u.values * np.exp(-(Y.values + Z.values)), u.config)


def transform_u(v, Y, Z):
    """Inverse of :func:`transform_v`."""
    _check_aligned(v, Y, Z)
    return Trajectory(v.t.copy(), v.values * np.exp(Y.values + Z.values), v.config)


def v_equation_residual(v, Y, Z, vbar_curve, window=None, derivative="centered"):
    """Discrete residual of the tilted equation

        d_t v = d_x^2 v + Vbar_eps v + 2 (d_x Y + d_x Z) d_x v + (|d_x Z|^2 + 2 d_x Z d_x Y) v

    with a forward difference in time against the average of the right-hand
    side at both ends (a Crank-Nicolson residual) and centred differences in
    space.  Returns the max absolute residual over ``window = (x_w, t_lo,
    t_hi)`` (default: everything).
    """
    _check_aligned(v, Y, Z)
    h = v.config.h
    bnd = v.config.boundary

    def rhs(i):
        vv, yy, zz = v.values[i], Y.values[i], Z.values[i]
        dv = _dx(vv, h, derivative, bnd)
        if derivative == "spectral":
            d2v = spectral_dx(vv, h, 2)
        elif bnd == "periodic":
            d2v = (np.roll(vv, -1) - 2 * vv + np.roll(vv, 1)) / h**2
        else:
            d2v = np.gradient(np.gradient(vv, h, edge_order=2), h, edge_order=2)
        dy, dz = _dx(yy, h, derivative, bnd), _dx(zz, h, derivative, bnd)
        return d2v + vb[i] * vv + 2 * (dy + dz) * dv + (dz**2 + 2 * dz * dy) * vv

    vb = _curve_values(vbar_curve, v.t)
    x = v.x
    mask_x = np.ones_like(x, dtype=bool) if window is None else np.abs(x) <= window[0]
    worst = 0.0
    prev = rhs(0)
    for i in range(v.t.size - 1):
        cur = rhs(i + 1)
        tm = 0.5 * (v.t[i] + v.t[i + 1])
        if window is None or window[1] <= tm <= window[2]:
            res = (v.values[i + 1] - v.values[i]) / (v.t[i + 1] - v.t[i]) - 0.5 * (prev + cur)
            worst = max(worst, float(np.max(np.abs(res[mask_x]))))
        prev = cur
    return worst


def homogenized_solution(u0, vbar_value, t):
    """``exp(Vbar t) P_t u0``; ``t = 0`` returns ``u0``."""
    if t < 0:
        raise DomainError("time must be non-negative")
    if t == 0:
        return u0
    try:
        growth = math.exp(vbar_value * t)
    except OverflowError:
        raise InstabilityError(f"exp(Vbar t) overflows at t={t}") from None
    return heat_semigroup_apply(u0, t) * growth
