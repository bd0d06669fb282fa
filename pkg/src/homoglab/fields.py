"""Stationary centred space-time random fields and their covariances.

Two generators are provided: exact Gaussian sampling by two-dimensional
circulant embedding, and Poisson shot noise built from finite mixtures of
polynomial bumps.  Every field comes with its covariance ``Phi(x, t) =
E V(0, 0) V(x, t)`` so that each sampled quantity has an independent
quadrature oracle.

Arrays of field values are stored time-major, ``values[j, i] = V(x_i, t_j)``.
"""

from __future__ import annotations

import functools
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import integrate, interpolate

from .errors import (
    DomainError,
    EmbeddingError,
    FormatError,
    GridMismatchError,
    InsufficientDataError,
    NonIntegrableError,
    OutOfRangeError,
    UnsupportedModelError,
    ValidationError,
    WindowTooSmallError,
)
from .stats import jackknife

log = logging.getLogger(__name__)

GAUSSIAN_KINDS = ("gaussian-analytic", "tabulated")
NEGATIVE_MASS_TOL = 1e-6


# ---------------------------------------------------------------------------
# grids


def _exact_count(extent, h, what):
    n = extent / h
    k = round(n)
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise ValidationError(f"{what}: extent {extent} is not a multiple of spacing {h}")
    return k


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid ``x_i = x0 + i hx``, ``t_j = t0 + j ht``.

    With ``periodic_x`` the spatial direction is a circle of length
    ``nx * hx`` and the last node is not repeated.
    """

    x0: float
    hx: float
    nx: int
    t0: float
    ht: float
    nt: int
    periodic_x: bool = False

    def __post_init__(self):
        if self.hx <= 0 or self.ht <= 0:
            raise ValidationError("grid spacings must be positive")
        if self.nx < 1 or self.nt < 1:
            raise ValidationError("grid must have at least one node per direction")

    @classmethod
    def from_domain(cls, L, T, hx, ht, periodic_x=False, t0=0.0):
        """Grid on ``[-L, L] x [t0, t0 + T]`` (``[-L, L)`` when periodic)."""
        kx = _exact_count(2 * L, hx, "space")
        kt = _exact_count(T, ht, "time") if T > 0 else 0
        return cls(-float(L), float(hx), kx if periodic_x else kx + 1,
                   float(t0), float(ht), kt + 1, bool(periodic_x))

    @property
    def x(self):
        return self.x0 + self.hx * np.arange(self.nx)

    @property
    def t(self):
        return self.t0 + self.ht * np.arange(self.nt)

    @property
    def shape(self):
        return (self.nt, self.nx)

    @property
    def period(self):
        return self.nx * self.hx if self.periodic_x else None

    def describe(self):
        return (f"x0={self.x0!r}:hx={self.hx!r}:nx={self.nx},"
                f"t0={self.t0!r}:ht={self.ht!r}:nt={self.nt},periodic={int(self.periodic_x)}")

    @classmethod
    def parse(cls, text):
        try:
            xs, ts, per = text.split(",")
            x0, hx, nx = (p.split("=")[1] for p in xs.split(":"))
            t0, ht, nt = (p.split("=")[1] for p in ts.split(":"))
            return cls(float(x0), float(hx), int(nx), float(t0), float(ht), int(nt),
                       bool(int(per.split("=")[1])))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"cannot parse grid description {text!r}") from exc


# ---------------------------------------------------------------------------
# covariance models

_SPACE_PROFILES = {
    # name: (profile(x, l), integral(l), x_decay, breakpoints(l), support(l))
    "gaussian": (lambda x, l: np.exp(-(x / l) ** 2), lambda l: l * math.sqrt(math.pi),
                 math.inf, lambda l: (), lambda l: None),
    "heat-kernel": (lambda x, s: np.exp(-x * x / (4 * s)) / (2 * math.sqrt(math.pi * s)),
                    lambda s: 1.0, math.inf, lambda s: (), lambda s: None),
    "indicator": (lambda x, l: (np.abs(x) <= l / 2).astype(float), lambda l: l,
                  math.inf, lambda l: (-l / 2, l / 2), lambda l: l / 2),
    "exponential": (lambda x, l: np.exp(-np.abs(x) / l), lambda l: 2 * l,
                    math.inf, lambda l: (0.0,), lambda l: None),
}

_TIME_PROFILES = {
    "exponential": lambda t, r: np.exp(-r * np.abs(t)),
    "gaussian": lambda t, r: np.exp(-((r * t) ** 2)),
}


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Analytic description of ``Phi(x, t)``.

    ``kind`` records which field realizes the covariance.  ``x_decay`` and
    ``t_decay`` are user-declared polynomial decay exponents (``inf`` for
    faster than any power); they gate the quadratures that need
    integrability.  ``length_scale``/``time_scale`` are correlation scales
    used to place quadrature breakpoints and to size sampling grids.
    """

    kind: str
    func: Callable = field(repr=False)
    params: tuple = ()
    x_decay: float = math.inf
    t_decay: float = math.inf
    length_scale: float = 1.0
    time_scale: float = 1.0
    x_breakpoints: tuple = ()
    support: tuple | None = None
    shot_noise: "ShotNoiseSpec | None" = field(default=None, repr=False)
    is_zero: bool = False

    def __post_init__(self):
        if self.kind not in ("gaussian-analytic", "shot-noise", "tabulated"):
            raise ValidationError(f"unknown covariance kind {self.kind!r}")

    def __call__(self, x, t):
        return phi_eval(self, x, t)

    @functools.cached_property
    def hash(self):
        text = repr((self.kind, self.params))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @property
    def variance(self):
        return float(self.func(np.array(0.0), np.array(0.0)))


def separable_model(space="gaussian", time="exponential", variance=1.0, length=1.0, rate=1.0):
    """``Phi(x, t) = variance * S(x) * T(t)`` from named profiles.

    Spatial profiles: ``gaussian`` ``exp(-(x/l)^2)``, ``heat-kernel``
    ``p_l(x)`` (``length`` is the kernel time), ``indicator`` of
    ``[-l/2, l/2]``, ``exponential`` ``exp(-|x|/l)``.  Temporal profiles:
    ``exponential`` ``exp(-rate |t|)`` and ``gaussian`` ``exp(-(rate t)^2)``.
    """
    if space not in _SPACE_PROFILES or time not in _TIME_PROFILES:
        raise ValidationError(f"unknown profile {space!r}/{time!r}")
    if length <= 0 or rate <= 0:
        raise ValidationError("length and rate must be positive")
    prof, _, xdec, bps, supp = _SPACE_PROFILES[space]
    tprof = _TIME_PROFILES[time]
    var, l, r = float(variance), float(length), float(rate)

    def func(x, t):
        return var * prof(np.asarray(x, dtype=float), l) * tprof(np.asarray(t, dtype=float), r)

    scale = math.sqrt(4 * l) if space == "heat-kernel" else l
    sx = supp(l)
    return CovarianceModel(
        "gaussian-analytic", func, ("separable", space, time, var, l, r),
        x_decay=xdec, t_decay=math.inf, length_scale=scale, time_scale=1.0 / r,
        x_breakpoints=tuple(bps(l)), support=None if sx is None else (sx, math.inf),
        is_zero=(var == 0.0),
    )


def zero_model():
    """The covariance of the field ``V = 0``."""
    return CovarianceModel("gaussian-analytic", lambda x, t: np.zeros(np.broadcast(x, t).shape),
                           ("zero",), support=(0.0, 0.0), is_zero=True)


def custom_model(func, *, name, x_decay=math.inf, t_decay=math.inf, length_scale=1.0,
                 time_scale=1.0, x_breakpoints=(), kind="gaussian-analytic"):
    """Wrap a user-supplied vectorised ``Phi(x, t)``; ``name`` enters the hash."""
    return CovarianceModel(kind, func, ("custom", name), x_decay=x_decay, t_decay=t_decay,
                           length_scale=length_scale, time_scale=time_scale,
                           x_breakpoints=tuple(x_breakpoints))


def concentrate(model, delta):
    """``delta^-1 Phi(x / delta, t)``: spatially concentrated, same ``Phi-bar``."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    base = model.func
    d = float(delta)
    return CovarianceModel(
        model.kind, lambda x, t: base(np.asarray(x) / d, t) / d,
        model.params + (("concentrate", d),), x_decay=model.x_decay, t_decay=model.t_decay,
        length_scale=model.length_scale * d, time_scale=model.time_scale,
        x_breakpoints=tuple(b * d for b in model.x_breakpoints),
        support=None if model.support is None else (model.support[0] * d, model.support[1]),
        is_zero=model.is_zero,
    )


def flatten(model, delta):
    """``Phi(delta x, t)``: spatially flattened as ``delta -> 0``."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    base = model.func
    d = float(delta)
    return CovarianceModel(
        model.kind, lambda x, t: base(np.asarray(x) * d, t),
        model.params + (("flatten", d),), x_decay=model.x_decay, t_decay=model.t_decay,
        length_scale=model.length_scale / d, time_scale=model.time_scale,
        x_breakpoints=tuple(b / d for b in model.x_breakpoints),
        support=None if model.support is None else (model.support[0] / d, model.support[1]),
        is_zero=model.is_zero,
    )


def tabulated_model(x, t, table, *, support=None, x_decay=math.inf, t_decay=math.inf):
    """Bilinearly interpolated covariance table ``table[j, i] = Phi(x_i, t_j)``.

    If ``t`` only covers ``t >= 0`` the table is extended to negative times
    through ``Phi(x, -t) = Phi(-x, t)``, which needs a symmetric ``x``.
    Outside the table the model is zero only when ``support = (sx, st)`` is
    declared and the table covers it; any other query raises
    :class:`OutOfRangeError`.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    table = np.asarray(table, dtype=float)
    if table.shape != (t.size, x.size):
        raise ValidationError(f"table shape {table.shape} != (len(t), len(x)) = {(t.size, x.size)}")
    if t[0] >= 0:
        if not np.allclose(x, -x[::-1]):
            raise ValidationError("half-line time table needs a symmetric x grid")
        keep = t > 0
        t = np.concatenate([-t[keep][::-1], t])
        table = np.concatenate([table[keep][::-1, ::-1], table])
    interp = interpolate.RegularGridInterpolator((t, x), table, method="linear",
                                                 bounds_error=False, fill_value=np.nan)
    zero_outside = False
    if support is not None:
        sx, st = support
        zero_outside = x[0] <= -sx and x[-1] >= sx and t[0] <= -st and t[-1] >= st
    xr, tr = (x[0], x[-1]), (t[0], t[-1])

    def func(xq, tq):
        xq, tq = np.broadcast_arrays(np.asarray(xq, dtype=float), np.asarray(tq, dtype=float))
        outside = (xq < xr[0]) | (xq > xr[1]) | (tq < tr[0]) | (tq > tr[1])
        if np.any(outside) and not zero_outside:
            raise OutOfRangeError("tabulated covariance queried outside its table")
        vals = interp(np.stack([tq.ravel(), xq.ravel()], axis=-1)).reshape(xq.shape)
        return np.where(outside, 0.0, vals)

    digest = hashlib.sha256(np.ascontiguousarray(table).tobytes()).hexdigest()[:16]
    return CovarianceModel(
        "tabulated", func, ("tabulated", digest, xr, tr, support),
        x_decay=x_decay, t_decay=t_decay, length_scale=float(np.min(np.diff(x))) * 4,
        time_scale=float(np.min(np.diff(t))) * 4, x_breakpoints=tuple(x[1:-1]),
        support=support if zero_outside else None,
    )


def phi_eval(model, x, t):
    """``Phi(x, t)``; scalars in give a float back."""
    val = model.func(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    val = np.asarray(val, dtype=float)
    return float(val) if val.ndim == 0 else val


def _quad_line(f, scale, breakpoints=(), support=None, rtol=1e-8, atol=0.0):
    """Integrate ``f`` over the real line, splitting at breakpoints."""
    if support is not None and math.isfinite(support):
        pts = sorted({p for p in breakpoints if -support < p < support})
        val, _ = integrate.quad(f, -support, support, points=pts or None, epsrel=rtol,
                                epsabs=atol, limit=400)
        return val
    a = 12.0 * scale
    pts = sorted({p for p in breakpoints if -a < p < a})
    mid, _ = integrate.quad(f, -a, a, points=pts or None, epsrel=rtol, epsabs=atol, limit=400)
    right, _ = integrate.quad(f, a, math.inf, epsrel=rtol, epsabs=atol, limit=400)
    left, _ = integrate.quad(f, -math.inf, -a, epsrel=rtol, epsabs=atol, limit=400)
    return mid + right + left


def phi_bar(model, t, rtol=1e-8):
    """``Phi-bar(t) = int_R Phi(x, t) dx`` by adaptive quadrature."""
    if model.x_decay <= 1:
        raise NonIntegrableError(f"x-decay exponent {model.x_decay} <= 1: Phi(., t) not integrable")
    if model.is_zero:
        return 0.0
    t = float(t)
    f = lambda x: float(model.func(np.array(x), np.array(t)))
    support = None if model.support is None else model.support[0]
    atol = 1e-15 * max(abs(model.variance), 1e-300)
    return _quad_line(f, model.length_scale, model.x_breakpoints, support, rtol, atol)


def covariance_matrix(model, points):
    """Covariance matrix ``Phi(z_a - z_b)`` for a list of ``(x, t)`` points."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    dx = pts[:, 0][:, None] - pts[:, 0][None, :]
    dt = pts[:, 1][:, None] - pts[:, 1][None, :]
    return np.asarray(model.func(dx, dt), dtype=float)


# ---------------------------------------------------------------------------
# shot noise


def _bump(r):
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) < 1.0, (1.0 - r * r) ** 3, 0.0)


def _dbump(r):
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) < 1.0, -6.0 * r * (1.0 - r * r) ** 2, 0.0)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
BUMP_INTEGRAL = 32.0 / 35.0


def bump_autocorrelation(u):
    """``A(u) = int b(r) b(r + u) dr`` for the bump ``b(r) = (1 - r^2)^3``.

    The integrand is a degree-12 polynomial on the overlap interval, so an
    8-node Gauss-Legendre rule is exact.
    """
    u = np.abs(np.asarray(u, dtype=float))
    lo = np.maximum(-1.0, -1.0 - u)
    hi = np.minimum(1.0, 1.0 - u)
    width = np.clip(hi - lo, 0.0, None)
    r = lo[..., None] + 0.5 * width[..., None] * (_GL_NODES + 1.0)
    vals = _bump(r) * _bump(r + u[..., None])
    return 0.5 * width * np.sum(vals * _GL_WEIGHTS, axis=-1)


@dataclass(frozen=True)
class BumpMark:
    """One mark: kernel ``amplitude * b(y / length) * b(s / duration)`` with weight ``nu({m})``."""

    weight: float
    amplitude: float
    length: float
    duration: float

    def __post_init__(self):
        if self.weight < 0 or self.length <= 0 or self.duration <= 0:
            raise ValidationError("mark weight must be >= 0 and its widths > 0")


@dataclass(frozen=True)
class ShotNoiseSpec:
    """Finite bump mixture ``psi(m, y, s)`` over marks with intensity weights.

    ``V(x, t) = sum over Poisson points (m, y, s) of psi(m, y - x, s - t)``
    with intensity ``nu(dm) dy ds``.  The kernel must be centred:
    ``sum_m nu_m int psi_m = 0``.
    """

    marks: tuple

    def __post_init__(self):
        object.__setattr__(self, "marks", tuple(self.marks))
        if not self.marks:
            raise ValidationError("shot noise needs at least one mark")
        scale = sum(m.weight * abs(m.amplitude) * m.length * m.duration for m in self.marks)
        if abs(self.centering_integral()) > 1e-8 * max(scale, 1.0):
            raise ValidationError(
                f"kernel is not centred: int psi dnu dy ds = {self.centering_integral():.3e}")

    def centering_integral(self):
        return sum(m.weight * m.amplitude * m.length * m.duration for m in self.marks) \
            * BUMP_INTEGRAL**2

    @property
    def support_radius(self):
        return (max(m.length for m in self.marks), max(m.duration for m in self.marks))

    def kernel(self, index, y, s):
        m = self.marks[index]
        return m.amplitude * _bump(np.asarray(y) / m.length) * _bump(np.asarray(s) / m.duration)

    def kernel_dy(self, index, y, s):
        m = self.marks[index]
        return m.amplitude / m.length * _dbump(np.asarray(y) / m.length) \
            * _bump(np.asarray(s) / m.duration)

    def decay_constant(self, q, n=201):
        """``sup (|psi| + |d_y psi|) (1 + |y|^q + |s|^q)`` over the support."""
        out = 0.0
        for i, m in enumerate(self.marks):
            y = np.linspace(-m.length, m.length, n)[None, :]
            s = np.linspace(-m.duration, m.duration, n)[:, None]
            val = (np.abs(self.kernel(i, y, s)) + np.abs(self.kernel_dy(i, y, s))) \
                * (1 + np.abs(y) ** q + np.abs(s) ** q)
            out = max(out, float(val.max()))
        return out

    def campbell_covariance(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        out = np.zeros(np.broadcast(x, t).shape)
        for m in self.marks:
            out = out + m.weight * m.amplitude**2 * m.length * m.duration \
                * bump_autocorrelation(x / m.length) * bump_autocorrelation(t / m.duration)
        return out

    def scaled(self, factor):
        """Same kernel with every intensity weight multiplied by ``factor``."""
        return ShotNoiseSpec(tuple(BumpMark(m.weight * factor, m.amplitude, m.length, m.duration)
                                   for m in self.marks))


def shot_noise_model(spec):
    """Covariance model of the shot-noise field ``spec`` (Campbell formula)."""
    rx, rt = spec.support_radius
    return CovarianceModel(
        "shot-noise", spec.campbell_covariance,
        ("shot-noise",) + tuple((m.weight, m.amplitude, m.length, m.duration) for m in spec.marks),
        length_scale=rx, time_scale=rt, support=(2 * rx, 2 * rt), shot_noise=spec,
        is_zero=all(m.weight == 0 or m.amplitude == 0 for m in spec.marks),
    )


# ---------------------------------------------------------------------------
# realizations


@dataclass(frozen=True, eq=False)
class FieldRealization:
    values: np.ndarray
    grid: Grid
    seed: int
    provenance: str = ""

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")


def _signed_lags(m, h):
    i = np.arange(m)
    return np.where(i <= m // 2, i, i - m) * h


class GaussianSampler:
    """Circulant-embedding sampler for one (model, grid) pair.

    The embedding torus has shape ``(m_t, m_x)`` with ``m >= 2 (n - 1)`` in
    every non-periodic direction (``m_x = nx`` for a periodic grid).  If the
    embedding has negative spectral mass above ``1e-6 Phi(0, 0)`` the
    non-periodic directions are doubled up to ``max_enlarge`` times before
    giving up with :class:`EmbeddingError`.
    """

    def __init__(self, model, grid, embedding=None, max_enlarge=3):
        if model.kind == "shot-noise":
            log.info("sampling a Gaussian field with a shot-noise covariance")
        self.model = model
        self.grid = grid
        self.variance = model.variance
        if embedding is None:
            mt = sfft.next_fast_len(max(2 * (grid.nt - 1), 1))
            mx = grid.nx if grid.periodic_x else sfft.next_fast_len(max(2 * (grid.nx - 1), 1))
            tries = max_enlarge
        else:
            mt, mx = embedding
            if grid.periodic_x and mx != grid.nx:
                raise ValidationError("periodic grids embed with m_x = nx")
            if mt < grid.nt or mx < grid.nx:
                raise ValidationError("embedding smaller than the grid")
            tries = 0
        if self.variance == 0.0 or model.is_zero:
            self.shape = (mt, mx)
            self._sqrt = None
            return
        while True:
            lam = self._eigenvalues(mt, mx)
            neg = -lam[lam < 0].sum() / lam.size
            if neg <= NEGATIVE_MASS_TOL * self.variance:
                break
            suggestion = (2 * mt, mx if grid.periodic_x else 2 * mx)
            if tries == 0:
                raise EmbeddingError(
                    f"circulant embedding {mt}x{mx} has negative spectral mass {neg:.3e} "
                    f"> {NEGATIVE_MASS_TOL} * Phi(0,0); enlarge the embedding to {suggestion}",
                    suggested_shape=suggestion)
            tries -= 1
            mt, mx = suggestion
        if np.any(lam < 0):
            level = logging.WARNING if neg > 1e-12 * self.variance else logging.DEBUG
            log.log(level, "clipping negative embedding eigenvalues (mass %.3e)", neg)
        self.shape = (mt, mx)
        self.negative_mass = float(max(neg, 0.0))
        self._sqrt = np.sqrt(np.clip(lam, 0.0, None) / lam.size)

    def _eigenvalues(self, mt, mx):
        g = self.grid
        lt = _signed_lags(mt, g.ht)[:, None]
        lx = _signed_lags(mx, g.hx)[None, :]
        c = np.asarray(self.model.func(lx, lt), dtype=float)
        c = np.broadcast_to(c, (mt, mx))
        # enforce c[-j, -i] = c[j, i] on the torus
        mirror = np.roll(c[::-1, ::-1], shift=(1, 1), axis=(0, 1))
        c = 0.5 * (c + mirror)
        return sfft.fft2(c).real

    def _synthesize(self, rng, count):
        mt, mx = self.shape
        noise = rng.standard_normal((count, 2, mt, mx))
        z = self._sqrt * (noise[:, 0] + 1j * noise[:, 1])
        return sfft.fft2(z, axes=(-2, -1))

    def sample_values(self, rng):
        g = self.grid
        if self._sqrt is None:
            return np.zeros(g.shape)
        return np.ascontiguousarray(self._synthesize(rng, 1)[0].real[: g.nt, : g.nx])

    def sample(self, seed):
        rng = np.random.default_rng(seed)
        return FieldRealization(self.sample_values(rng), self.grid, int(seed), self.model.hash)

    def sample_batch(self, n, rng, chunk=4096):
        """``n`` independent fields; real and imaginary parts of each FFT are both used."""
        g = self.grid
        if self._sqrt is None:
            return np.zeros((n,) + g.shape)
        out = np.empty((n,) + g.shape)
        done = 0
        while done < n:
            k = min(chunk, (n - done + 1) // 2)
            z = self._synthesize(rng, k)[:, : g.nt, : g.nx]
            both = np.concatenate([z.real, z.imag])[: n - done]
            out[done: done + both.shape[0]] = both
            done += both.shape[0]
        return out


@functools.lru_cache(maxsize=2)
def _cached_sampler(model, grid, embedding):
    return GaussianSampler(model, grid, embedding)


def sample_gaussian_field(model, grid, seed, embedding=None):
    """One stationary centred Gaussian realization with covariance ``model``.

    Deterministic in ``(model, grid, seed)``.  Samplers are cached so Monte
    Carlo loops over seeds pay for the embedding spectrum once.
    """
    if model.kind == "shot-noise":
        raise UnsupportedModelError("use sample_shot_noise_field for shot-noise models")
    return _cached_sampler(model, grid, embedding).sample(seed)


def sample_shot_noise_field(spec, grid, seed, padding=None):
    """Shot-noise field on ``grid`` from a Poisson cloud on the padded window.

    The window is padded by ``padding = (px, pt)`` on every side; by default
    exactly the kernel support radius.  Smaller padding would bias the edges
    and raises :class:`WindowTooSmallError`.
    """
    rx, rt = spec.support_radius
    px, pt = (rx, rt) if padding is None else padding
    if px < rx or pt < rt:
        raise WindowTooSmallError(f"padding {(px, pt)} smaller than support radius {(rx, rt)}")
    if grid.periodic_x:
        raise ValidationError("shot-noise sampling uses non-periodic grids")
    rng = np.random.default_rng(seed)
    xlo, xhi = grid.x0 - px, grid.x0 + (grid.nx - 1) * grid.hx + px
    tlo, thi = grid.t0 - pt, grid.t0 + (grid.nt - 1) * grid.ht + pt
    area = (xhi - xlo) * (thi - tlo)
    values = np.zeros(grid.shape)
    flat = values.reshape(-1)
    for m in spec.marks:
        count = rng.poisson(m.weight * area)
        if count == 0 or m.amplitude == 0:
            continue
        y = rng.uniform(xlo, xhi, count)
        s = rng.uniform(tlo, thi, count)
        kx = int(2 * m.length / grid.hx) + 2
        kt = int(2 * m.duration / grid.ht) + 2
        ix = np.ceil((y - m.length - grid.x0) / grid.hx).astype(int)[:, None] + np.arange(kx)
        it = np.ceil((s - m.duration - grid.t0) / grid.ht).astype(int)[:, None] + np.arange(kt)
        bx = _bump((grid.x0 + ix * grid.hx - y[:, None]) / m.length)
        bt = _bump((grid.t0 + it * grid.ht - s[:, None]) / m.duration)
        okx = (ix >= 0) & (ix < grid.nx)
        okt = (it >= 0) & (it < grid.nt)
        bx = np.where(okx, bx, 0.0)
        bt = np.where(okt, bt, 0.0)
        contrib = m.amplitude * bt[:, :, None] * bx[:, None, :]
        idx = np.clip(it, 0, grid.nt - 1)[:, :, None] * grid.nx + np.clip(ix, 0, grid.nx - 1)[:, None, :]
        np.add.at(flat, idx.ravel(), contrib.ravel())
    return FieldRealization(values, grid, int(seed), shot_noise_model(spec).hash)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class CovarianceEstimate:
    dx: float
    dt: float
    estimate: float
    stderr: float


def _lag_offsets(grid, lag):
    dx, dt = lag
    kx, kt = dx / grid.hx, dt / grid.ht
    ix, it = round(kx), round(kt)
    if abs(kx - ix) > 1e-9 * max(1, abs(kx)) or abs(kt - it) > 1e-9 * max(1, abs(kt)):
        raise ValidationError(f"lag {lag} is not a multiple of the grid spacings")
    if abs(it) >= grid.nt or abs(ix) >= grid.nx:
        raise ValidationError(f"lag {lag} exceeds the grid extent")
    return ix, it


def lag_products(values, grid, lag):
    """Per-realization average of ``V(z) V(z + lag)`` over all valid ``z``.

    ``values`` has shape ``(n, nt, nx)``.
    """
    ix, it = _lag_offsets(grid, lag)
    a = values
    if it >= 0:
        a0, a1 = a[:, : a.shape[1] - it], a[:, it:]
    else:
        a0, a1 = a[:, -it:], a[:, : a.shape[1] + it]
    if grid.periodic_x:
        a1 = np.roll(a1, -ix, axis=2)
    elif ix >= 0:
        a0, a1 = a0[:, :, : a.shape[2] - ix], a1[:, :, ix:]
    else:
        a0, a1 = a0[:, :, -ix:], a1[:, :, : a.shape[2] + ix]
    return np.mean(a0 * a1, axis=(1, 2))


def empirical_covariance(realizations, lags):
    """Lag covariances of a set of realizations with jackknife errors.

    The fields are centred by construction, so products are not
    mean-corrected and the per-lag estimator is unbiased.
    """
    realizations = list(realizations)
    if len(realizations) < 2:
        raise InsufficientDataError("empirical covariance needs at least 2 realizations")
    grid = realizations[0].grid
    if any(r.grid != grid for r in realizations):
        raise GridMismatchError("realizations do not share a grid")
    prov = {r.provenance for r in realizations}
    if len(prov) > 1:
        raise GridMismatchError("realizations come from different models")
    values = np.stack([r.values for r in realizations])
    out = []
    for lag in lags:
        est, se = jackknife(lag_products(values, grid, lag))
        out.append(CovarianceEstimate(float(lag[0]), float(lag[1]), float(est), float(se)))
    return out


@dataclass(frozen=True)
class FourPointResult:
    wick: float
    empirical: float
    stderr: float
    points: tuple


def wick_value(model, points):
    (x1, t1), (x2, t2), (x3, t3), (x4, t4) = points
    phi = lambda a, b: phi_eval(model, a, b)
    return phi(x1 - x3, t1 - t3) * phi(x2 - x4, t2 - t4) + phi(x1 - x4, t1 - t4) * phi(x2 - x3, t2 - t3)


def four_point_check(model, points, n_samples=100_000, seed=0, h=None):
    """Compare the fourth cumulant-type quantity ``Psi4`` with the Wick identity.

    ``Psi4 = E(V1 V2 V3 V4) - Phi12 Phi34`` is estimated from ``n_samples``
    fields sampled on a small grid through the four points; the points are
    snapped to that grid (spacing ``h``, default a quarter of the shortest
    correlation scale) and the snapped points are reported back.
    """
    if model.kind not in GAUSSIAN_KINDS:
        raise UnsupportedModelError(f"Wick identity needs a Gaussian model, got {model.kind!r}")
    pts = np.asarray(points, dtype=float).reshape(4, 2)
    if h is None:
        h = min(model.length_scale, model.time_scale) / 4
    hx = ht = float(h)
    ix = np.round((pts[:, 0] - pts[:, 0].min()) / hx).astype(int)
    it = np.round((pts[:, 1] - pts[:, 1].min()) / ht).astype(int)
    x0, t0 = pts[:, 0].min(), pts[:, 1].min()
    snapped = tuple((x0 + i * hx, t0 + j * ht) for i, j in zip(ix, it))
    grid = Grid(x0, hx, int(ix.max()) + 1, t0, ht, int(it.max()) + 1)
    wick = wick_value(model, snapped)
    sampler = GaussianSampler(model, grid)
    rng = np.random.default_rng(seed)
    phi12 = phi_eval(model, snapped[0][0] - snapped[1][0], snapped[0][1] - snapped[1][1])
    phi34 = phi_eval(model, snapped[2][0] - snapped[3][0], snapped[2][1] - snapped[3][1])
    prods = []
    remaining = n_samples
    while remaining > 0:
        k = min(remaining, 20_000)
        v = sampler.sample_batch(k, rng)
        prods.append(v[:, it[0], ix[0]] * v[:, it[1], ix[1]] * v[:, it[2], ix[2]] * v[:, it[3], ix[3]])
        remaining -= k
    prods = np.concatenate(prods) - phi12 * phi34
    return FourPointResult(float(wick), float(prods.mean()),
                           float(prods.std(ddof=1) / math.sqrt(prods.size)), snapped)


# ---------------------------------------------------------------------------
# CSV serialisation


def _header(model_hash, grid, seed):
    return f"# model_hash={model_hash} grid={grid.describe()} seed={seed}"


def write_field_csv(path, realization):
    """Write ``x,t,value`` rows (time-major) under a one-line provenance header."""
    g = realization.grid
    tt, xx = np.meshgrid(g.t, g.x, indexing="ij")
    data = np.column_stack([xx.ravel(), tt.ravel(), realization.values.ravel()])
    with open(path, "w") as fh:
        fh.write(_header(realization.provenance, g, realization.seed) + "\n")
        fh.write("x,t,value\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def write_covariance_csv(path, model, grid):
    """Tabulate ``Phi`` on ``grid`` (lags) in the same CSV layout."""
    tt, xx = np.meshgrid(grid.t, grid.x, indexing="ij")
    vals = np.asarray(model.func(xx, tt), dtype=float)
    realization = FieldRealization(np.broadcast_to(vals, grid.shape).copy(), grid, -1, model.hash)
    write_field_csv(path, realization)


def read_field_csv(path):
    """Inverse of :func:`write_field_csv`; returns a :class:`FieldRealization`."""
    with open(path) as fh:
        head = fh.readline().strip()
        cols = fh.readline().strip()
        if not head.startswith("#") or cols != "x,t,value":
            raise FormatError(f"{path}: not a field CSV")
        meta = dict(item.split("=", 1) for item in head[1:].split())
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    try:
        grid = Grid.parse(meta["grid"])
        seed = int(meta["seed"])
    except KeyError as exc:
        raise FormatError(f"{path}: header lacks {exc}") from exc
    if data.shape != (grid.nt * grid.nx, 3):
        raise FormatError(f"{path}: {data.shape[0]} rows for a {grid.shape} grid")
    return FieldRealization(data[:, 2].reshape(grid.shape), grid, seed, meta.get("model_hash", ""))


def model_from_spec(spec):
    """Build a model from a plain mapping (config files).

    ``{"kind": "separable", "space": ..., "time": ..., "variance": ...,
    "length": ..., "rate": ...}``, ``{"kind": "zero"}`` or
    ``{"kind": "shot-noise", "marks": [[weight, amplitude, length, duration], ...]}``.
    """
    spec = dict(spec)
    kind = spec.pop("kind", "separable")
    if kind == "zero":
        return zero_model()
    if kind == "separable":
        allowed = {"space", "time", "variance", "length", "rate"}
        extra = set(spec) - allowed
        if extra:
            raise ValidationError(f"unknown model keys {sorted(extra)}")
        return separable_model(**spec)
    if kind == "shot-noise":
        marks = tuple(BumpMark(*map(float, m)) for m in spec["marks"])
        return shot_noise_model(ShotNoiseSpec(marks))
    raise ValidationError(f"unknown model kind {kind!r}")
