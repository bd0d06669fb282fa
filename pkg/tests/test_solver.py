import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homoglab import solver as S
from homoglab.errors import (
    ConvergenceError,
    DomainError,
    GridMismatchError,
    InstabilityError,
    ValidationError,
    WindowTooSmallError,
)
from homoglab.spaces import heat_semigroup_apply

SCHEMES = S.SCHEMES


def test_heat_kernel_values():
    assert S.heat_kernel(0.0, 1.0) == pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-15)
    x = np.linspace(-20, 20, 40001)
    assert np.trapezoid(S.heat_kernel(x, 0.5), x) == pytest.approx(1.0, abs=1e-10)
    conv = np.trapezoid(S.heat_kernel(x, 1.0) ** 2, x)
    assert conv == pytest.approx(1 / (2 * math.sqrt(2 * math.pi)), rel=1e-10)
    with pytest.raises(DomainError):
        S.heat_kernel(0.0, 0.0)


@pytest.fixture(scope="module")
def fine():
    return {s: S.SolverConfig(h=0.01, dt=1e-3, L=20.0, scheme=s) for s in SCHEMES}


@pytest.mark.parametrize("scheme", SCHEMES)
def test_pure_heat_flow(fine, scheme):
    cfg = fine[scheme]
    u0 = cfg.grid_function(S.heat_kernel(cfg.x, 1.0))
    tr = S.solve_potential(S.ParabolicProblem(u0, 1.0), cfg)
    assert np.max(np.abs(tr.values[-1] - S.heat_kernel(cfg.x, 2.0))) <= 1e-5


@pytest.mark.parametrize("scheme", SCHEMES)
def test_constant_potential(fine, scheme):
    cfg = fine[scheme]
    c = math.sqrt(math.pi) / 2
    u0 = cfg.grid_function(S.heat_kernel(cfg.x, 1.0))
    tr = S.solve_potential(S.ParabolicProblem(u0, 1.0, G=c), cfg)
    assert np.max(np.abs(tr.values[-1] - math.exp(c) * S.heat_kernel(cfg.x, 2.0))) <= 1e-5


@pytest.mark.parametrize("scheme", SCHEMES)
def test_fourier_mode_with_constant_potential(scheme):
    k, c0, T = 2.0, 0.4, 0.5
    cfg = S.SolverConfig(h=math.pi / 256, dt=1e-3, L=math.pi, scheme=scheme)
    u0 = cfg.grid_function(np.cos(k * cfg.x))
    tr = S.solve_potential(S.ParabolicProblem(u0, T, G=c0), cfg)
    exact = math.exp((c0 - k * k) * T) * np.cos(k * cfg.x)
    assert np.max(np.abs(tr.values[-1] - exact)) <= 1e-4


@pytest.mark.parametrize("scheme", SCHEMES)
def test_constant_drift_translates_kernel(fine, scheme):
    cfg = fine[scheme]
    a = 0.5
    u0 = cfg.grid_function(S.heat_kernel(cfg.x, 1.0))
    tr = S.solve_drift_potential(S.ParabolicProblem(u0, 1.0, F=a), cfg)
    assert np.max(np.abs(tr.values[-1] - S.heat_kernel(cfg.x + a, 2.0))) <= 1e-5


def test_drift_free_solve_matches_semigroup(fine):
    # the exponential integrator uses the exact heat multiplier
    cfg = fine["mild-duhamel"]
    u0 = cfg.grid_function(S.heat_kernel(cfg.x, 1.0) * np.cos(cfg.x))
    tr = S.solve_drift_potential(S.ParabolicProblem(u0, 1.0, F=0.0, G=0.0), cfg)
    assert np.max(np.abs(tr.values[-1] - heat_semigroup_apply(u0, 1.0).values)) <= 1e-8
    # Crank-Nicolson agrees to its second-order truncation error
    cn = S.solve_drift_potential(S.ParabolicProblem(u0, 1.0, F=0.0, G=0.0), fine["crank-nicolson-strang"])
    assert np.max(np.abs(cn.values[-1] - heat_semigroup_apply(u0, 1.0).values)) <= 1e-5


def test_schemes_agree_on_random_smooth_coefficients(fine):
    rng = np.random.default_rng(3)
    a = rng.normal(size=3)
    F = lambda x, t: a[0] * np.sin(np.pi * x / 10) + 0.3 * np.cos(t)
    G = lambda x, t: a[1] * np.cos(np.pi * x / 5 + a[2]) * (1 + 0.5 * t)
    out = []
    for scheme in SCHEMES:
        cfg = fine[scheme]
        u0 = cfg.grid_function(S.heat_kernel(cfg.x, 1.0))
        out.append(S.solve_drift_potential(S.ParabolicProblem(u0, 1.0, F=F, G=G), cfg).values[-1])
    assert np.max(np.abs(out[0] - out[1])) <= 1e-4


def _mode_problem(k=2 * math.pi / 8, c0=0.3):
    factory = lambda cfg: S.ParabolicProblem(cfg.grid_function(np.cos(k * cfg.x)), 1.0, G=c0)
    exact = lambda x, t: np.exp((c0 - k * k) * t) * np.cos(k * x)
    return factory, exact


@pytest.mark.parametrize("scheme", SCHEMES)
def test_order_of_accuracy(scheme):
    factory, exact = _mode_problem()
    cfgs = [S.SolverConfig(h=h, dt=h, L=4.0, scheme=scheme) for h in (1 / 8, 1 / 16, 1 / 32, 1 / 64)]
    res = S.order_of_accuracy(factory, exact, cfgs)
    assert not res.saturated and res.rate >= 1.8


def test_order_of_accuracy_saturates_on_exact_output():
    factory, exact = _mode_problem()
    cfgs = [S.SolverConfig(h=h, dt=h, L=4.0) for h in (1 / 8, 1 / 16)]

    def oracle(problem, cfg):
        n, dt = cfg.steps(problem.T)
        t = dt * np.arange(n + 1)
        return S.Trajectory(t, np.array([exact(cfg.x, s) for s in t]), cfg)

    res = S.order_of_accuracy(factory, exact, cfgs, solver=oracle)
    assert res.saturated and math.isnan(res.rate) and max(res.errors) == 0.0


def test_order_of_accuracy_rejects_degenerate_ladder():
    factory, exact = _mode_problem()
    with pytest.raises(ValidationError):
        S.order_of_accuracy(factory, exact, [S.SolverConfig(h=0.125, dt=0.1, L=4.0)] * 2)


# ---------------------------------------------------------------------------
# structural properties


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 30.0))
def test_positivity_crank_nicolson(seed, amp):
    # Crank-Nicolson is positivity preserving for dt <= h^2
    rng = np.random.default_rng(seed)
    cfg = S.SolverConfig(h=1 / 16, dt=1 / 256, L=4.0)
    u0 = cfg.grid_function(rng.uniform(0, 1, cfg.nx) * (rng.uniform(size=cfg.nx) < 0.3))
    G = amp * rng.normal(size=(cfg.steps(0.5)[0] + 1, cfg.nx))
    tr = S.solve_potential(S.ParabolicProblem(u0, 0.5, G=G), cfg)
    assert tr.values.min() >= -1e-12


@pytest.mark.parametrize("scheme", SCHEMES)
def test_linearity(scheme, rng):
    cfg = S.SolverConfig(h=1 / 16, dt=1 / 64, L=4.0, scheme=scheme)
    G = np.sin(cfg.x)[None, :] * np.linspace(0, 1, cfg.steps(1.0)[0] + 1)[:, None]
    v0, w0 = rng.normal(size=cfg.nx), rng.normal(size=cfg.nx)
    a, b = 1.7, -0.4
    solve = lambda u: S.solve_potential(S.ParabolicProblem(cfg.grid_function(u), 1.0, G=G), cfg).values
    assert np.max(np.abs(solve(a * v0 + b * w0) - (a * solve(v0) + b * solve(w0)))) <= 1e-10


@pytest.mark.parametrize("scheme", SCHEMES)
def test_mean_conservation(scheme, rng):
    cfg = S.SolverConfig(h=1 / 16, dt=1 / 64, L=4.0, scheme=scheme)
    u0 = cfg.grid_function(rng.normal(size=cfg.nx))
    tr = S.solve_potential(S.ParabolicProblem(u0, 1.0), cfg)
    assert np.max(np.abs(tr.values.mean(axis=1) - u0.values.mean())) <= 1e-12


def test_source_term_duhamel():
    # d_t Y = d_x^2 Y + cos(kx) from zero: Y = (1 - e^{-k^2 t}) cos(kx) / k^2
    k, T = 2.0, 0.5
    for scheme in SCHEMES:
        cfg = S.SolverConfig(h=math.pi / 256, dt=1e-3, L=math.pi, scheme=scheme)
        tr = S.solve_potential(S.ParabolicProblem(cfg.grid_function(np.zeros(cfg.nx)), T,
                                                  source=np.cos(k * cfg.x)), cfg)
        exact = (1 - math.exp(-k * k * T)) * np.cos(k * cfg.x) / k**2
        assert np.max(np.abs(tr.values[-1] - exact)) <= 2e-5


def test_pade_reaction_is_second_order():
    factory, exact = _mode_problem()
    cfgs = [S.SolverConfig(h=h, dt=h, L=4.0, exact_reaction=False) for h in (1 / 8, 1 / 16, 1 / 32)]
    assert S.order_of_accuracy(factory, exact, cfgs).rate >= 1.8


def test_store_every_keeps_final_slice():
    cfg = S.SolverConfig(h=1 / 8, dt=0.1, L=2.0, store_every=3)
    tr = S.solve_potential(S.ParabolicProblem(cfg.grid_function(np.ones(cfg.nx)), 1.0), cfg)
    assert np.allclose(tr.t, [0.0, 0.3, 0.6, 0.9, 1.0])
    assert tr.at(0.6).values.shape == (cfg.nx,)
    with pytest.raises(ValidationError):
        tr.index_of(0.5)


def test_padded_boundary_requires_padding():
    cfg = S.SolverConfig(h=0.05, dt=0.01, L=5.0, boundary="padded", padding=2.0)
    u0 = cfg.grid_function(S.heat_kernel(cfg.x, 0.1))
    with pytest.raises(WindowTooSmallError):
        S.solve_potential(S.ParabolicProblem(u0, 1.0), cfg)
    ok = S.SolverConfig(h=0.05, dt=0.01, L=10.0, boundary="padded", padding=8.0)
    tr = S.solve_potential(S.ParabolicProblem(ok.grid_function(S.heat_kernel(ok.x, 0.1)), 1.0), ok)
    assert np.max(np.abs(tr.values[-1] - S.heat_kernel(ok.x, 1.1))) <= 1e-4


def test_instability_names_step():
    cfg = S.SolverConfig(h=1 / 8, dt=0.1, L=2.0)
    G = np.zeros((11, cfg.nx))
    G[4:] = 1e5
    with pytest.raises(InstabilityError) as info:
        S.solve_potential(S.ParabolicProblem(cfg.grid_function(np.ones(cfg.nx)), 1.0, G=G), cfg)
    assert info.value.step == 4


def test_picard_non_contraction():
    cfg = S.SolverConfig(h=1 / 8, dt=0.5, L=2.0, scheme="mild-duhamel", picard_max=5)
    u0 = cfg.grid_function(np.cos(np.pi * cfg.x / 2))
    with pytest.raises(ConvergenceError):
        S.solve_potential(S.ParabolicProblem(u0, 1.0, G=50.0), cfg)


def test_coefficient_grid_mismatch():
    cfg = S.SolverConfig(h=1 / 8, dt=0.1, L=2.0)
    u0 = cfg.grid_function(np.ones(cfg.nx))
    with pytest.raises(GridMismatchError):
        S.solve_potential(S.ParabolicProblem(u0, 1.0, G=np.ones(cfg.nx + 1)), cfg)
    with pytest.raises(ValidationError):
        S.solve_potential(S.ParabolicProblem(u0, 1.0, F=1.0), cfg)


def test_trajectory_csv(tmp_path):
    cfg = S.SolverConfig(h=0.5, dt=0.5, L=1.0)
    tr = S.solve_potential(S.ParabolicProblem(cfg.grid_function(np.ones(cfg.nx)), 1.0), cfg)
    path = tmp_path / "u.csv"
    S.write_trajectory_csv(path, tr, "tag=1")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# scheme=crank-nicolson-strang") and lines[0].endswith("tag=1")
    assert lines[1] == "t,x,value" and len(lines) == 2 + tr.values.size
