import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homoglab import spaces
from homoglab.errors import DomainError, UndefinedRatioError, ValidationError, WindowTooSmallError
from homoglab.spaces import GridFunction, HolderOrder


def test_weight_eval_values():
    assert spaces.weight_eval(spaces.exp_weight(0.0), 17.0) == 1.0
    assert spaces.weight_eval(spaces.poly_weight(1.0), 3.0) == 4.0
    prod = spaces.exp_weight(1.0) * spaces.exp_weight(2.0)
    assert spaces.weight_eval(prod, 1.0) == pytest.approx(math.exp(-3), rel=1e-15)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-20, 20))
def test_exp_weights_multiply_exponents(a, b, x):
    lhs = spaces.weight_eval(spaces.exp_weight(a) * spaces.exp_weight(b), x)
    assert lhs == pytest.approx(spaces.weight_eval(spaces.exp_weight(a + b), x), rel=1e-12)


@pytest.mark.parametrize("w", [spaces.exp_weight(0.5), spaces.exp_weight(-1.0), spaces.poly_weight(0.5),
                               spaces.poly_weight(2.0), spaces.exp_weight(1.0) * spaces.poly_weight(1.0)])
def test_admissibility_constants(w):
    assert spaces.admissibility_ratio(w) <= w.admissibility_constant * (1 + 1e-12)


def test_product_weight_constant_multiplies():
    a, b = spaces.exp_weight(0.5), spaces.poly_weight(2.0)
    assert (a * b).admissibility_constant == pytest.approx(a.admissibility_constant * b.admissibility_constant)


def test_grid_function_size_invariant():
    assert GridFunction(np.zeros(80), 0.1, 4.0, "periodic").values.size == 80
    assert GridFunction(np.zeros(81), 0.1, 4.0, "padded").values.size == 81
    with pytest.raises(ValidationError):
        GridFunction(np.zeros(81), 0.1, 4.0, "periodic")
    with pytest.raises(DomainError):
        GridFunction(np.full(80, np.nan), 0.1, 4.0, "periodic")


def test_holder_order_branches():
    assert HolderOrder(-0.5).branch == "negative"
    assert HolderOrder(0.0).branch == "fractional"
    assert HolderOrder(0.5).branch == "fractional"
    assert HolderOrder(1.0).branch == "recursive-integer"
    assert HolderOrder(1.5).branch == "recursive-integer"
    with pytest.raises(DomainError):
        HolderOrder(-1.0)


# ---------------------------------------------------------------------------
# norms


@pytest.mark.parametrize("alpha", [-0.5, 0.0, 0.5, 1.0, 1.5])
def test_norm_of_zero(alpha):
    f = GridFunction(np.zeros(64), 1 / 8, 4.0)
    assert spaces.weighted_holder_norm(f, alpha, spaces.poly_weight(1.0)) == 0.0


def test_norm_of_constant_with_poly_weight():
    f = GridFunction.from_callable(lambda x: np.ones_like(x), 10.0, 0.01, "padded")
    assert spaces.weighted_holder_norm(f, 0.0, spaces.poly_weight(1.0)) == pytest.approx(1.0, abs=1e-12)


def test_norm_of_sine_order_one():
    for h, tol in [(0.01, 0.01), (0.001, 0.001)]:
        f = GridFunction.from_callable(np.sin, 2 * math.pi, 2 * math.pi / round(2 * math.pi / h), "periodic")
        assert spaces.weighted_holder_norm(f, 1.0, spaces.unit_weight()) == pytest.approx(2.0, abs=tol)


def test_negative_norm_is_independent_of_anchor():
    f = GridFunction.from_callable(lambda x: np.cos(5 * x) * np.exp(-x * x), 4.0, 1 / 64, "padded")
    shifted = spaces.integrate.cumulative_trapezoid(f.values, dx=f.h, initial=0.0) + 3.7
    base = spaces._pair_sup(shifted, f.x, f.h, spaces.unit_weight(), 0.5)
    assert spaces.weighted_holder_norm(f, -0.5, spaces.unit_weight()) == pytest.approx(base, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([-0.5, 0.0, 0.25, 1.5]), st.floats(-8, 8).filter(lambda c: abs(c) > 1e-3),
       st.integers(0, 2**32 - 1))
def test_norm_homogeneity(alpha, c, seed):
    f = spaces.random_pair(np.random.default_rng(seed))
    w = spaces.exp_weight(0.5)
    lhs = spaces.weighted_holder_norm(c * f, alpha, w)
    assert lhs == pytest.approx(abs(c) * spaces.weighted_holder_norm(f, alpha, w), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([-0.5, 0.0, 0.5, 1.25]), st.integers(0, 2**32 - 1))
def test_triangle_inequality(alpha, seed):
    rng = np.random.default_rng(seed)
    f, g = spaces.random_pair(rng), spaces.random_pair(rng, kind="rough")
    w = spaces.poly_weight(1.0)
    lhs = spaces.weighted_holder_norm(f + g, alpha, w)
    assert lhs <= spaces.weighted_holder_norm(f, alpha, w) + spaces.weighted_holder_norm(g, alpha, w) + 1e-12


@pytest.mark.parametrize("alpha", [-0.5, 0.0, 0.5, 1.5])
def test_weight_monotonicity(alpha, rng):
    f = spaces.random_pair(rng)
    small, large = spaces.exp_weight(1.0), spaces.unit_weight()
    assert spaces.weighted_holder_norm(f, alpha, small) >= spaces.weighted_holder_norm(f, alpha, large)


@pytest.mark.parametrize("alpha", [-0.5, 0.5, 1.5])
def test_discrete_norm_converges(alpha):
    func = lambda x: np.sin(x) + 0.5 * np.cos(2 * x)
    vals = []
    for n in (256, 512, 1024):
        f = GridFunction.from_callable(func, math.pi, 2 * math.pi / n, "periodic")
        vals.append(spaces.weighted_holder_norm(f, alpha, spaces.unit_weight()))
    h = 2 * math.pi / 256
    assert abs(vals[1] - vals[0]) <= 4 * h * vals[0]
    assert abs(vals[2] - vals[1]) <= abs(vals[1] - vals[0]) + 1e-12


def test_norm_rejects_bad_order():
    with pytest.raises(DomainError):
        spaces.weighted_holder_norm(GridFunction(np.zeros(8), 1.0, 4.0), -1.5, spaces.unit_weight())


# ---------------------------------------------------------------------------
# products


def test_product_with_unit_is_bounded(rng):
    f1 = spaces.random_pair(rng)
    one = f1.with_values(np.ones_like(f1.values))
    r = spaces.product_bound_ratio(f1, one, 0.5, 0.75, spaces.exp_weight(0.5), spaces.unit_weight())
    assert 0 < r <= 1.0


def test_product_ratio_stable_under_frequency_doubling():
    L, h = math.pi, math.pi / 512
    f2 = GridFunction.from_callable(np.sin, L, h)
    ratios = []
    for k in (16, 32):
        f1 = GridFunction.from_callable(lambda x, k=k: np.cos(k * x), L, h)
        ratios.append(spaces.product_bound_ratio(f1, f2, -0.25, 0.5, spaces.unit_weight(), spaces.unit_weight()))
    assert all(math.isfinite(r) for r in ratios)
    assert 0.5 <= ratios[1] / ratios[0] <= 2.0


def test_product_ratio_zero_denominator():
    z = GridFunction(np.zeros(64), 1 / 8, 4.0)
    with pytest.raises(UndefinedRatioError):
        spaces.product_bound_ratio(z, z, 0.5, 0.5, spaces.unit_weight(), spaces.unit_weight())


def test_product_suite_within_frozen_bounds():
    mixed, positive = spaces.product_suite(np.random.default_rng(0))
    assert mixed <= spaces.FROZEN_BOUNDS["product_mixed"]
    assert positive <= spaces.FROZEN_BOUNDS["product_positive"]


# ---------------------------------------------------------------------------
# heat semigroup


def test_semigroup_maps_kernel_forward():
    h = 0.01
    f = GridFunction.from_callable(lambda x: spaces.heat_kernel_values(x, 1.0), 20.0, h, "padded", 20.0)
    out = spaces.heat_semigroup_apply(f, 1.0)
    assert np.max(np.abs(out.values - spaces.heat_kernel_values(f.x, 2.0))) <= 1e-6


def test_semigroup_conserves_constants():
    f = GridFunction(np.ones(128), 1 / 16, 4.0)
    assert np.max(np.abs(spaces.heat_semigroup_apply(f, 0.7).values - 1)) <= 1e-15


def test_semigroup_fourier_mode():
    k, t = 3.0, 0.2
    f = GridFunction.from_callable(lambda x: np.cos(k * x), math.pi, math.pi / 64)
    out = spaces.heat_semigroup_apply(f, t)
    assert np.max(np.abs(out.values - math.exp(-k * k * t) * np.cos(k * f.x))) <= 1e-13


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.integers(0, 2**32 - 1))
def test_semigroup_property(s, t, seed):
    f = spaces.random_pair(np.random.default_rng(seed))
    a = spaces.heat_semigroup_apply(spaces.heat_semigroup_apply(f, s), t).values
    b = spaces.heat_semigroup_apply(f, s + t).values
    assert np.max(np.abs(a - b)) <= 1e-8


def test_semigroup_errors():
    f = GridFunction.from_callable(lambda x: np.exp(-x * x), 4.0, 1 / 16, "padded", 4.0)
    with pytest.raises(DomainError):
        spaces.heat_semigroup_apply(f, 0.0)
    with pytest.raises(WindowTooSmallError):
        spaces.heat_semigroup_apply(f, 1.0)


# ---------------------------------------------------------------------------
# smoothing and envelope


def test_smoothing_column_bounded():
    ratio, rows = spaces.smoothing_ratio()
    assert len(rows) == 9
    assert ratio <= spaces.FROZEN_BOUNDS["smoothing_max_over_min"]


def test_smoothing_of_zero_is_zero():
    z = GridFunction(np.zeros(256), 1 / 32, 4.0)
    rows = spaces.smoothing_exponent_check(z, 0.25, 1.5, spaces.exp_weight(1.0), [0.5, 0.25])
    assert all(r.scaled_norm == 0.0 for r in rows)


def test_smoothing_with_equal_orders_does_not_increase_norm():
    f = spaces.sawtooth()
    w = spaces.unit_weight()
    base = spaces.weighted_holder_norm(f, 0.5, w)
    rows = spaces.smoothing_exponent_check(f, 0.5, 0.5, w, [2.0**-k for k in range(1, 8)])
    assert max(r.scaled_norm for r in rows) <= base * (1 + 1e-12)


def test_weight_envelope_values():
    assert spaces.weight_envelope_check(1.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert spaces.weight_envelope_check(1e-9, 1.0) == pytest.approx(2.0, abs=1e-6)
    sweep = [spaces.weight_envelope_check(k, l) for k in (0.25, 0.5, 1.0) for l in (0.25, 0.5, 1.0)]
    assert max(sweep) <= spaces.FROZEN_BOUNDS["envelope_sup"]
    with pytest.raises(DomainError):
        spaces.weight_envelope_check(0.0, 0.5)
    with pytest.raises(DomainError):
        spaces.weight_envelope_check(0.5, 1.5)


def test_invariant_suite_passes():
    results = spaces.run_invariant_suite(0)
    assert results and all(r.passed for r in results), [r for r in results if not r.passed]
