import numpy as np
import pytest

from homoglab import fields


@pytest.fixture(scope="session")
def gauss():
    """``Phi(x, t) = exp(-|t|) exp(-x^2)``."""
    return fields.separable_model("gaussian", "exponential")


@pytest.fixture(scope="session")
def indicator():
    """``Phi(x, t) = exp(-|t|) 1_[-1/2, 1/2](x)``."""
    return fields.separable_model("indicator", "exponential")


@pytest.fixture(scope="session")
def shot_spec():
    """Centred two-mark bump mixture."""
    return fields.ShotNoiseSpec((
        fields.BumpMark(weight=2.0, amplitude=1.0, length=0.5, duration=0.5),
        fields.BumpMark(weight=2.0, amplitude=-0.25, length=1.0, duration=1.0),
    ))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
