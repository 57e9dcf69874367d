import numpy as np
import pytest

from foloc.dynamics import GeneratorParams


@pytest.fixture
def classical_params():
    return GeneratorParams("classical2", H=3.5, D=1.0, X_dp=0.25, X_q=0.35, Ep=1.05)


@pytest.fixture
def fluxdecay_params():
    return GeneratorParams(
        "fluxdecay3", H=4.2, D=1.3, X_dp=0.22, X_q=0.75,
        X_d=1.20, T_d0p=5.2, K_A=25.0, T_A=0.05,
    )


@pytest.fixture
def terminal():
    """A lagging-power-factor dispatch at a slightly raised terminal voltage."""
    Vterm = 1.02 * np.exp(1j * 0.05)
    S = 0.8 + 0.25j
    return S, Vterm


@pytest.fixture
def rng():
    return np.random.default_rng(42)
