import numpy as np
import pytest

from mfcal import generate_toy_data
from mfcal.params import (
    CalibrationParams,
    CorrelationParams,
    ParameterState,
    PrecisionParams,
)


@pytest.fixture(scope="session")
def small_toy():
    """Small two-level dataset shared by tests that only need structure."""
    dataset, validation = generate_toy_data(
        n_low=12, n_high=5, n_field=3, validation_n=6, seed=101
    )
    return dataset, validation


@pytest.fixture(scope="session")
def paper_toy():
    """The paper-sized configuration (40 low, 10 high, 3 field)."""
    dataset, validation = generate_toy_data(
        n_low=40, n_high=10, n_field=3, validation_n=25, seed=7
    )
    return dataset, validation


def two_level_state(
    p=2,
    m_shared=1,
    m_low=1,
    m_high=1,
    theta_shared=0.5,
    theta_low=0.5,
    theta_high=0.5,
    lam_emulator=1.0,
    lam_delta=20.0,
    lam_field=20.0,
    lam_noise=20.0,
    rho=0.5,
):
    """Hand-built two-level state with scalar fills, for kernel tests."""
    return ParameterState(
        theta=CalibrationParams(
            shared=np.full(m_shared, theta_shared),
            per_level=(np.full(m_low, theta_low), np.full(m_high, theta_high)),
        ),
        precision=PrecisionParams(
            emulator=lam_emulator,
            deltas=(lam_delta,),
            field_delta=lam_field,
            noise=lam_noise,
        ),
        correlation=CorrelationParams(
            emulator=np.full(p + m_shared + m_low, rho),
            deltas=(np.full(p + m_shared + m_high, rho),),
            field_delta=np.full(p, rho),
        ),
    )


def random_prior_state(rng, p, m_shared, m_own):
    """Draw a state from the priors (clamped Beta for rho, Gammas for lam)."""
    K = len(m_own)
    rho = lambda size: np.clip(rng.beta(1.0, 0.001, size=size), 1e-9, 1 - 1e-9)
    return ParameterState(
        theta=CalibrationParams(
            shared=rng.uniform(size=m_shared),
            per_level=tuple(rng.uniform(size=m) for m in m_own),
        ),
        precision=PrecisionParams(
            emulator=rng.gamma(shape=6.0, scale=1.0 / 5.0),
            deltas=tuple(rng.gamma(shape=2.0, scale=1000.0) for _ in range(K - 1)),
            field_delta=rng.gamma(shape=2.0, scale=1000.0),
            noise=rng.gamma(shape=2.0, scale=1000.0),
        ),
        correlation=CorrelationParams(
            emulator=rho(p + m_shared + m_own[0]),
            deltas=tuple(rho(p + m_shared + m_own[k]) for k in range(1, K)),
            field_delta=rho(p),
        ),
    )
