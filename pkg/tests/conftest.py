"""
tests/conftest.py

Shared fixtures: short Lorenz96 series and tiny pair libraries that keep
the unit suite fast.
"""

from __future__ import annotations

import numpy as np
import pytest

from delaynet.services.data import add_noise, generate_lorenz96, rescale
from delaynet.services.embed import EmbeddingSpec
from delaynet.services.netaction import Architecture, build_pair_library


@pytest.fixture(scope="session")
def clean_series():
    return generate_lorenz96(n_total=4_000, n_discard=500, seed=42)


@pytest.fixture(scope="session")
def noisy_series(clean_series):
    return add_noise(clean_series, 0.02, seed=43)


@pytest.fixture(scope="session")
def rescaled_series(noisy_series):
    scaled, _ = rescale(noisy_series)
    return scaled


@pytest.fixture
def small_library(rescaled_series):
    """M = 12 training pairs, D_E = 3, tau = 2, with a 40-pair holdout."""
    return build_pair_library(rescaled_series, EmbeddingSpec(tau=2, d_e=3), m=12, m_total=52)


@pytest.fixture
def small_arch():
    return Architecture.from_depth(d_e=3, d_h=4, l_f=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
