import numpy as np
import pytest

from scansim.scenario import (
    NoiseParams,
    UlpsDescriptor,
    UlpsKind,
    default_scenario,
    make_square_cluster,
)


@pytest.fixture
def zero_noise():
    return NoiseParams(0.0, 0.0, 0.0)


@pytest.fixture
def default_config():
    return default_scenario(seed=1)


@pytest.fixture
def quiet_config(zero_noise):
    return default_scenario(seed=1, noise=zero_noise)


@pytest.fixture
def gr_cluster():
    """A 5-beacon globally referenced cluster centered at the origin."""
    return UlpsDescriptor(
        id="gr",
        kind=UlpsKind.GLOBALLY_REFERENCED,
        beacons=tuple(make_square_cluster((0.0, 0.0), 1.0, 3.5, include_center=True)),
        coverage_center=(0.0, 0.0),
        coverage_radius=5.0,
    )


@pytest.fixture
def lr_cluster():
    """A 4-beacon locally referenced cluster (local frame at its center)."""
    return UlpsDescriptor(
        id="lr",
        kind=UlpsKind.LOCALLY_REFERENCED,
        beacons=tuple(make_square_cluster((0.0, 0.0), 1.0, 3.5)),
        coverage_center=(6.0, 2.0),
        coverage_radius=5.0,
        orientation=0.7,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
