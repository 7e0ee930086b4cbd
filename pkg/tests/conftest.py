import math

import numpy as np
import pytest
from hypothesis import settings

from paritylink.states import JonesVector

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_jones(rng: np.random.Generator) -> JonesVector:
    z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    z /= np.linalg.norm(z)
    return JonesVector(z[0], z[1])


def jones_from_angles(theta: float, phi: float) -> JonesVector:
    return JonesVector(math.cos(theta), math.sin(theta) * complex(math.cos(phi), math.sin(phi)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
