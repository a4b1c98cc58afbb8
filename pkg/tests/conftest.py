import numpy as np
import pytest

from batchaltmin.measurement import RngStream, observe, sample_sensing, sample_signal


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def instance():
    """Unit truth, 64 x 8 ensemble and exact amplitudes."""
    stream = RngStream(11, 0)
    z = sample_signal(8, True, stream.spawn(0))
    A = sample_sensing(64, 8, stream.spawn(1))
    return A, observe(A, z), z
