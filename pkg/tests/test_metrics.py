import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from batchaltmin.errors import DegenerateInputError
from batchaltmin.measurement import RngStream, observe, sample_sensing, sample_signal
from batchaltmin.metrics import dist_phase, residual, success, theta


def _orthonormal_pair(seed, n=6):
    z = sample_signal(n, True, RngStream(seed, 0))
    w = sample_signal(n, False, RngStream(seed, 1))
    w -= np.vdot(z, w) * z
    return z, w / np.linalg.norm(w)


def test_theta_parallel_is_half_pi():
    z = sample_signal(5, False, RngStream(1))
    assert theta(z, z) == pytest.approx(np.pi / 2, abs=1e-15)
    assert theta((2 - 3j) * z, z) == pytest.approx(np.pi / 2, abs=1e-15)


def test_theta_orthogonal_is_zero():
    z, w = _orthonormal_pair(2)
    assert theta(w, z) == pytest.approx(0.0, abs=1e-15)


def test_theta_quarter():
    z, w = _orthonormal_pair(3)
    assert theta((z + w) / np.sqrt(2), z) == pytest.approx(np.pi / 4, abs=1e-14)


def test_theta_matches_arcsin_definition():
    for k in range(20):
        x = sample_signal(7, False, RngStream(40, k))
        z = sample_signal(7, False, RngStream(41, k))
        ref = np.arcsin(abs(np.vdot(x, z)) / (np.linalg.norm(x) * np.linalg.norm(z)))
        assert theta(x, z) == pytest.approx(ref, abs=1e-13)


def test_theta_stays_in_range_under_rounding():
    z = np.array([1.0, 0.0, 0.0], complex)
    x = z * (1 + 1e-16)
    t = theta(x, z)
    assert 0.0 <= t <= np.pi / 2
    assert t == pytest.approx(np.pi / 2, abs=1e-15)


def test_theta_zero_vector_rejected():
    with pytest.raises(DegenerateInputError):
        theta(np.zeros(3), np.ones(3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), phi=st.floats(-10, 10), c=st.floats(1e-3, 1e3))
def test_theta_invariant_to_phase_and_scale(seed, phi, c):
    x = sample_signal(5, False, RngStream(seed, 0))
    z = sample_signal(5, False, RngStream(seed, 1))
    assert theta(np.exp(1j * phi) * c * x, z) == pytest.approx(theta(x, z), abs=1e-12)


def _brute_dist(x, z):
    f = lambda p: np.linalg.norm(np.exp(1j * p) * z - x)
    grid = np.linspace(-np.pi, np.pi, 721)
    p0 = grid[np.argmin([f(p) for p in grid])]
    return minimize_scalar(f, bracket=(p0 - 0.01, p0, p0 + 0.01), tol=1e-12).fun


def test_dist_phase_examples():
    z = sample_signal(4, False, RngStream(5))
    assert dist_phase(z, z) == pytest.approx(0.0, abs=1e-14)
    assert dist_phase(1j * z, z) == pytest.approx(0.0, abs=1e-14)
    a, b = _orthonormal_pair(6)
    assert dist_phase(a, b) == pytest.approx(np.sqrt(2), abs=1e-14)


def test_dist_phase_against_brute_force_and_closed_form():
    for k in range(10):
        x = sample_signal(5, False, RngStream(50, k))
        z = sample_signal(5, False, RngStream(51, k))
        closed = np.sqrt(np.linalg.norm(x) ** 2 + np.linalg.norm(z) ** 2 - 2 * abs(np.vdot(x, z)))
        assert dist_phase(x, z) == pytest.approx(closed, rel=1e-12)
        assert dist_phase(x, z) == pytest.approx(_brute_dist(x, z), rel=1e-8)


def test_dist_theta_relation_for_unit_vectors():
    for k in range(20):
        x = sample_signal(6, True, RngStream(60, k))
        z = sample_signal(6, True, RngStream(61, k))
        assert dist_phase(x, z) ** 2 == pytest.approx(2 * (1 - np.sin(theta(x, z))), abs=1e-12)


def test_residual_examples(instance):
    A, y, z = instance
    assert residual(A, y, z) == pytest.approx(0.0, abs=1e-14)
    assert residual(A, y, np.exp(0.4j) * z) == pytest.approx(0.0, abs=1e-14)
    assert residual(A, y, np.zeros(A.n)) == 1.0


def test_residual_zero_observations():
    A = sample_sensing(10, 3, RngStream(0))
    with pytest.raises(DegenerateInputError):
        residual(A, np.zeros(10), np.ones(3))


def test_success_examples():
    z = sample_signal(5, False, RngStream(7))
    assert success(5 * np.exp(1j) * z, z, 1e-6)
    a, b = _orthonormal_pair(8)
    assert not success(a, b, 0.1)
    for k in range(10):
        assert success(sample_signal(5, True, RngStream(70, k)), z, 2.0)
    with pytest.raises(DegenerateInputError):
        success(np.zeros(5), z, 1.0)
