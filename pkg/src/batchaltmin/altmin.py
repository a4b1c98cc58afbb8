"""Alternating-minimization operators.

``project_range`` and ``project_amplitude`` act in measurement space C^m;
``apply_g`` and ``altmin_step`` are their composition written in signal
space, ``T(x) = (A^*A)^{-1} g(x)``.
"""
import numpy as np

from .errors import DegenerateInputError, DimensionError
from .measurement import SensingEnsemble, as_signal
from .metrics import phase_of

__all__ = [
    "project_range",
    "project_amplitude",
    "apply_g",
    "altmin_step",
    "altmin_step_projections",
]


def _measurement_vector(A: SensingEnsemble, w):
    w = np.asarray(w, dtype=np.complex128)
    if w.ndim != 1 or w.shape[0] != A.m:
        raise DimensionError(f"expected a length-{A.m} vector, got shape {w.shape}")
    return w


def _check_inputs(A: SensingEnsemble, y, x):
    x = as_signal(x, "x")
    y = np.asarray(y, dtype=float)
    if x.shape[0] != A.n:
        raise DimensionError(f"x has length {x.shape[0]}, ensemble has n={A.n}")
    if y.shape != (A.m,):
        raise DimensionError(f"y has shape {y.shape}, ensemble has m={A.m}")
    if not np.any(x):
        raise DegenerateInputError("x must be nonzero")
    return y, x


def project_range(A: SensingEnsemble, w) -> np.ndarray:
    """Orthogonal projection of ``w`` onto range(A), ``Q Q^* w``."""
    w = _measurement_vector(A, w)
    A._check_rank()
    Q = A.q
    return Q @ (Q.conj().T @ w)


def project_amplitude(y, w) -> np.ndarray:
    """Replace the moduli of ``w`` by ``y`` and keep its phases."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=np.complex128)
    if y.shape != w.shape:
        raise DimensionError(f"shape mismatch: y {y.shape} vs w {w.shape}")
    return y * phase_of(w)


def apply_g(A: SensingEnsemble, y, x) -> np.ndarray:
    """``g(x) = sum_i y_i (a_i^* x / |a_i^* x|) a_i``.

    Rows where ``a_i^* x == 0`` use phase 1.
    """
    y, x = _check_inputs(A, y, x)
    M = A.matrix
    return M.conj().T @ (y * phase_of(M @ x))


def altmin_step(A: SensingEnsemble, y, x) -> np.ndarray:
    """One alternating-minimization update ``T(x) = (A^*A)^{-1} g(x)``."""
    return A.solve_normal(apply_g(A, y, x))


def altmin_step_projections(A: SensingEnsemble, y, x) -> np.ndarray:
    """Reference path for :func:`altmin_step` through ``P_S(P_A(Ax))``.

    The measurement-space iterate is mapped back to coefficients with an
    independent dense least-squares solve; meant for cross-checking only.
    """
    y, x = _check_inputs(A, y, x)
    w = project_range(A, project_amplitude(y, A.matrix @ x))
    coef, *_ = np.linalg.lstsq(A.matrix, w, rcond=None)
    return coef
