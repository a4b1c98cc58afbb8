"""Angle and distance functionals between an estimate and the truth."""
import numpy as np

from .errors import DegenerateInputError, DimensionError
from .measurement import as_signal

__all__ = ["theta", "dist_phase", "residual", "success", "phase_of"]


def _pair(x, z):
    x = as_signal(x, "x")
    z = as_signal(z, "z")
    if x.shape != z.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {z.shape[0]}")
    return x, z


def phase_of(w):
    """Unit-modulus phase ``w/|w|`` with phase 1 where ``w == 0``."""
    w = np.asarray(w, dtype=np.complex128)
    mod = np.abs(w)
    out = np.ones_like(w)
    nz = mod > 0
    out[nz] = w[nz] / mod[nz]
    return out


def theta(x, z) -> float:
    """``arcsin(|x^* z| / (||x|| ||z||))``, in [0, pi/2].

    pi/2 means ``x`` is a complex multiple of ``z``; 0 means orthogonal.
    Evaluated as ``atan2(|x^* z| / ||z||, ||x_perp||)`` with ``x_perp`` the
    part of ``x`` orthogonal to ``z``: arcsin loses half the digits near
    pi/2, and the two-argument form cannot leave [0, pi/2].
    """
    x, z = _pair(x, z)
    nx, nz = np.linalg.norm(x), np.linalg.norm(z)
    if nx == 0 or nz == 0:
        raise DegenerateInputError("theta is undefined for a zero vector")
    u = z / nz
    par = np.vdot(u, x)
    perp = np.linalg.norm(x - par * u)
    return float(np.arctan2(abs(par), perp))


def dist_phase(x, z) -> float:
    """``inf_phi ||e^{i phi} z - x||``.

    Evaluated at the optimal phase ``phi = arg(z^* x)``, which equals
    ``sqrt(||x||^2 + ||z||^2 - 2|x^* z|)`` without the cancellation.
    """
    x, z = _pair(x, z)
    ph = phase_of(np.vdot(z, x))
    return float(np.linalg.norm(x - ph * z))


def residual(A, y, x) -> float:
    """Relative amplitude misfit ``|| |Ax| - y || / ||y||``."""
    x = as_signal(x, "x")
    y = np.asarray(y, dtype=float)
    if x.shape[0] != A.n or y.shape[0] != A.m:
        raise DimensionError("dimensions of A, y and x do not agree")
    ny = np.linalg.norm(y)
    if ny == 0:
        raise DegenerateInputError("observations are identically zero")
    return float(np.linalg.norm(np.abs(A.matrix @ x) - y) / ny)


def success(x, z, tol: float) -> bool:
    """True iff the normalized estimate matches ``z`` up to global phase within ``tol``."""
    x, z = _pair(x, z)
    nx, nz = np.linalg.norm(x), np.linalg.norm(z)
    if nx == 0 or nz == 0:
        raise DegenerateInputError("success is undefined for a zero vector")
    return dist_phase(x / nx, z / nz) <= tol
