"""Signals, complex Gaussian sensing ensembles and amplitude observations.

Complex normal draws follow the CN(0, 1) convention: real and imaginary
parts are independent N(0, 1/2), so ``E|a|^2 = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import (
    CovarianceError,
    DimensionError,
    InsufficientMeasurementsError,
    SingularityError,
)

__all__ = [
    "RngStream",
    "SensingEnsemble",
    "CovarianceSpec",
    "as_signal",
    "complex_normal",
    "sample_signal",
    "random_unit",
    "sample_sensing",
    "sample_sensing_cov",
    "observe",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(master_seed, stream_id)``.

    ``stream_id`` may be a single integer or a tuple of integers (a path of
    nested keys, e.g. ``(cell, trial)``). Streams are built on numpy's
    ``SeedSequence`` spawn keys, so distinct ids give independent streams and
    the draws do not depend on the order in which streams are consumed.

    Every call to :meth:`generator` returns a *fresh* generator positioned at
    the start of the stream.
    """

    master_seed: int
    stream_id: int | tuple[int, ...] = 0

    def __post_init__(self):
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        if any(int(k) < 0 or int(k) > _MASK64 for k in key):
            raise ValueError("stream ids must be unsigned 64-bit integers")
        if int(self.master_seed) < 0 or int(self.master_seed) > _MASK64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    @property
    def key(self) -> tuple[int, ...]:
        if isinstance(self.stream_id, tuple):
            return tuple(int(k) for k in self.stream_id)
        return (int(self.stream_id),)

    def spawn(self, *keys: int) -> "RngStream":
        """Child stream whose id extends this one by ``keys``."""
        return RngStream(self.master_seed, self.key + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(seq))


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def complex_normal(gen: np.random.Generator, size) -> np.ndarray:
    """I.i.d. CN(0, 1) array of the given shape."""
    shape = tuple(int(k) for k in np.atleast_1d(size))
    out = gen.standard_normal(shape + (2,)).view(np.complex128)[..., 0]
    out *= np.sqrt(0.5)
    return out


def as_signal(x, name: str = "signal") -> np.ndarray:
    """Validate ``x`` as a finite complex vector of length >= 1."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


class SensingEnsemble:
    """An ``m x n`` complex measurement matrix with rows ``a_i^*``.

    Two factorizations are cached lazily: a Cholesky factor of the Gram
    matrix ``A^*A`` for the normal-equation solves done at every iteration,
    and a reduced QR ``A = QR`` for projections and least-squares fits.

    Args:
        matrix: ``(m, n)`` complex array, ``m >= n``.
    """

    def __init__(self, matrix):
        A = np.array(matrix, dtype=np.complex128)
        if A.ndim != 2 or A.shape[1] < 1:
            raise DimensionError(f"sensing matrix must be 2-D, got shape {A.shape}")
        m, n = A.shape
        if m < n:
            raise InsufficientMeasurementsError(f"need m >= n, got m={m}, n={n}")
        if not np.all(np.isfinite(A)):
            raise ValueError("sensing matrix has non-finite entries")
        A.setflags(write=False)
        self._A = A

    @property
    def matrix(self) -> np.ndarray:
        return self._A

    @property
    def m(self) -> int:
        return self._A.shape[0]

    @property
    def n(self) -> int:
        return self._A.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._A.shape

    def __repr__(self):
        return f"SensingEnsemble(m={self.m}, n={self.n})"

    @cached_property
    def _qr(self):
        Q, R = np.linalg.qr(self._A, mode="reduced")
        Q.setflags(write=False)
        R.setflags(write=False)
        return Q, R

    @property
    def q(self) -> np.ndarray:
        return self._qr[0]

    @property
    def r(self) -> np.ndarray:
        return self._qr[1]

    @cached_property
    def _gram_cholesky(self):
        G = self._A.conj().T @ self._A
        try:
            c = linalg.cho_factor(G, lower=False, check_finite=False)
        except linalg.LinAlgError:
            return None
        d = np.abs(np.diag(c[0]))
        if d.min() <= d.max() * np.sqrt(self.m * np.finfo(float).eps):
            return None
        return c

    @cached_property
    def is_singular(self) -> bool:
        d = np.abs(np.diag(self.r))
        return bool(d.min() <= d.max() * self.m * np.finfo(float).eps)

    def _check_rank(self):
        if self.is_singular:
            raise SingularityError("normal matrix A^*A is singular to working precision")

    def rows(self, index) -> "SensingEnsemble":
        """Sub-ensemble made of the selected rows (own factorizations)."""
        return SensingEnsemble(self._A[index])

    def solve_normal(self, v) -> np.ndarray:
        """Solve ``(A^*A) u = v``.

        Uses the Gram Cholesky factor; falls back to the QR factor
        (``R^* R u = v``) when the Gram matrix is too ill-conditioned for it.
        """
        v = np.asarray(v, dtype=np.complex128)
        if v.shape[0] != self.n:
            raise DimensionError(f"right-hand side has length {v.shape[0]}, expected {self.n}")
        c = self._gram_cholesky
        if c is not None:
            return linalg.cho_solve(c, v, check_finite=False)
        self._check_rank()
        R = self.r
        t = linalg.solve_triangular(R, v, trans="C", lower=False, check_finite=False)
        return linalg.solve_triangular(R, t, lower=False, check_finite=False)

    def least_squares(self, w) -> np.ndarray:
        """``argmin_u ||A u - w||`` via the QR factor."""
        self._check_rank()
        w = np.asarray(w, dtype=np.complex128)
        if w.shape[0] != self.m:
            raise DimensionError(f"vector has length {w.shape[0]}, expected {self.m}")
        return linalg.solve_triangular(
            self.r, self.q.conj().T @ w, lower=False, check_finite=False
        )

    def smallest_singular_value(self) -> float:
        return float(np.linalg.svd(self.r, compute_uv=False)[-1])


@dataclass(frozen=True)
class CovarianceSpec:
    """Hermitian positive-definite covariance with a cached square root."""

    matrix: np.ndarray
    sqrt: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        S = np.array(self.matrix, dtype=np.complex128)
        if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 1:
            raise DimensionError(f"covariance must be square, got shape {S.shape}")
        if not np.all(np.isfinite(S)):
            raise CovarianceError("covariance has non-finite entries")
        scale = max(1.0, float(np.abs(S).max()))
        if np.abs(S - S.conj().T).max() > 1e-12 * scale:
            raise CovarianceError("covariance is not Hermitian")
        S = 0.5 * (S + S.conj().T)
        w, V = np.linalg.eigh(S)
        if w[0] <= w[-1] * S.shape[0] * np.finfo(float).eps * 10 or w[0] <= 0:
            raise CovarianceError(
                f"covariance is not positive definite (smallest eigenvalue {w[0]:.3g})"
            )
        root = (V * np.sqrt(w)) @ V.conj().T
        root = 0.5 * (root + root.conj().T)
        S.setflags(write=False)
        root.setflags(write=False)
        object.__setattr__(self, "matrix", S)
        object.__setattr__(self, "sqrt", root)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def diagonal(cls, values) -> "CovarianceSpec":
        return cls(np.diag(np.asarray(values, dtype=float)))


def _check_dim(n):
    if int(n) != n or n < 1:
        raise DimensionError(f"dimension must be a positive integer, got {n!r}")
    return int(n)


def sample_signal(n: int, unit: bool, rng) -> np.ndarray:
    """Standard complex normal vector, optionally scaled to unit norm."""
    n = _check_dim(n)
    x = complex_normal(_generator(rng), n)
    if unit:
        x /= np.linalg.norm(x)
    return x


def random_unit(n: int, rng) -> np.ndarray:
    """Haar-uniform unit vector in C^n (normalized complex Gaussian)."""
    return sample_signal(n, True, rng)


def sample_sensing(m: int, n: int, rng) -> SensingEnsemble:
    """Ensemble with i.i.d. CN(0, 1) entries."""
    n = _check_dim(n)
    if int(m) != m or m < n:
        raise InsufficientMeasurementsError(f"need m >= n, got m={m}, n={n}")
    return SensingEnsemble(complex_normal(_generator(rng), (int(m), n)))


def sample_sensing_cov(m: int, cov: CovarianceSpec, rng) -> SensingEnsemble:
    """Ensemble whose sensing vectors are i.i.d. CN(0, Sigma).

    Each ``a_i = Sigma^{1/2} g_i`` with ``g_i ~ CN(0, I)``; the stored row is
    ``a_i^* = g_i^* Sigma^{1/2}``.
    """
    if not isinstance(cov, CovarianceSpec):
        cov = CovarianceSpec(cov)
    n = cov.n
    if int(m) != m or m < n:
        raise InsufficientMeasurementsError(f"need m >= n, got m={m}, n={n}")
    G = complex_normal(_generator(rng), (int(m), n))
    return SensingEnsemble(G.conj() @ cov.sqrt)


def observe(A: SensingEnsemble, z) -> np.ndarray:
    """Amplitudes ``y_i = |a_i^* z|``."""
    z = as_signal(z, "z")
    if z.shape[0] != A.n:
        raise DimensionError(f"signal has length {z.shape[0]}, ensemble has n={A.n}")
    return np.abs(A.matrix @ z)
