"""Monte-Carlo estimates of h(theta) = E |a1| |a1 sin(theta) + a2 cos(theta)|.

``a1, a2`` are independent CN(0, 1). ``h`` and its derivatives govern the
expected angle gain of one alternating-minimization step; the estimators here
share draws across angles (common random numbers) whenever they are handed
the same stream.

Known anchors: ``h(0) = pi/4``, ``h(pi/2) = 1``, ``h'(0) = h'(pi/2) = 0``,
``h''(0) = pi/8``. For real Gaussian ``a1, a2`` the function has the closed
form ``(2 theta sin(theta) + 2 cos(theta)) / pi``.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .measurement import RngStream, _generator

__all__ = [
    "HALF_PI",
    "LIPSCHITZ_H2",
    "HTable",
    "GrowthReport",
    "h_mc",
    "h_prime_mc",
    "h_and_prime_mc",
    "h_real_mc",
    "h_second_fd",
    "h_real_closed_form",
    "build_htable",
    "predicted_theta_next",
    "verify_growth_condition",
]

HALF_PI = 0.5 * math.pi
# Lipschitz bound on h'': (3/2) Gamma(1/2) Gamma(5/2) + Gamma(2)
LIPSCHITZ_H2 = 1.5 * math.gamma(0.5) * math.gamma(2.5) + math.gamma(2.0)

CHUNK = 1 << 20
_SLACK = 1e-12


def _check_angle(theta: float) -> float:
    theta = float(theta)
    if not (-_SLACK <= theta <= HALF_PI + _SLACK):
        raise DomainError(f"angle {theta!r} outside [0, pi/2]")
    return min(max(theta, 0.0), HALF_PI)


def _check_samples(samples: int) -> int:
    if int(samples) != samples or samples < 2:
        raise ValueError(f"need at least 2 samples, got {samples!r}")
    return int(samples)


def _stream(gen, samples, complex_valued=True):
    """Yield ``(a1, a2)`` chunks; chunk layout depends only on ``samples``."""
    done = 0
    while done < samples:
        c = min(CHUNK, samples - done)
        if complex_valued:
            p = gen.standard_normal((2, c, 2)).view(np.complex128)[..., 0]
            p *= math.sqrt(0.5)
            yield p[0], p[1]
        else:
            p = gen.standard_normal((2, c))
            yield p[0], p[1]
        done += c


def _mc(fn, samples, rng, complex_valued=True):
    """Means and standard errors of the rows of ``fn(a1, a2)``.

    ``fn`` returns a ``(k, chunk)`` array of per-sample values; chunk
    statistics are merged with the pairwise variance update.
    """
    gen = _generator(rng)
    n_tot = 0
    mean = None
    m2 = None
    for a1, a2 in _stream(gen, samples, complex_valued):
        vals = np.atleast_2d(fn(a1, a2))
        c = vals.shape[1]
        cm = vals.mean(axis=1)
        cm2 = ((vals - cm[:, None]) ** 2).sum(axis=1)
        if mean is None:
            mean, m2, n_tot = cm, cm2, c
            continue
        tot = n_tot + c
        delta = cm - mean
        mean = mean + delta * (c / tot)
        m2 = m2 + cm2 + delta**2 * (n_tot * c / tot)
        n_tot = tot
    se = np.sqrt(m2 / (n_tot - 1) / n_tot)
    return mean, se


def _h_samples(a1, a2, t):
    return np.abs(a1) * np.abs(a1 * math.sin(t) + a2 * math.cos(t))


def _h_prime_samples(a1, a2, t):
    s, c = math.sin(t), math.cos(t)
    u = a1 * s + a2 * c
    du = a1 * c - a2 * s
    mod = np.abs(u)
    out = np.zeros(mod.shape)
    nz = mod > 0
    out[nz] = np.abs(a1[nz]) * (u[nz].conj() * du[nz]).real / mod[nz]
    return out


def h_mc(theta: float, samples: int, rng) -> tuple[float, float]:
    """Sample mean of ``|a1||a1 sin(theta) + a2 cos(theta)|`` and its standard error."""
    t = _check_angle(theta)
    mean, se = _mc(lambda a1, a2: _h_samples(a1, a2, t), _check_samples(samples), rng)
    return float(mean[0]), float(se[0])


def h_prime_mc(theta: float, samples: int, rng) -> tuple[float, float]:
    """Pathwise estimate of ``h'(theta)`` and its standard error.

    Uses ``d/dtheta |u| = Re(conj(u) du) / |u|`` with
    ``u = a1 sin + a2 cos``; samples with ``u == 0`` contribute 0.
    """
    t = _check_angle(theta)
    mean, se = _mc(lambda a1, a2: _h_prime_samples(a1, a2, t), _check_samples(samples), rng)
    return float(mean[0]), float(se[0])


def h_and_prime_mc(theta: float, samples: int, rng) -> tuple[float, float, float, float]:
    """``(h, h_se, h', h'_se)`` from one shared set of draws."""
    t = _check_angle(theta)

    def fn(a1, a2):
        return np.stack([_h_samples(a1, a2, t), _h_prime_samples(a1, a2, t)])

    mean, se = _mc(fn, _check_samples(samples), rng)
    return float(mean[0]), float(se[0]), float(mean[1]), float(se[1])


def h_real_mc(theta: float, samples: int, rng) -> tuple[float, float]:
    """Real-Gaussian analogue of :func:`h_mc` (``a1, a2 ~ N(0, 1)``)."""
    t = _check_angle(theta)
    mean, se = _mc(
        lambda a1, a2: _h_samples(a1, a2, t), _check_samples(samples), rng, complex_valued=False
    )
    return float(mean[0]), float(se[0])


def h_real_closed_form(theta: float) -> float:
    t = _check_angle(theta)
    return (2.0 * t * math.sin(t) + 2.0 * math.cos(t)) / math.pi


def _stencil(theta, step):
    if step <= 0:
        raise ValueError("step must be positive")
    if theta - step >= -_SLACK and theta + step <= HALF_PI + _SLACK:
        pts = (theta - step, theta, theta + step)
    elif theta + 2 * step <= HALF_PI + _SLACK:
        pts = (theta, theta + step, theta + 2 * step)
    elif theta - 2 * step >= -_SLACK:
        pts = (theta - 2 * step, theta - step, theta)
    else:
        raise DomainError(f"step {step} too large for a stencil inside [0, pi/2]")
    return tuple(min(max(p, 0.0), HALF_PI) for p in pts)


def h_second_fd(theta: float, samples: int, step: float, rng, return_se: bool = False):
    """Second finite difference of ``h`` with common random numbers.

    Central stencil in the interior; one-sided (forward at 0, backward at
    pi/2) where the central one would leave ``[0, pi/2]``. All stencil
    points use the same draws, so the first-order noise cancels.
    """
    t = _check_angle(theta)
    p0, p1, p2 = _stencil(t, float(step))

    def fn(a1, a2):
        return (_h_samples(a1, a2, p0) - 2.0 * _h_samples(a1, a2, p1)
                + _h_samples(a1, a2, p2)) / step**2

    mean, se = _mc(fn, _check_samples(samples), rng)
    if return_se:
        return float(mean[0]), float(se[0])
    return float(mean[0])


@dataclass(frozen=True)
class HTable:
    """Tabulated Monte-Carlo estimates of ``h`` and ``h'`` on an angle grid."""

    thetas: np.ndarray
    h: np.ndarray
    h_se: np.ndarray
    h_prime: np.ndarray
    h_prime_se: np.ndarray
    samples: int
    seed: tuple = field(default=())

    COLUMNS = ("theta", "h", "h_se", "h_prime", "h_prime_se", "samples")

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), dtype=float) for k in
                  ("thetas", "h", "h_se", "h_prime", "h_prime_se")]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1 or arrays[0].size < 1:
            raise ValueError("table columns must be 1-D arrays of equal length")
        t = arrays[0]
        if np.any(np.diff(t) <= 0):
            raise ValueError("theta grid must be strictly increasing")
        if t[0] < -_SLACK or t[-1] > HALF_PI + _SLACK:
            raise DomainError("theta grid must lie within [0, pi/2]")
        for k, a in zip(("thetas", "h", "h_se", "h_prime", "h_prime_se"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, k, a)

    def __len__(self):
        return self.thetas.size

    @property
    def spacing(self) -> float:
        return float(np.max(np.diff(self.thetas))) if len(self) > 1 else math.inf

    def covers(self, theta: float) -> bool:
        return self.thetas[0] - _SLACK <= theta <= self.thetas[-1] + _SLACK

    def interp(self, theta: float) -> tuple[float, float]:
        """Linearly interpolated ``(h, h')`` at ``theta``."""
        if not self.covers(theta):
            raise DomainError(
                f"angle {theta!r} outside table range [{self.thetas[0]}, {self.thetas[-1]}]"
            )
        return (float(np.interp(theta, self.thetas, self.h)),
                float(np.interp(theta, self.thetas, self.h_prime)))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.COLUMNS) + "\n")
        for row in zip(self.thetas, self.h, self.h_se, self.h_prime, self.h_prime_se):
            buf.write(",".join(repr(float(v)) for v in row) + f",{self.samples}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "HTable":
        data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
        return cls(data["theta"], data["h"], data["h_se"], data["h_prime"],
                   data["h_prime_se"], int(data["samples"][0]))


def default_grid(points: int = 64) -> np.ndarray:
    return np.linspace(0.0, HALF_PI, points)


def build_htable(rng: RngStream, thetas=None, samples: int = 10**6, workers: int = 1) -> HTable:
    """Estimate ``h`` and ``h'`` on a grid; point ``i`` uses ``rng.spawn(i)``."""
    thetas = default_grid() if thetas is None else np.asarray(thetas, dtype=float)
    samples = _check_samples(samples)

    def point(i):
        return h_and_prime_mc(thetas[i], samples, rng.spawn(i))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(point, range(thetas.size)))
    else:
        rows = [point(i) for i in range(thetas.size)]
    h, h_se, hp, hp_se = (np.array(c) for c in zip(*rows))
    return HTable(thetas, h, h_se, hp, hp_se, samples, (rng.master_seed,) + rng.key)


def predicted_theta_next(theta: float, table: HTable) -> float:
    """``theta + arctan(h'(theta) / h(theta))``, capped at pi/2.

    Both endpoints are stationary (``h'`` vanishes there by symmetry), so
    0 maps to 0 and pi/2 to pi/2 exactly.
    """
    t = _check_angle(theta)
    if not table.covers(t):
        raise DomainError(f"angle {theta!r} not covered by the table")
    if t == 0.0 or t == HALF_PI:
        return t
    h, hp = table.interp(t)
    return min(t + math.atan(hp / h), HALF_PI)


@dataclass
class GrowthReport:
    """Outcome of the grid check that ``h'`` stays positive on (0, pi/2)."""

    passed: bool
    z: float
    spacing: float
    min_ratio: float
    min_ratio_lower: float
    min_ratio_upper: float
    argmin_ratio: float
    min_h_prime_lower: float
    min_h: float
    min_h_se: float
    argmin_h: float
    appendix_interval: tuple
    min_h_prime_lower_appendix: float

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["appendix_interval"] = list(self.appendix_interval)
        return d


def verify_growth_condition(table: HTable, z: float = 4.0, max_spacing: float = 0.1) -> GrowthReport:
    """Check ``h'(theta) - z * se > 0`` at every interior grid angle.

    Also reports ``min h'(theta) / min(theta, pi/2 - theta)`` with a
    ``z``-standard-error band, the minimum of ``h`` over the grid, and the
    lower bound of ``h'`` restricted to ``(pi/(16 L), pi/2 - 1/(2 L))`` where
    ``L`` bounds the Lipschitz constant of ``h''``.
    """
    if table.spacing > max_spacing + _SLACK:
        raise ConfigError(f"grid spacing {table.spacing:.4g} exceeds {max_spacing}")
    t = table.thetas
    inner = (t > _SLACK) & (t < HALF_PI - _SLACK)
    if not inner.any():
        raise ConfigError("table has no interior grid points")
    ti, hp, se = t[inner], table.h_prime[inner], table.h_prime_se[inner]
    dist = np.minimum(ti, HALF_PI - ti)
    ratio = hp / dist
    lower = (hp - z * se) / dist
    upper = (hp + z * se) / dist
    k = int(np.argmin(ratio))
    j = int(np.argmin(table.h))
    lo, hi = math.pi / (16 * LIPSCHITZ_H2), HALF_PI - 1 / (2 * LIPSCHITZ_H2)
    app = (ti >= lo) & (ti <= hi)
    return GrowthReport(
        passed=bool(np.all(hp - z * se > 0)),
        z=z,
        spacing=table.spacing,
        min_ratio=float(ratio[k]),
        min_ratio_lower=float(lower.min()),
        min_ratio_upper=float(upper.min()),
        argmin_ratio=float(ti[k]),
        min_h_prime_lower=float((hp - z * se).min()),
        min_h=float(table.h[j]),
        min_h_se=float(table.h_se[j]),
        argmin_h=float(t[j]),
        appendix_interval=(lo, hi),
        min_h_prime_lower_appendix=float((hp - z * se)[app].min()) if app.any() else math.nan,
    )
