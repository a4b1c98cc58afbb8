"""Batched alternating minimization from a random start, plus the plain baseline."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .altmin import altmin_step
from .errors import ConfigError, DegenerateInputError, DimensionError, PartitionError
from .measurement import SensingEnsemble, _generator, as_signal, random_unit
from .metrics import dist_phase, residual, theta

__all__ = [
    "BatchPartition",
    "SolverConfig",
    "TraceRecord",
    "RunResult",
    "partition",
    "run_batched",
    "run_plain",
    "suggested_block_count",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BatchPartition:
    """Disjoint blocks of row indices covering ``0..m-1``."""

    m: int
    blocks: tuple

    @property
    def sizes(self) -> tuple:
        return tuple(len(b) for b in self.blocks)

    def __len__(self):
        return len(self.blocks)

    def check_min_size(self, n: int):
        small = min(self.sizes)
        if small < n:
            raise PartitionError(
                f"smallest block has {small} rows, fewer than the dimension n={n}"
            )


def partition(m: int, B: int, rng=None) -> BatchPartition:
    """Split ``m`` rows into ``B`` contiguous blocks.

    The first ``m mod B`` blocks get ``ceil(m/B)`` rows and the rest
    ``floor(m/B)``. If ``rng`` is given the rows are permuted first, for data
    whose rows are not exchangeable.
    """
    if int(B) != B or int(m) != m or B < 1 or B > m:
        raise PartitionError(f"need 1 <= B <= m, got B={B}, m={m}")
    m, B = int(m), int(B)
    q, r = divmod(m, B)
    bounds = np.cumsum([0] + [q + 1] * r + [q] * (B - r))
    order = np.arange(m)
    if rng is not None:
        order = _generator(rng).permutation(m)
    blocks = tuple(order[bounds[i]:bounds[i + 1]] for i in range(B))
    return BatchPartition(m, blocks)


def suggested_block_count(n: int, c0: float = 1.0) -> int:
    """``max(1, round(c0 * ln n))``, the logarithmic block count."""
    if n < 2 or c0 <= 0:
        raise ValueError(f"need n >= 2 and c0 > 0, got n={n}, c0={c0}")
    return max(1, int(math.floor(c0 * math.log(n) + 0.5)))


@dataclass(frozen=True)
class SolverConfig:
    B: int = 1
    max_iters: int = 500
    residual_tol: float = 1e-8
    record_trace: bool = False
    shuffle: bool = False

    def __post_init__(self):
        if int(self.B) != self.B or self.B < 1:
            raise ConfigError(f"B must be a positive integer, got {self.B!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters!r}")
        if not self.residual_tol > 0:
            raise ConfigError(f"residual_tol must be positive, got {self.residual_tol!r}")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    block: int
    residual: float
    theta: Optional[float] = None
    dist: Optional[float] = None


@dataclass
class RunResult:
    estimate: np.ndarray
    converged: bool
    iterations: int
    final_residual: float
    trace: Optional[list] = field(default=None, repr=False)


def run_batched(
    A: SensingEnsemble,
    y,
    cfg: SolverConfig,
    rng,
    truth=None,
    x0=None,
) -> RunResult:
    """Cyclic block alternating minimization.

    Step ``k`` applies the update of block ``k mod B`` to the current
    iterate. Iteration stops once the full-data relative residual
    ``|| |Ax| - y || / ||y||`` drops to ``cfg.residual_tol`` or after
    ``cfg.max_iters`` single-block steps.

    Args:
        A: full sensing ensemble.
        y: observed amplitudes, length ``A.m``.
        cfg: solver settings.
        rng: :class:`RngStream` for the random unit start (and the optional
            row shuffle).
        truth: ground-truth signal; only used to add ``theta`` and the
            phase-invariant distance to the trace.
        x0: explicit starting point, replaces the random start.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (A.m,):
        raise DimensionError(f"y has shape {y.shape}, ensemble has m={A.m}")
    if not np.any(y):
        raise DegenerateInputError("observations are identically zero")
    if truth is not None:
        truth = as_signal(truth, "truth")

    if cfg.B == 1:
        blocks = [(A, y)]
    else:
        part = partition(A.m, cfg.B, rng.spawn(1) if cfg.shuffle else None)
        part.check_min_size(A.n)
        blocks = [(A.rows(idx), y[idx]) for idx in part.blocks]
    if A.m / cfg.B < 4 * A.n:
        log.warning(
            "block size m/B = %.1f is below 4n = %d; per-step improvement is unlikely",
            A.m / cfg.B, 4 * A.n,
        )

    x = random_unit(A.n, rng) if x0 is None else as_signal(x0, "x0").copy()
    trace = [] if cfg.record_trace else None
    res = residual(A, y, x)
    converged = False
    k = 0
    while k < cfg.max_iters:
        b = k % len(blocks)
        Ab, yb = blocks[b]
        x = altmin_step(Ab, yb, x)
        k += 1
        res = residual(A, y, x)
        if trace is not None:
            trace.append(TraceRecord(
                iteration=k,
                block=b,
                residual=res,
                theta=None if truth is None else theta(x, truth),
                dist=None if truth is None else dist_phase(x, truth),
            ))
        if res <= cfg.residual_tol:
            converged = True
            break
    return RunResult(x, converged, k, res, trace)


def run_plain(A: SensingEnsemble, y, cfg: SolverConfig, rng, truth=None, x0=None) -> RunResult:
    """Standard (non-batched) alternating minimization over all rows."""
    if cfg.B != 1:
        cfg = SolverConfig(1, cfg.max_iters, cfg.residual_tol, cfg.record_trace, False)
    return run_batched(A, y, cfg, rng, truth=truth, x0=x0)
