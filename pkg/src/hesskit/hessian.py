"""Curvature over restricted losses: exact blocks, finite differences, Hutchinson diagonals, metrics."""

from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import (
    DENSE_CAP,
    NonFiniteError,
    ScalarFunction,
    evaluate,
    exact_hessian,
    hvp,
    resolve_threads,
)
from .model.subsets import IndexMap

EPS = np.finfo(np.float64).eps
PROBE_CHUNK = 64


@dataclass
class HessianBlock:
    H: np.ndarray
    index_map: IndexMap | None = None
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.H.shape[0]

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.H - self.H.T))) if self.H.size else 0.0

    def is_symmetric(self, rtol: float = 1e-9) -> bool:
        scale = 1.0 + (float(np.max(np.abs(self.H))) if self.H.size else 0.0)
        return self.asymmetry() < rtol * scale

    def diagonal(self) -> np.ndarray:
        return np.diag(self.H).copy()


def exact_block(f: ScalarFunction, u0, index_map: IndexMap | None = None, cap: int = DENSE_CAP,
                threads: int | None = None, meta: dict | None = None) -> HessianBlock:
    """Dense Hessian of ``f`` at ``u0``; columns are independent HVPs."""
    start = time.perf_counter()
    H = exact_hessian(f, u0, cap=cap, threads=threads)
    if not np.all(np.isfinite(H)):
        raise NonFiniteError("non-finite Hessian entries")
    info = dict(meta or {})
    info.setdefault("function", f.name)
    info["wall_time"] = time.perf_counter() - start
    return HessianBlock(H, index_map, info)


def default_fd_steps(u0) -> np.ndarray:
    """Per-coordinate step ``eps**(1/4) * (1 + |u0_i|)``."""
    return EPS ** 0.25 * (1.0 + np.abs(np.asarray(u0, dtype=np.float64)))


def fd_hessian(f: Callable, u0, h=None) -> np.ndarray:
    """Four-point forward-difference Hessian.

    ``H_ij = [f(u + h_i e_i + h_j e_j) - f(u + h_i e_i) - f(u + h_j e_j) + f(u)] / (h_i h_j)``

    ``h`` is a scalar, a per-coordinate vector, or None for :func:`default_fd_steps`.
    Uses ``m(m+3)/2 + 1`` evaluations; the result is symmetric by construction.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    m = u0.size
    if h is None:
        steps = default_fd_steps(u0)
    else:
        steps = np.broadcast_to(np.asarray(h, dtype=np.float64), (m,)).copy()
    if np.any(steps <= 0) or not np.all(np.isfinite(steps)):
        raise ValueError("finite-difference steps must be positive and finite")
    fn = (lambda w: evaluate(f, w)) if isinstance(f, ScalarFunction) else f

    def call(w):
        value = float(fn(w))
        if not np.isfinite(value):
            raise NonFiniteError("non-finite function value during finite differencing")
        return value

    f0 = call(u0)
    single = np.empty(m)
    for i in range(m):
        w = u0.copy()
        w[i] += steps[i]
        single[i] = call(w)
    H = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            w = u0.copy()
            w[i] += steps[i]
            w[j] += steps[j]
            H[i, j] = (call(w) - single[i] - single[j] + f0) / (steps[i] * steps[j])
            H[j, i] = H[i, j]
    return H


def relative_frobenius_error(approx, reference) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    ref = np.linalg.norm(reference)
    if ref == 0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm(np.asarray(approx) - reference) / ref)


def fd_step_sweep(f: Callable, u0, reference, steps) -> list[tuple[float, float]]:
    """``(h, relative Frobenius error of fd_hessian(h) vs reference)`` for each h."""
    return [(float(h), relative_frobenius_error(fd_hessian(f, u0, h), reference)) for h in steps]


def log_grid(h_min: float, h_max: float, n: int) -> np.ndarray:
    """Log-spaced grid from ``h_max`` down to ``h_min``."""
    if not (0 < h_min <= h_max) or n < 1:
        raise ValueError("need 0 < h_min <= h_max and at least one step")
    if n == 1:
        return np.array([h_max])
    return np.logspace(np.log10(h_max), np.log10(h_min), n)


# Hutchinson diagonal estimation ------------------------------------------------

class ProbeDistribution(str, enum.Enum):
    RADEMACHER = "rademacher"
    GAUSSIAN = "gaussian"


def probe(dist: ProbeDistribution | str, m: int, seed: int, index: int) -> np.ndarray:
    """Probe ``index`` of the stream ``seed``; independent of how probes are batched."""
    dist = ProbeDistribution(dist)
    rng = np.random.default_rng([seed, index])
    if dist is ProbeDistribution.RADEMACHER:
        return rng.integers(0, 2, size=m).astype(np.float64) * 2.0 - 1.0
    return rng.standard_normal(m)


def probes(dist, m: int, seed: int, start: int, stop: int) -> np.ndarray:
    return np.stack([probe(dist, m, seed, k) for k in range(start, stop)]) if stop > start \
        else np.zeros((0, m))


def partial_relative_l2_loss(est, truth, index_set=None) -> float:
    """``||(est - truth)[S]|| / ||truth[S]||`` over the coordinates ``S``."""
    est = np.asarray(est, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if index_set is not None:
        idx = np.asarray(index_set)
        if idx.size == 0:
            raise ValueError("empty index set")
        est, truth = est[idx], truth[idx]
    denom = np.linalg.norm(truth)
    if denom == 0:
        raise ValueError("truth slice has zero norm")
    return float(np.linalg.norm(est - truth) / denom)


def relative_l2_difference(prev, nxt) -> float:
    """``||next - prev|| / ||next||``."""
    prev = np.asarray(prev, dtype=np.float64).reshape(-1)
    nxt = np.asarray(nxt, dtype=np.float64).reshape(-1)
    denom = np.linalg.norm(nxt)
    if denom == 0:
        raise ValueError("next estimate has zero norm")
    return float(np.linalg.norm(nxt - prev) / denom)


@dataclass
class TruthSlice:
    """Exact diagonal values at a set of coordinates of the estimated vector."""

    indices: np.ndarray
    values: np.ndarray


@dataclass
class DiagEstimate:
    running_mean: np.ndarray
    K_done: int
    seed: int
    dist: ProbeDistribution
    rel_diff: list = field(default_factory=list)
    partial_loss: list | None = None

    def history(self) -> list[tuple]:
        rows = []
        for k in range(self.K_done):
            row = (k + 1, self.rel_diff[k])
            if self.partial_loss is not None:
                row += (self.partial_loss[k],)
            rows.append(row)
        return rows


def hutchinson_diag_matvec(matvec: Callable[[np.ndarray], np.ndarray], m: int, K: int,
                           dist=ProbeDistribution.RADEMACHER, seed: int = 0,
                           truth_slice: TruthSlice | None = None, chunk: int = PROBE_CHUNK,
                           threads: int | None = None) -> DiagEstimate:
    """Hutchinson estimate of ``diag(H)`` given ``matvec(V) = V @ H`` for a ``(P, m)`` probe block.

    Probe ``k`` comes from the substream ``(seed, k)`` and products are summed
    in probe order, so the estimate does not depend on ``chunk`` or ``threads``.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    dist = ProbeDistribution(dist)
    bounds = [(a, min(a + chunk, K)) for a in range(0, K, chunk)]

    def run(bound):
        V = probes(dist, m, seed, *bound)
        HV = np.asarray(matvec(V), dtype=np.float64)
        if not np.all(np.isfinite(HV)):
            raise NonFiniteError("non-finite Hessian-vector product")
        return V * HV

    n = min(resolve_threads(threads), len(bounds))
    total = np.zeros(m)
    prev = np.zeros(m)
    est = DiagEstimate(prev, 0, seed, dist, [], [] if truth_slice is not None else None)

    def consume(samples):
        nonlocal total, prev
        for z in samples:
            total = total + z
            est.K_done += 1
            mean = total / est.K_done
            est.rel_diff.append(relative_l2_difference(prev, mean)
                                if np.linalg.norm(mean) > 0 else float("nan"))
            if truth_slice is not None:
                est.partial_loss.append(partial_relative_l2_loss(
                    mean[truth_slice.indices], truth_slice.values))
            prev = mean

    if n <= 1:
        for b in bounds:
            consume(run(b))
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            for samples in pool.map(run, bounds):
                consume(samples)
    est.running_mean = prev
    return est


def hutchinson_diag(f: ScalarFunction, u0, K: int, dist=ProbeDistribution.RADEMACHER,
                    seed: int = 0, truth_slice: TruthSlice | None = None,
                    chunk: int = PROBE_CHUNK, threads: int | None = None) -> DiagEstimate:
    """Hutchinson diagonal of the Hessian of ``f`` at ``u0`` using engine HVPs."""
    u0 = np.asarray(u0, dtype=np.float64)
    return hutchinson_diag_matvec(lambda V: hvp(f, u0, V), f.dimension, K, dist, seed,
                                  truth_slice, chunk, threads)


def batch_relative_loss(H_b, H_ref) -> float:
    """``||H_b - H_ref|| / ||H_ref||`` with entrywise-flattened norms."""
    return relative_frobenius_error(H_b, H_ref)


def batch_relative_difference(H_prev, H_next) -> float:
    """``||H_next - H_prev|| / ||H_next||`` between consecutive batch sizes."""
    return relative_l2_difference(H_prev, H_next)
