"""Large-batch curvature by summing per-chunk results of the additive loss.

The additive loss is a plain sum of per-sample terms, so its gradient,
HVPs and Hessian are sums over any partition of the batch. Only one chunk is
ever recorded at a time, which bounds engine memory by the chunk size.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import DENSE_CAP, hvp, resolve_threads
from .hessian import (
    HessianBlock,
    batch_relative_difference,
    batch_relative_loss,
    exact_block,
)
from .model import ParamStore, SubsetSpec, TokenBatch, restricted_loss, spec_to_dict


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class AccumulationPlan:
    micro_batch_size: int = 1
    parallel: bool = False
    threads: int | None = None

    def __post_init__(self):
        if self.micro_batch_size < 1:
            raise PlanError("micro_batch_size must be at least 1")

    def chunks(self, b: int) -> list[int]:
        """Sizes of consecutive chunks covering ``b`` samples exactly."""
        if b < 1:
            raise PlanError("batch must contain at least one sample")
        full, rest = divmod(b, self.micro_batch_size)
        return [self.micro_batch_size] * full + ([rest] if rest else [])

    def _workers(self, n_chunks: int) -> int:
        return min(resolve_threads(self.threads), n_chunks) if self.parallel else 1


def _map_chunks(plan: AccumulationPlan, fn, pieces):
    n = plan._workers(len(pieces))
    if n <= 1:
        return [fn(p) for p in pieces]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, pieces))


def _fixed_order_sum(parts):
    total = parts[0].copy()
    for p in parts[1:]:
        total += p
    return total


def accumulate_hessian(spec: SubsetSpec, params: ParamStore, X: TokenBatch,
                       plan: AccumulationPlan = AccumulationPlan(),
                       cap: int = DENSE_CAP, threads: int | None = None) -> HessianBlock:
    """Hessian of the additive loss on ``X`` as a sum of per-chunk exact blocks.

    ``H`` holds the sum; ``mean_block()`` of the result divides by ``b``.
    Chunks are reduced in batch order whatever the completion order.
    """
    start = time.perf_counter()
    pieces = X.split(plan.chunks(X.size))
    # nested thread pools only when chunks themselves run sequentially
    inner = threads if not plan.parallel else 1

    def one(chunk):
        f, index_map = restricted_loss(params, spec, chunk)
        return exact_block(f, index_map.gather(params), index_map, cap=cap, threads=inner)

    blocks = _map_chunks(plan, one, pieces)
    H = _fixed_order_sum([blk.H for blk in blocks])
    meta = {
        "spec": spec_to_dict(spec),
        "batch_size": X.size,
        "micro_batch_size": plan.micro_batch_size,
        "n_chunks": len(pieces),
        "reduction": "sum",
        "wall_time": time.perf_counter() - start,
    }
    return HessianBlock(H, blocks[0].index_map, meta)


def mean_block(block: HessianBlock) -> HessianBlock:
    """Mean-loss view of a summed block: ``H / b``."""
    b = block.meta["batch_size"]
    meta = dict(block.meta, reduction="mean")
    return HessianBlock(block.H / b, block.index_map, meta)


def accumulate_hvp(spec: SubsetSpec, params: ParamStore, X: TokenBatch, v,
                   plan: AccumulationPlan = AccumulationPlan()) -> np.ndarray:
    """Sum over chunks of per-chunk HVPs; ``v`` may be a vector or a ``(P, m)`` block."""
    pieces = X.split(plan.chunks(X.size))

    def one(chunk):
        f, index_map = restricted_loss(params, spec, chunk)
        return hvp(f, index_map.gather(params), v)

    return _fixed_order_sum(_map_chunks(plan, one, pieces))


def hvp_operator(spec: SubsetSpec, params: ParamStore, X: TokenBatch,
                 plan: AccumulationPlan = AccumulationPlan()):
    """``V -> V @ H`` for probe blocks, accumulated over chunks of ``X``."""
    return lambda V: accumulate_hvp(spec, params, X, V, plan)


@dataclass(frozen=True)
class SweepRow:
    b: int
    rel_loss: float
    rel_diff: float | None


def batch_sweep(spec: SubsetSpec, params: ParamStore, corpus: TokenBatch, b_values,
                plan: AccumulationPlan = AccumulationPlan(), cap: int = DENSE_CAP,
                threads: int | None = None) -> list[SweepRow]:
    """Mean Hessians over the first ``b`` samples for each ``b`` versus the largest ``b``.

    ``rel_loss`` compares with the largest-``b`` reference; ``rel_diff`` compares
    with the previous ``b`` in the list (None for the first row). Per-sample
    blocks are computed once and prefix-summed.
    """
    b_values = [int(b) for b in b_values]
    if not b_values:
        raise PlanError("b_values is empty")
    if any(b < 1 for b in b_values) or any(a >= b for a, b in zip(b_values, b_values[1:])):
        raise PlanError("b_values must be positive and strictly ascending")
    b_max = b_values[-1]
    if b_max > corpus.size:
        raise PlanError(f"corpus has {corpus.size} samples, sweep needs {b_max}")

    sums, prev_b, running = {}, 0, None
    for b in b_values:
        part = accumulate_hessian(spec, params, corpus.rows(slice(prev_b, b)), plan,
                                  cap=cap, threads=threads).H
        running = part if running is None else running + part
        sums[b] = running.copy()
        prev_b = b
    means = {b: sums[b] / b for b in b_values}
    ref = means[b_max]
    rows, last = [], None
    for b in b_values:
        diff = None if last is None else batch_relative_difference(means[last], means[b])
        rows.append(SweepRow(b, batch_relative_loss(means[b], ref), diff))
        last = b
    return rows
