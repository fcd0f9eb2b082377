"""Scalar functions and their derivatives: value, gradient, HVP, dense Hessian."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dual import Dual
from .errors import CapExceededError, DimensionError, NonFiniteError
from .record import ComputationRecord, Var

DENSE_CAP = 4096
HVP_CHUNK = 64


@dataclass(frozen=True)
class ScalarFunction:
    """A pure map from a flat vector of length ``dimension`` to one scalar.

    ``build`` receives the leaf :class:`Var` (shape ``(dimension,)``) and
    returns a scalar :class:`Var` composed from :mod:`hesskit.autodiff.ops`.
    """

    build: Callable[[Var], Var]
    dimension: int
    name: str = ""

    def __call__(self, w) -> float:
        return evaluate(self, w)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("HESSKIT_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def _check_vec(f: ScalarFunction, w, what="w") -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != f.dimension:
        raise DimensionError(
            f"{what} has shape {w.shape}, expected ({f.dimension},)")
    if not np.all(np.isfinite(w)):
        raise NonFiniteError(f"{what} contains non-finite entries")
    return w


def trace(f: ScalarFunction, leaf_value) -> tuple[ComputationRecord, Var]:
    """Record ``f`` at ``leaf_value`` (an array or a :class:`Dual`)."""
    record = ComputationRecord()
    x = record.leaf(leaf_value)
    out = f.build(x)
    if not isinstance(out, Var) or out.record is not record:
        raise TypeError(f"function {f.name!r} did not build on its input")
    if out.shape != ():
        raise DimensionError(f"function {f.name!r} returned shape {out.shape}, expected scalar")
    record.check_finite(out)
    return record, out


def evaluate(f: ScalarFunction, w) -> float:
    w = _check_vec(f, w)
    _, out = trace(f, w)
    return float(out.value)


def value_and_gradient(f: ScalarFunction, w) -> tuple[float, np.ndarray]:
    w = _check_vec(f, w)
    record, out = trace(f, w)
    g = record.backward(out)
    if g is None:
        g = np.zeros_like(w)
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite gradient")
    return float(out.value), g


def gradient(f: ScalarFunction, w) -> np.ndarray:
    return value_and_gradient(f, w)[1]


def hvp(f: ScalarFunction, w, v) -> np.ndarray:
    """Hessian-vector product(s), forward-over-reverse.

    ``v`` is a vector of length ``d`` or a ``(P, d)`` block of directions; the
    result has the same shape. The Hessian is never materialized. Blocks
    larger than ``HVP_CHUNK`` directions are processed ``HVP_CHUNK`` at a
    time, which bounds memory to one chunk of tangents.
    """
    w = _check_vec(f, w)
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    V = v[None, :] if single else v
    if V.ndim != 2 or V.shape[1] != f.dimension:
        raise DimensionError(f"v has shape {v.shape}, expected ({f.dimension},) or (P, {f.dimension})")
    if not np.all(np.isfinite(V)):
        raise NonFiniteError("v contains non-finite entries")
    if V.shape[0] > HVP_CHUNK:
        return np.concatenate([_hvp_block(f, w, V[i:i + HVP_CHUNK])
                               for i in range(0, V.shape[0], HVP_CHUNK)], axis=0)
    hv = _hvp_block(f, w, V)
    return hv[0] if single else hv


def _hvp_block(f: ScalarFunction, w: np.ndarray, V: np.ndarray) -> np.ndarray:
    record, out = trace(f, Dual(w, V))
    g = record.backward(out)
    if isinstance(g, Dual):
        hv = np.array(g.tangent)
    else:
        # gradient independent of w along every direction
        hv = np.zeros_like(V)
    if not np.all(np.isfinite(hv)):
        raise NonFiniteError("non-finite Hessian-vector product")
    return hv


def hvp_columns(f: ScalarFunction, w, columns, chunk: int = HVP_CHUNK,
                threads: int | None = None) -> np.ndarray:
    """``H[:, columns]`` as a ``(d, len(columns))`` array, computed from unit-vector HVPs.

    Columns are processed in fixed-size chunks; the split does not depend on
    the thread count, so results are identical for any ``threads``.
    """
    w = _check_vec(f, w)
    columns = np.asarray(columns, dtype=np.intp)
    d = f.dimension
    chunks = [columns[i:i + chunk] for i in range(0, len(columns), chunk)]

    def run(cols):
        E = np.zeros((len(cols), d))
        E[np.arange(len(cols)), cols] = 1.0
        return hvp(f, w, E)

    n = min(resolve_threads(threads), len(chunks)) or 1
    if n == 1:
        blocks = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            blocks = list(pool.map(run, chunks))
    if not blocks:
        return np.zeros((d, 0))
    return np.concatenate(blocks, axis=0).T


def exact_hessian(f: ScalarFunction, w, cap: int = DENSE_CAP, chunk: int = HVP_CHUNK,
                  threads: int | None = None) -> np.ndarray:
    """Dense Hessian assembled from ``d`` unit-vector HVPs (cost ~ d gradient evaluations).

    The raw result is returned; no symmetrization is applied.
    """
    if f.dimension > cap:
        raise CapExceededError(
            f"dense Hessian of dimension {f.dimension} exceeds cap {cap}")
    return hvp_columns(f, w, np.arange(f.dimension), chunk=chunk, threads=threads)
