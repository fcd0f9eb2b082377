"""Computation record: an ordered list of primitive applications with cached values."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dual import Dual, primal
from .errors import NonFiniteError


class EngineStats:
    """Process-wide instrumentation: peak bytes held by any single record."""

    def __init__(self):
        self._lock = threading.Lock()
        self.peak_record_bytes = 0
        self.records = 0

    def observe(self, nbytes: int) -> None:
        with self._lock:
            self.records += 1
            if nbytes > self.peak_record_bytes:
                self.peak_record_bytes = nbytes

    def reset(self) -> None:
        with self._lock:
            self.peak_record_bytes = 0
            self.records = 0


stats = EngineStats()


def _nbytes(value) -> int:
    if isinstance(value, Dual):
        return value.nbytes
    return np.asarray(value).nbytes


@dataclass
class Node:
    prim: Any
    inputs: tuple  # Var for recorded inputs, raw arrays for constants
    attrs: dict
    value: Any


class Var:
    """Handle to a value produced inside a :class:`ComputationRecord`."""

    __slots__ = ("record", "index")
    __array_ufunc__ = None

    def __init__(self, record: "ComputationRecord", index: int):
        self.record = record
        self.index = index

    @property
    def value(self):
        return self.record.nodes[self.index].value

    @property
    def shape(self):
        return primal(self.value).shape

    @property
    def ndim(self):
        return len(self.shape)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis=axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


@dataclass
class ComputationRecord:
    """Topologically ordered primitive applications.

    Index 0 is always the leaf (the flat input vector). Each call that
    differentiates a function owns its record; records are never shared
    between threads.
    """

    nodes: list[Node] = field(default_factory=list)
    nbytes: int = 0

    def leaf(self, value) -> Var:
        if self.nodes:
            raise RuntimeError("leaf must be the first node of a record")
        self._push(Node(None, (), {}, value))
        return Var(self, 0)

    def _push(self, node: Node) -> int:
        self.nodes.append(node)
        self.nbytes += _nbytes(node.value)
        return len(self.nodes) - 1

    def apply(self, prim, inputs, attrs) -> Var:
        vals = [x.value if isinstance(x, Var) else x for x in inputs]
        value = prim.evaluate(vals, attrs)
        return Var(self, self._push(Node(prim, tuple(inputs), attrs, value)))

    def replay(self, leaf_value):
        """Re-run every primitive from a new leaf value; returns the last node's value."""
        values = [leaf_value]
        for node in self.nodes[1:]:
            vals = [values[x.index] if isinstance(x, Var) else x for x in node.inputs]
            values.append(node.prim.evaluate(vals, node.attrs))
        return values[-1]

    def check_finite(self, out: Var) -> None:
        if np.all(np.isfinite(primal(out.value))):
            return
        for i, node in enumerate(self.nodes):
            if not np.all(np.isfinite(primal(node.value))):
                name = "leaf" if node.prim is None else node.prim.name
                raise NonFiniteError(
                    f"non-finite value produced by primitive '{name}' (record node {i})",
                    primitive=name,
                )
        raise NonFiniteError("non-finite output", primitive=None)

    def backward(self, out: Var, seed=1.0):
        """Accumulate cotangents from ``out`` back to the leaf; returns the leaf cotangent or None."""
        grads: dict[int, Any] = {out.index: np.asarray(seed, dtype=np.float64)}
        for i in range(out.index, 0, -1):
            g = grads.pop(i, None)
            if g is None:
                continue
            node = self.nodes[i]
            needs = [isinstance(x, Var) for x in node.inputs]
            vals = [x.value if isinstance(x, Var) else x for x in node.inputs]
            cots = node.prim.vjp(vals, node.value, g, needs, node.attrs)
            for x, c in zip(node.inputs, cots):
                if not isinstance(x, Var) or c is None:
                    continue
                prev = grads.get(x.index)
                grads[x.index] = c if prev is None else prev + c
        stats.observe(self.nbytes)
        return grads.get(0)
