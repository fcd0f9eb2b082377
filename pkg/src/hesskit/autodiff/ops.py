"""Primitive operations of the engine.

Each primitive carries a forward rule on plain arrays, a hand-derived JVP
(tangent propagation, used when inputs are :class:`~.dual.Dual`), and a VJP
written with the dual-aware helpers so that differentiating it in forward
mode gives second-order information.

The public functions accept :class:`~.record.Var` handles or constants.
With only constant inputs they evaluate eagerly and return plain arrays, so
model code runs unchanged with or without a record.
"""

from __future__ import annotations

import numpy as np

from . import dual as D
from .dual import Dual, _full, _lift, primal
from .record import Var


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    gshape = primal(g).shape
    if gshape == tuple(shape):
        return g
    lead = len(gshape) - len(shape)
    if lead > 0:
        g = D.sum_(g, axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and primal(g).shape[i] != 1)
    if axes:
        g = D.sum_(g, axis=axes, keepdims=True)
    return g


class Primitive:
    name = "primitive"

    def forward(self, xs, attrs):
        raise NotImplementedError

    def jvp(self, xs, dxs, out, attrs):
        raise NotImplementedError

    def vjp(self, vals, out, g, needs, attrs):
        raise NotImplementedError

    def evaluate(self, vals, attrs):
        xs = [primal(v) for v in vals]
        out = self.forward(xs, attrs)
        dxs = [v.tangent if isinstance(v, Dual) else None for v in vals]
        if all(d is None for d in dxs):
            return out
        return Dual(out, self.jvp(xs, dxs, out, attrs))

    def __repr__(self):
        return f"<primitive {self.name}>"


class Add(Primitive):
    name = "add"

    def forward(self, xs, attrs):
        return np.add(xs[0], xs[1])

    def jvp(self, xs, dxs, out, attrs):
        t = 0.0
        for d in dxs:
            if d is not None:
                t = t + _lift(d, out.ndim)
        return _full(t, out.shape)

    def vjp(self, vals, out, g, needs, attrs):
        return [unbroadcast(g, np.shape(primal(v))) if n else None
                for v, n in zip(vals, needs)]


class Sub(Primitive):
    name = "sub"

    def forward(self, xs, attrs):
        return np.subtract(xs[0], xs[1])

    def jvp(self, xs, dxs, out, attrs):
        a, b = dxs
        t = 0.0
        if a is not None:
            t = _lift(a, out.ndim)
        if b is not None:
            t = t - _lift(b, out.ndim)
        return _full(t, out.shape)

    def vjp(self, vals, out, g, needs, attrs):
        a, b = vals
        return [unbroadcast(g, np.shape(primal(a))) if needs[0] else None,
                unbroadcast(-g, np.shape(primal(b))) if needs[1] else None]


class Mul(Primitive):
    name = "mul"

    def forward(self, xs, attrs):
        return np.multiply(xs[0], xs[1])

    def jvp(self, xs, dxs, out, attrs):
        a, b = xs
        da, db = dxs
        t = 0.0
        if da is not None:
            t = _lift(da, out.ndim) * b
        if db is not None:
            t = t + a * _lift(db, out.ndim)
        return _full(t, out.shape)

    def vjp(self, vals, out, g, needs, attrs):
        a, b = vals
        return [unbroadcast(g * b, np.shape(primal(a))) if needs[0] else None,
                unbroadcast(g * a, np.shape(primal(b))) if needs[1] else None]


class MatMul(Primitive):
    """Batched matrix product; both operands must have at least two axes."""

    name = "matmul"

    def forward(self, xs, attrs):
        a, b = xs
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands need at least two axes")
        return a @ b

    def jvp(self, xs, dxs, out, attrs):
        a, b = xs
        da, db = dxs
        t = 0.0
        if da is not None:
            t = _lift(da, out.ndim) @ b
        if db is not None:
            t = t + a @ _lift(db, out.ndim)
        return _full(t, out.shape)

    def vjp(self, vals, out, g, needs, attrs):
        a, b = vals
        sa, sb = np.shape(primal(a)), np.shape(primal(b))
        ga = gb = None
        if needs[0]:
            ga = unbroadcast(g @ D.swap_last(b), sa)
        if needs[1]:
            if len(sb) == 2 and len(sa) > 2:
                # weight shared across leading axes: fold them into rows
                a2 = D.reshape(a, (-1, sa[-1]))
                g2 = D.reshape(g, (-1, sb[-1]))
                gb = D.swap_last(a2) @ g2
            else:
                gb = unbroadcast(D.swap_last(a) @ g, sb)
        return [ga, gb]


class Softmax(Primitive):
    """Softmax over the last axis; entries where ``mask`` is False get probability 0."""

    name = "softmax"

    def forward(self, xs, attrs):
        x = xs[0]
        mask = attrs.get("mask")
        if mask is not None:
            x = np.where(mask, x, -np.inf)
        e = np.exp(x - np.max(x, axis=-1, keepdims=True))
        return e / np.sum(e, axis=-1, keepdims=True)

    def jvp(self, xs, dxs, out, attrs):
        t = dxs[0]
        return out * (t - np.sum(out * t, axis=-1, keepdims=True))

    def vjp(self, vals, out, g, needs, attrs):
        return [out * (g - D.sum_(g * out, axis=-1, keepdims=True))]


class LayerNorm(Primitive):
    """Normalization over the last axis with constant gain and bias."""

    name = "layer_norm"

    @staticmethod
    def _stats(x, eps):
        n = primal(x).shape[-1]
        xc = x - D.sum_(x, axis=-1, keepdims=True) * (1.0 / n)
        var = D.sum_(xc * xc, axis=-1, keepdims=True) * (1.0 / n)
        r = D.rsqrt(var + eps)
        return xc * r, r

    def forward(self, xs, attrs):
        xhat, _ = self._stats(xs[0], attrs["eps"])
        return xhat * attrs["gain"] + attrs["bias"]

    def jvp(self, xs, dxs, out, attrs):
        xhat, r = self._stats(xs[0], attrs["eps"])
        t = dxs[0]
        tc = t - np.mean(t, axis=-1, keepdims=True)
        th = r * (tc - xhat * np.mean(xhat * tc, axis=-1, keepdims=True))
        return th * attrs["gain"]

    def vjp(self, vals, out, g, needs, attrs):
        x = vals[0]
        n = primal(x).shape[-1]
        xhat, r = self._stats(x, attrs["eps"])
        gh = g * attrs["gain"]
        mg = D.sum_(gh, axis=-1, keepdims=True) * (1.0 / n)
        mgx = D.sum_(gh * xhat, axis=-1, keepdims=True) * (1.0 / n)
        return [r * (gh - mg - xhat * mgx)]


class Gelu(Primitive):
    name = "gelu"

    def forward(self, xs, attrs):
        x = xs[0]
        return x * D.normal_cdf(x)

    def jvp(self, xs, dxs, out, attrs):
        return dxs[0] * D.gelu_d1(xs[0])

    def vjp(self, vals, out, g, needs, attrs):
        return [g * D.gelu_d1(vals[0])]


class Relu(Primitive):
    name = "relu"

    def forward(self, xs, attrs):
        return np.maximum(xs[0], 0.0)

    def jvp(self, xs, dxs, out, attrs):
        return dxs[0] * D.relu_d1(xs[0])

    def vjp(self, vals, out, g, needs, attrs):
        return [g * D.relu_d1(vals[0])]


class LogSumExp(Primitive):
    """Log-sum-exp over the last axis (axis removed)."""

    name = "logsumexp"

    def forward(self, xs, attrs):
        x = xs[0]
        m = np.max(x, axis=-1, keepdims=True)
        return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True)))[..., 0]

    def jvp(self, xs, dxs, out, attrs):
        p = np.exp(xs[0] - out[..., None])
        return np.sum(p * dxs[0], axis=-1)

    def vjp(self, vals, out, g, needs, attrs):
        x = vals[0]
        shape = primal(out).shape + (1,)
        p = D.exp(x - D.reshape(out, shape))
        return [D.reshape(g, shape) * p]


class TakeLast(Primitive):
    """Select one entry per row along the last axis."""

    name = "take_last"

    def forward(self, xs, attrs):
        return D.take_last(xs[0], attrs["idx"])

    def jvp(self, xs, dxs, out, attrs):
        return D.take_last(Dual(xs[0], dxs[0]), attrs["idx"]).tangent

    def vjp(self, vals, out, g, needs, attrs):
        return [D.put_last(g, attrs["idx"], primal(vals[0]).shape[-1])]


class Take(Primitive):
    """Gather entries of the flattened input."""

    name = "take"

    def forward(self, xs, attrs):
        return np.reshape(xs[0], -1)[attrs["idx"]]

    def jvp(self, xs, dxs, out, attrs):
        return dxs[0].reshape(dxs[0].shape[0], -1)[:, attrs["idx"]]

    def vjp(self, vals, out, g, needs, attrs):
        shape = primal(vals[0]).shape
        flat = D.scatter_flat(g, attrs["idx"], int(np.prod(shape)), accumulate=True)
        return [D.reshape(flat, shape)]


class Scatter(Primitive):
    """Write selected entries of a vector into a copy of a constant array.

    ``out.flat[flat_pos] = u[u_pos]``; everything else keeps ``base``.
    """

    name = "scatter"

    def forward(self, xs, attrs):
        base = attrs["base"]
        out = np.array(base, dtype=np.float64, copy=True).reshape(-1)
        out[attrs["flat_pos"]] = xs[0][attrs["u_pos"]]
        return out.reshape(base.shape)

    def jvp(self, xs, dxs, out, attrs):
        du = dxs[0]
        t = np.zeros((du.shape[0], out.size))
        t[:, attrs["flat_pos"]] = du[:, attrs["u_pos"]]
        return t.reshape((du.shape[0],) + out.shape)

    def vjp(self, vals, out, g, needs, attrs):
        picked = D.gather_flat(g, attrs["flat_pos"])
        return [D.scatter_flat(picked, attrs["u_pos"], primal(vals[0]).size)]


class Sum(Primitive):
    name = "sum"

    def forward(self, xs, attrs):
        return np.sum(xs[0], axis=attrs["axis"])

    def jvp(self, xs, dxs, out, attrs):
        axes = D._tangent_axes(attrs["axis"], xs[0].ndim)
        return np.sum(dxs[0], axis=axes)

    def vjp(self, vals, out, g, needs, attrs):
        shape = primal(vals[0]).shape
        axis = attrs["axis"]
        if axis is None:
            kept = (1,) * len(shape)
        else:
            axes = {a % len(shape) for a in ((axis,) if isinstance(axis, int) else axis)}
            kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
        return [D.broadcast_to(D.reshape(g, kept), shape)]


class Reshape(Primitive):
    name = "reshape"

    def forward(self, xs, attrs):
        return np.reshape(xs[0], attrs["shape"])

    def jvp(self, xs, dxs, out, attrs):
        return dxs[0].reshape((dxs[0].shape[0],) + out.shape)

    def vjp(self, vals, out, g, needs, attrs):
        return [D.reshape(g, primal(vals[0]).shape)]


class Transpose(Primitive):
    name = "transpose"

    def forward(self, xs, attrs):
        return np.transpose(xs[0], attrs["axes"])

    def jvp(self, xs, dxs, out, attrs):
        return np.transpose(dxs[0], (0,) + tuple(a + 1 for a in attrs["axes"]))

    def vjp(self, vals, out, g, needs, attrs):
        return [D.transpose(g, tuple(np.argsort(attrs["axes"])))]


ADD, SUB, MUL, MATMUL = Add(), Sub(), Mul(), MatMul()
SOFTMAX, LAYER_NORM, GELU, RELU = Softmax(), LayerNorm(), Gelu(), Relu()
LOGSUMEXP, TAKE_LAST, TAKE, SCATTER = LogSumExp(), TakeLast(), Take(), Scatter()
SUM, RESHAPE, TRANSPOSE = Sum(), Reshape(), Transpose()

PRIMITIVES = (ADD, SUB, MUL, MATMUL, SOFTMAX, LAYER_NORM, GELU, RELU,
              LOGSUMEXP, TAKE_LAST, TAKE, SCATTER, SUM, RESHAPE, TRANSPOSE)


def _apply(prim, inputs, **attrs):
    for x in inputs:
        if isinstance(x, Var):
            return x.record.apply(prim, inputs, attrs)
    return prim.evaluate(list(inputs), attrs)


def add(a, b):
    return _apply(ADD, (a, b))


def sub(a, b):
    return _apply(SUB, (a, b))


def mul(a, b):
    return _apply(MUL, (a, b))


def matmul(a, b):
    return _apply(MATMUL, (a, b))


def softmax(x, mask=None):
    return _apply(SOFTMAX, (x,), mask=mask)


def layer_norm(x, gain, bias, eps=1e-5):
    return _apply(LAYER_NORM, (x,), gain=gain, bias=bias, eps=eps)


def gelu(x):
    return _apply(GELU, (x,))


def relu(x):
    return _apply(RELU, (x,))


def logsumexp(x):
    return _apply(LOGSUMEXP, (x,))


def take_last(x, idx):
    return _apply(TAKE_LAST, (x,), idx=np.asarray(idx, dtype=np.intp))


def take(x, idx):
    return _apply(TAKE, (x,), idx=np.asarray(idx, dtype=np.intp))


def scatter(base, u, flat_pos, u_pos):
    return _apply(SCATTER, (u,), base=base,
                  flat_pos=np.asarray(flat_pos, dtype=np.intp),
                  u_pos=np.asarray(u_pos, dtype=np.intp))


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    return _apply(SUM, (x,), axis=axis)


def reshape(x, shape):
    return _apply(RESHAPE, (x,), shape=tuple(shape))


def transpose(x, axes):
    return _apply(TRANSPOSE, (x,), axes=tuple(axes))
