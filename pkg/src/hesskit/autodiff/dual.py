"""Forward-mode dual arrays carrying a batch of tangent directions.

A :class:`Dual` pairs a primal array of shape ``S`` with a tangent array of
shape ``(P,) + S``: ``P`` independent directional derivatives pushed through
the same computation. The reverse-mode rules in :mod:`hesskit.autodiff.ops`
are written against the helpers below, so running them on duals yields the
directional derivative of the gradient, i.e. Hessian-vector products.

Every helper accepts plain ndarrays/scalars as well and then reduces to the
ordinary numpy call.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _lift(t: np.ndarray, ndim: int) -> np.ndarray:
    """Insert singleton axes after the direction axis so ``t`` broadcasts at ``ndim``."""
    extra = ndim - (t.ndim - 1)
    if extra <= 0:
        return t
    return t.reshape((t.shape[0],) + (1,) * extra + t.shape[1:])


def _full(t: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    target = (t.shape[0],) + tuple(shape)
    if t.shape == target:
        return t
    return np.broadcast_to(_lift(t, len(shape)), target)


class Dual:
    """Primal value plus ``P`` tangents. Numpy defers all operators to this class."""

    __slots__ = ("primal", "tangent")
    __array_ufunc__ = None

    def __init__(self, primal, tangent):
        self.primal = np.asarray(primal, dtype=np.float64)
        self.tangent = tangent

    @property
    def shape(self):
        return self.primal.shape

    @property
    def ndim(self):
        return self.primal.ndim

    @property
    def n_dirs(self) -> int:
        return self.tangent.shape[0]

    @property
    def nbytes(self) -> int:
        return self.primal.nbytes + self.tangent.nbytes

    def __repr__(self):
        return f"Dual(shape={self.shape}, n_dirs={self.n_dirs})"

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            p = self.primal + other.primal
            t = _lift(self.tangent, p.ndim) + _lift(other.tangent, p.ndim)
        else:
            p = self.primal + other
            t = self.tangent
        return Dual(p, _full(t, p.shape))

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.primal, -self.tangent)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            p = self.primal * other.primal
            t = (_lift(self.tangent, p.ndim) * other.primal
                 + self.primal * _lift(other.tangent, p.ndim))
        else:
            p = self.primal * other
            t = _lift(self.tangent, p.ndim) * other
        return Dual(p, _full(t, p.shape))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            p = self.primal / other.primal
            t = (_lift(self.tangent, p.ndim)
                 - p * _lift(other.tangent, p.ndim)) / other.primal
        else:
            p = self.primal / other
            t = _lift(self.tangent, p.ndim) / other
        return Dual(p, _full(t, p.shape))

    def __rtruediv__(self, other):
        p = other / self.primal
        t = -_lift(self.tangent, p.ndim) * (p / self.primal)
        return Dual(p, _full(t, p.shape))

    def __matmul__(self, other):
        if isinstance(other, Dual):
            p = self.primal @ other.primal
            t = (_lift(self.tangent, p.ndim) @ other.primal
                 + self.primal @ _lift(other.tangent, p.ndim))
        else:
            p = self.primal @ other
            t = _lift(self.tangent, p.ndim) @ other
        return Dual(p, _full(t, p.shape))

    def __rmatmul__(self, other):
        p = other @ self.primal
        return Dual(p, _full(other @ _lift(self.tangent, p.ndim), p.shape))


# shape-aware helpers usable on ndarrays and duals alike -----------------------

def primal(x):
    return x.primal if isinstance(x, Dual) else x


def _tangent_axes(axis, ndim):
    if axis is None:
        return tuple(range(1, ndim + 1))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim + 1 for a in axis)


def sum_(x, axis=None, keepdims=False):
    if isinstance(x, Dual):
        p = np.sum(x.primal, axis=axis, keepdims=keepdims)
        t = np.sum(x.tangent, axis=_tangent_axes(axis, x.ndim), keepdims=keepdims)
        return Dual(p, t)
    return np.sum(x, axis=axis, keepdims=keepdims)


def reshape(x, shape):
    if isinstance(x, Dual):
        p = x.primal.reshape(shape)
        return Dual(p, x.tangent.reshape((x.n_dirs,) + p.shape))
    return np.reshape(x, shape)


def transpose(x, axes):
    if isinstance(x, Dual):
        return Dual(np.transpose(x.primal, axes),
                    np.transpose(x.tangent, (0,) + tuple(a + 1 for a in axes)))
    return np.transpose(x, axes)


def swap_last(x):
    """Swap the two trailing axes."""
    nd = np.ndim(primal(x))
    axes = list(range(nd))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def broadcast_to(x, shape):
    if isinstance(x, Dual):
        return Dual(np.broadcast_to(x.primal, shape), _full(x.tangent, shape))
    return np.broadcast_to(x, shape)


def exp(x):
    if isinstance(x, Dual):
        p = np.exp(x.primal)
        return Dual(p, x.tangent * p)
    return np.exp(x)


def rsqrt(x):
    """``x ** -0.5``."""
    if isinstance(x, Dual):
        p = 1.0 / np.sqrt(x.primal)
        return Dual(p, x.tangent * (-0.5 * p / x.primal))
    return 1.0 / np.sqrt(x)


def normal_cdf(x):
    return 0.5 * (1.0 + erf(x / _SQRT2))


def normal_pdf(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def gelu_d1(x):
    """Derivative of ``x * Phi(x)``; on duals the tangent uses the second derivative."""
    if isinstance(x, Dual):
        p = x.primal
        pdf = normal_pdf(p)
        return Dual(normal_cdf(p) + p * pdf, x.tangent * (pdf * (2.0 - p * p)))
    return normal_cdf(x) + x * normal_pdf(x)


def relu_d1(x):
    # subgradient 0 at 0; second derivative 0 everywhere
    if isinstance(x, Dual):
        p = (x.primal > 0).astype(np.float64)
        return Dual(p, np.zeros_like(x.tangent))
    return (x > 0).astype(np.float64)


def take_last(x, idx):
    """``out[..., ] = x[..., idx[...]]`` along the last axis; ``idx`` has shape ``x.shape[:-1]``."""
    ix = idx[..., None]
    if isinstance(x, Dual):
        p = np.take_along_axis(x.primal, ix, axis=-1)[..., 0]
        tix = np.broadcast_to(ix, (x.n_dirs,) + ix.shape)
        t = np.take_along_axis(x.tangent, tix, axis=-1)[..., 0]
        return Dual(p, t)
    return np.take_along_axis(x, ix, axis=-1)[..., 0]


def put_last(g, idx, n):
    """Adjoint of :func:`take_last`: zeros of trailing extent ``n`` with ``g`` placed at ``idx``."""
    ix = idx[..., None]
    if isinstance(g, Dual):
        p = np.zeros(g.shape + (n,))
        np.put_along_axis(p, ix, g.primal[..., None], axis=-1)
        t = np.zeros((g.n_dirs,) + g.shape + (n,))
        tix = np.broadcast_to(ix, (g.n_dirs,) + ix.shape)
        np.put_along_axis(t, tix, g.tangent[..., None], axis=-1)
        return Dual(p, t)
    p = np.zeros(np.shape(g) + (n,))
    np.put_along_axis(p, ix, np.asarray(g)[..., None], axis=-1)
    return p


def gather_flat(x, idx):
    if isinstance(x, Dual):
        return Dual(x.primal.reshape(-1)[idx],
                    x.tangent.reshape(x.n_dirs, -1)[:, idx])
    return np.reshape(x, -1)[idx]


def scatter_flat(values, idx, size, accumulate=False):
    """Zero vector of length ``size`` with ``values`` written (or summed) at ``idx``."""
    if isinstance(values, Dual):
        p = np.zeros(size)
        t = np.zeros((values.n_dirs, size))
        if accumulate:
            np.add.at(p, idx, values.primal)
            np.add.at(t, (slice(None), idx), values.tangent)
        else:
            p[idx] = values.primal
            t[:, idx] = values.tangent
        return Dual(p, t)
    out = np.zeros(size)
    if accumulate:
        np.add.at(out, idx, values)
    else:
        out[idx] = values
    return out
