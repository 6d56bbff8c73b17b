"""Differentiable primitives.

Every primitive carries three rules over plain numpy arrays: the value, the
vector-Jacobian product used by :class:`~splitflow.autodiff.tensor.Tape`, and
the Jacobian-vector product used by :class:`DualTensor` evaluation. The same
primitive therefore serves reverse mode, forward mode and untracked
evaluation.

Broadcasting is limited to :func:`broadcast_rows`; every other binary
primitive requires equal shapes (``scale`` takes a python scalar).
"""
import logging

import numpy as np
from scipy.special import expit

from ..base_classes import GradientError, ShapeError
from .tensor import DualTensor, Tensor, as_tensor, recording_enabled

__all__ = [
    "Primitive",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "scale",
    "relu",
    "silu",
    "sin",
    "cos",
    "exp",
    "square",
    "sqrt",
    "sum",
    "mean",
    "concat",
    "broadcast_rows",
    "reshape",
]
mod_logger = logging.getLogger(__name__)


class Primitive(object):
    """A differentiable operation with value, vjp and jvp rules.

    Parameters
    ----------
    name : str
        Name recorded on the tape

    value : callable
        ``value(*arrays, **params) -> array``

    vjp : callable
        ``vjp(g, out, *arrays, **params) -> tuple`` of input gradients
        (``None`` for inputs without a gradient)

    jvp : callable
        ``jvp(tangents, out, *arrays, **params) -> array``; entries of
        ``tangents`` are ``None`` for constant inputs

    check : callable, optional
        ``check(*arrays, **params)`` raising ShapeError on bad operands
    """

    def __init__(self, name, value, vjp, jvp, check=None):
        self.name = name
        self.value = value
        self.vjp = vjp
        self.jvp = jvp
        self.check = check

    def __call__(self, *args, **params):
        args = [as_tensor(a) for a in args]
        if any(isinstance(a, DualTensor) for a in args):
            return self._apply_dual(args, params)
        return self._apply(args, params)

    def _apply(self, args, params):
        arrays = [a.data for a in args]
        if self.check is not None:
            self.check(*arrays, **params)
        out = self.value(*arrays, **params)
        result = Tensor._wrap(out)

        tapes = {id(a.tape): a.tape for a in args if a.tape is not None}
        if tapes and recording_enabled():
            if len(tapes) > 1:
                raise GradientError(
                    "{name:s}: operands are recorded on different tapes".format(
                        name=self.name
                    )
                )
            (tape,) = tapes.values()

            def vjp(g, out=out, arrays=arrays, params=params):
                return self.vjp(g, out, *arrays, **params)

            tape.record(self.name, result, args, vjp)
        return result

    def _apply_dual(self, args, params):
        primals = [a.primal.data if isinstance(a, DualTensor) else a.data for a in args]
        tangents = [a.tangent.data if isinstance(a, DualTensor) else None for a in args]
        if self.check is not None:
            self.check(*primals, **params)
        out = self.value(*primals, **params)
        tangent = self.jvp(tangents, out, *primals, **params)
        if tangent is None:
            tangent = np.zeros_like(out)
        return DualTensor(Tensor._wrap(out), Tensor._wrap(tangent))

    def __repr__(self):
        return "Primitive({name:s})".format(name=self.name)


def _same_shape(name):
    def check(a, b):
        if a.shape != b.shape:
            raise ShapeError(name, a.shape, b.shape)

    return check


def _sum_tangents(*terms):
    terms = [t for t in terms if t is not None]
    if not terms:
        return None
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def _matmul_check(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)


add = Primitive(
    "add",
    value=lambda a, b: a + b,
    vjp=lambda g, out, a, b: (g, g),
    jvp=lambda ts, out, a, b: _sum_tangents(ts[0], ts[1]),
    check=_same_shape("add"),
)

sub = Primitive(
    "sub",
    value=lambda a, b: a - b,
    vjp=lambda g, out, a, b: (g, -g),
    jvp=lambda ts, out, a, b: _sum_tangents(
        ts[0], None if ts[1] is None else -ts[1]
    ),
    check=_same_shape("sub"),
)

mul = Primitive(
    "mul",
    value=lambda a, b: a * b,
    vjp=lambda g, out, a, b: (g * b, g * a),
    jvp=lambda ts, out, a, b: _sum_tangents(
        None if ts[0] is None else ts[0] * b, None if ts[1] is None else a * ts[1]
    ),
    check=_same_shape("mul"),
)

div = Primitive(
    "div",
    value=lambda a, b: a / b,
    vjp=lambda g, out, a, b: (g / b, -g * out / b),
    jvp=lambda ts, out, a, b: _sum_tangents(
        None if ts[0] is None else ts[0] / b,
        None if ts[1] is None else -out * ts[1] / b,
    ),
    check=_same_shape("div"),
)

matmul = Primitive(
    "matmul",
    value=lambda a, b: a @ b,
    vjp=lambda g, out, a, b: (g @ b.T, a.T @ g),
    jvp=lambda ts, out, a, b: _sum_tangents(
        None if ts[0] is None else ts[0] @ b, None if ts[1] is None else a @ ts[1]
    ),
    check=_matmul_check,
)

_scale = Primitive(
    "scale",
    value=lambda a, c: a * c,
    vjp=lambda g, out, a, c: (g * c,),
    jvp=lambda ts, out, a, c: None if ts[0] is None else ts[0] * c,
)


def scale(x, c):
    """Multiply by the python scalar ``c``."""
    return _scale(x, c=float(c))


relu = Primitive(
    "relu",
    value=lambda a: np.maximum(a, 0.0),
    vjp=lambda g, out, a: (g * (a > 0),),
    jvp=lambda ts, out, a: None if ts[0] is None else ts[0] * (a > 0),
)


def _silu_grad(a):
    sig = expit(a)
    return sig * (1.0 + a * (1.0 - sig))


silu = Primitive(
    "silu",
    value=lambda a: a * expit(a),
    vjp=lambda g, out, a: (g * _silu_grad(a),),
    jvp=lambda ts, out, a: None if ts[0] is None else ts[0] * _silu_grad(a),
)

sin = Primitive(
    "sin",
    value=np.sin,
    vjp=lambda g, out, a: (g * np.cos(a),),
    jvp=lambda ts, out, a: None if ts[0] is None else ts[0] * np.cos(a),
)

cos = Primitive(
    "cos",
    value=np.cos,
    vjp=lambda g, out, a: (-g * np.sin(a),),
    jvp=lambda ts, out, a: None if ts[0] is None else -ts[0] * np.sin(a),
)

exp = Primitive(
    "exp",
    value=np.exp,
    vjp=lambda g, out, a: (g * out,),
    jvp=lambda ts, out, a: None if ts[0] is None else ts[0] * out,
)

square = Primitive(
    "square",
    value=np.square,
    vjp=lambda g, out, a: (2.0 * a * g,),
    jvp=lambda ts, out, a: None if ts[0] is None else 2.0 * a * ts[0],
)

# eps keeps the derivative finite at zero
sqrt = Primitive(
    "sqrt",
    value=lambda a, eps=0.0: np.sqrt(a + eps),
    vjp=lambda g, out, a, eps=0.0: (0.5 * g / out,),
    jvp=lambda ts, out, a, eps=0.0: None if ts[0] is None else 0.5 * ts[0] / out,
)


def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(np.expand_dims(g, axis), shape).copy()


def _reduce_count(shape, axis):
    if axis is None:
        return int(np.prod(shape))
    return shape[axis]


sum = Primitive(
    "sum",
    value=lambda a, axis=None: np.sum(a, axis=axis),
    vjp=lambda g, out, a, axis=None: (_expand_reduced(g, a.shape, axis),),
    jvp=lambda ts, out, a, axis=None: None
    if ts[0] is None
    else np.sum(ts[0], axis=axis),
)

mean = Primitive(
    "mean",
    value=lambda a, axis=None: np.mean(a, axis=axis),
    vjp=lambda g, out, a, axis=None: (
        _expand_reduced(g, a.shape, axis) / _reduce_count(a.shape, axis),
    ),
    jvp=lambda ts, out, a, axis=None: None
    if ts[0] is None
    else np.mean(ts[0], axis=axis),
)


def _concat_check(*arrays):
    lead = arrays[0].shape[:-1]
    for arr in arrays[1:]:
        if arr.shape[:-1] != lead:
            raise ShapeError("concat", *[a.shape for a in arrays])


def _concat_vjp(g, out, *arrays):
    bounds = np.cumsum([a.shape[-1] for a in arrays])[:-1]
    return tuple(np.split(g, bounds, axis=-1))


def _concat_jvp(ts, out, *arrays):
    if all(t is None for t in ts):
        return None
    return np.concatenate(
        [np.zeros_like(a) if t is None else t for t, a in zip(ts, arrays)], axis=-1
    )


_concat = Primitive(
    "concat",
    value=lambda *arrays: np.concatenate(arrays, axis=-1),
    vjp=_concat_vjp,
    jvp=_concat_jvp,
    check=_concat_check,
)


def concat(*tensors):
    """Concatenate along the last axis."""
    if len(tensors) == 1:
        return as_tensor(tensors[0])
    return _concat(*tensors)


def _broadcast_rows_check(a, n):
    if a.ndim != 1 or int(n) < 1:
        raise ShapeError("broadcast_rows", a.shape, (int(n),))


_broadcast_rows = Primitive(
    "broadcast_rows",
    value=lambda a, n: np.broadcast_to(a, (n,) + a.shape).copy(),
    vjp=lambda g, out, a, n: (g.sum(axis=0),),
    jvp=lambda ts, out, a, n: None
    if ts[0] is None
    else np.broadcast_to(ts[0], out.shape).copy(),
    check=_broadcast_rows_check,
)


def broadcast_rows(x, n):
    """Repeat a 1-D tensor as ``n`` rows."""
    return _broadcast_rows(x, n=int(n))


def _reshape_check(a, shape):
    if int(np.prod(shape)) != a.size:
        raise ShapeError("reshape", a.shape, tuple(shape))


_reshape = Primitive(
    "reshape",
    value=lambda a, shape: a.reshape(shape),
    vjp=lambda g, out, a, shape: (g.reshape(a.shape),),
    jvp=lambda ts, out, a, shape: None if ts[0] is None else ts[0].reshape(shape),
    check=_reshape_check,
)


def reshape(x, shape):
    return _reshape(x, shape=tuple(int(e) for e in shape))


def _coerce(other, like):
    if isinstance(other, (int, float, np.floating, np.integer)):
        return Tensor._wrap(np.full(like.shape, float(other)))
    return other


def _install_operators(cls):
    cls.__add__ = lambda self, other: add(self, _coerce(other, self))
    cls.__radd__ = lambda self, other: add(_coerce(other, self), self)
    cls.__sub__ = lambda self, other: sub(self, _coerce(other, self))
    cls.__rsub__ = lambda self, other: sub(_coerce(other, self), self)
    cls.__neg__ = lambda self: scale(self, -1.0)
    cls.__matmul__ = lambda self, other: matmul(self, other)
    cls.__rmatmul__ = lambda self, other: matmul(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return scale(self, other)
        return mul(self, other)

    cls.__mul__ = __mul__
    cls.__rmul__ = __mul__


_install_operators(Tensor)
_install_operators(DualTensor)
