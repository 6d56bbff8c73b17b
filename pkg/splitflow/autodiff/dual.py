"""Forward-mode Jacobian-vector products over dual tensors."""
import logging

import numpy as np

from ..base_classes import ShapeError
from .tensor import DualTensor, Tensor, _inside_jvp, as_tensor, no_grad, record_op

__all__ = ["jvp"]
mod_logger = logging.getLogger(__name__)


def jvp(f, x, tangent):
    """Evaluate ``f`` and its directional derivative at ``x``.

    Parameters
    ----------
    f : callable
        Function of one or more tensors built from splitflow primitives

    x : Tensor or sequence of Tensors
        Point of evaluation. A sequence is passed to ``f`` as positional
        arguments.

    tangent : Tensor or sequence of Tensors
        Direction, matching ``x`` in structure and shapes

    Returns
    -------
    value : Tensor
        ``f(x)``

    derivative : Tensor
        ``J_f(x) @ tangent``

    Examples
    --------
    >>> from splitflow.autodiff import primitives as P
    >>> value, dot = jvp(P.square, Tensor(3.0), Tensor(1.0))
    >>> value.item(), dot.item()
    (9.0, 6.0)
    """
    single = isinstance(x, (Tensor, DualTensor, np.ndarray, float, int))
    xs = (x,) if single else tuple(x)
    ts = (tangent,) if single else tuple(tangent)
    if len(xs) != len(ts):
        raise ShapeError("jvp", (len(xs),), (len(ts),))

    duals = []
    for xi, ti in zip(xs, ts):
        xi = as_tensor(xi)
        ti = as_tensor(ti)
        if xi.shape != ti.shape:
            raise ShapeError("jvp", xi.shape, ti.shape)
        duals.append(DualTensor(xi, ti))

    record_op("jvp")
    with no_grad(), _inside_jvp():
        out = f(*duals)

    if isinstance(out, DualTensor):
        return out.primal, out.tangent
    out = as_tensor(out)
    return out, Tensor._wrap(np.zeros(out.shape))
