"""Minimal float64 tensor engine with reverse- and forward-mode derivatives."""
from .tensor import (  # noqa
    Tensor,
    DualTensor,
    Tape,
    Node,
    OpCounter,
    backward,
    stop_gradient,
    no_grad,
    count_ops,
    record_op,
    as_tensor,
)
from .primitives import *  # noqa
from .dual import jvp  # noqa
