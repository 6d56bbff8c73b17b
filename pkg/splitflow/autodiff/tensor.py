"""Tensors, gradient tapes and operation counters.

A :class:`Tensor` is an immutable float64 array. Tensors become *tracked* when
a :class:`Tape` watches them; every primitive applied to a tracked tensor
appends a :class:`Node` to that tape, and :meth:`Tape.backward` walks the
nodes in reverse to accumulate gradients for the watched leaves. The tape is
rebuilt for every training step (define-by-run).

Forward-mode differentiation uses :class:`DualTensor`, a (primal, tangent)
pair pushed through the same primitives (see :mod:`splitflow.autodiff.dual`).
"""
import logging
import threading
from collections import Counter
from contextlib import contextmanager

import numpy as np

from ..base_classes import GradientError, ShapeError

__all__ = [
    "Tensor",
    "DualTensor",
    "Tape",
    "Node",
    "OpCounter",
    "backward",
    "stop_gradient",
    "no_grad",
    "count_ops",
    "record_op",
    "as_tensor",
]
mod_logger = logging.getLogger(__name__)

_state = threading.local()


def _flag(name):
    return getattr(_state, name, False)


@contextmanager
def _set_flag(name, value=True):
    old = _flag(name)
    setattr(_state, name, value)
    try:
        yield
    finally:
        setattr(_state, name, old)


@contextmanager
def no_grad():
    """Disable tape recording inside the block.

    Used for target generation, which runs in evaluation mode and must not
    contribute to parameter gradients.
    """
    with _set_flag("no_grad"):
        yield


def recording_enabled():
    return not _flag("no_grad")


class Tensor(object):
    """Immutable n-dimensional float64 array.

    Parameters
    ----------
    data : array_like
        Values, copied and converted to float64

    Attributes
    ----------
    grad_tracked : bool
        True while the tensor participates in a gradient tape
    """

    __array_priority__ = 1000

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        self._init_from(arr)

    def _init_from(self, arr):
        if any(extent < 1 for extent in arr.shape):
            raise ShapeError("tensor", arr.shape)
        arr.flags.writeable = False
        self._data = arr
        self._tape = None
        self._index = None

    @classmethod
    def _wrap(cls, arr):
        """Wrap a freshly computed array without copying it."""
        obj = cls.__new__(cls)
        obj._init_from(np.asarray(arr, dtype=np.float64))
        return obj

    @property
    def data(self):
        """Read-only view of the values"""
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def size(self):
        return self._data.size

    @property
    def grad_tracked(self):
        return self._tape is not None

    @property
    def tape(self):
        """The tape recording operations on this tensor, if any"""
        return self._tape

    def numpy(self):
        """Return a writable copy of the values."""
        return np.array(self._data)

    def item(self):
        if self._data.size != 1:
            raise ShapeError("item", self.shape)
        return float(self._data.reshape(-1)[0])

    def __float__(self):
        return self.item()

    def __len__(self):
        return self._data.shape[0]

    def __repr__(self):
        tracked = ", grad_tracked=True" if self.grad_tracked else ""
        return "Tensor({data!r}{tracked:s})".format(
            data=self._data.tolist(), tracked=tracked
        )

    __hash__ = object.__hash__


class DualTensor(object):
    """Primal value paired with a tangent of the same shape.

    Parameters
    ----------
    primal : Tensor or array_like
        The point of evaluation

    tangent : Tensor or array_like
        The direction of differentiation
    """

    __array_priority__ = 1000

    def __init__(self, primal, tangent):
        primal = as_tensor(primal)
        tangent = as_tensor(tangent)
        if primal.shape != tangent.shape:
            raise ShapeError("dual", primal.shape, tangent.shape)
        self.primal = primal
        self.tangent = tangent

    @property
    def shape(self):
        return self.primal.shape

    @property
    def data(self):
        return self.primal.data

    def __len__(self):
        return self.primal.shape[0]

    def __repr__(self):
        return "DualTensor(primal={p!r}, tangent={t!r})".format(
            p=self.primal.data.tolist(), t=self.tangent.data.tolist()
        )


def as_tensor(value):
    """Return ``value`` as a Tensor, leaving Tensors and DualTensors alone."""
    if isinstance(value, (Tensor, DualTensor)):
        return value
    return Tensor(value)


def stop_gradient(x):
    """Return a value-identical tensor that blocks gradient flow.

    Parameters
    ----------
    x : Tensor or DualTensor

    Returns
    -------
    Tensor
        Untracked copy of the values of ``x``

    Examples
    --------
    >>> stop_gradient(Tensor([1.0, 2.0])).data.tolist()
    [1.0, 2.0]
    """
    if isinstance(x, DualTensor):
        x = x.primal
    return Tensor._wrap(x.data)


class Node(object):
    """One recorded primitive application."""

    __slots__ = ("name", "output", "inputs", "vjp", "parents")

    def __init__(self, name, output, inputs, vjp, parents):
        self.name = name
        self.output = output
        self.inputs = inputs
        self.vjp = vjp
        self.parents = parents

    def __repr__(self):
        return "Node({name:s}, parents={p!r})".format(name=self.name, p=self.parents)


class Tape(object):
    """Ordered record of primitive applications for reverse-mode gradients.

    Nodes are appended as primitives run, so every node's parents precede it.
    Use as a context manager; leaving the block detaches the watched leaves.

    Examples
    --------
    >>> from splitflow.autodiff import primitives as P
    >>> w = Tensor([1.0, 2.0])
    >>> with Tape() as tape:
    ...     tape.watch(w)
    ...     grads = tape.backward(P.sum(P.mul(w, w)))
    >>> grads[w].data.tolist()
    [2.0, 4.0]
    """

    def __init__(self):
        self.nodes = []
        self._watched = []

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.release()
        return False

    def watch(self, *tensors):
        """Mark leaf tensors whose gradients are wanted."""
        for tensor in tensors:
            if tensor.tape is not None and tensor.tape is not self:
                raise GradientError("Tensor is already watched by another tape.")
            if tensor.tape is None:
                tensor._tape = self
                tensor._index = -1 - len(self._watched)
                self._watched.append(tensor)

    @property
    def watched(self):
        return list(self._watched)

    def record(self, name, output, inputs, vjp):
        parents = tuple(t._index if t.tape is self else None for t in inputs)
        output._tape = self
        output._index = len(self.nodes)
        self.nodes.append(Node(name, output, inputs, vjp, parents))
        return output

    def backward(self, loss):
        """Gradient of a scalar loss with respect to every watched leaf.

        Parameters
        ----------
        loss : Tensor
            Scalar tensor produced on this tape

        Returns
        -------
        dict
            Mapping from each watched leaf to a Tensor of its gradient.
            Leaves with no path to ``loss`` receive zeros.
        """
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise GradientError(
                "backward requires a scalar loss, got shape {s!r}".format(
                    s=getattr(loss, "shape", None)
                )
            )
        if loss.tape is not self:
            raise GradientError("The loss was not recorded on this tape.")

        record_op("backward")
        grads = {}
        if loss._index >= 0:
            grads[loss._index] = np.ones(loss.shape)
            for node in reversed(self.nodes[: loss._index + 1]):
                g = grads.pop(node.output._index, None)
                if g is None:
                    continue
                input_grads = node.vjp(g)
                for parent, grad in zip(node.parents, input_grads):
                    if parent is None or grad is None:
                        continue
                    if parent in grads:
                        grads[parent] = grads[parent] + grad
                    else:
                        grads[parent] = grad
        else:
            grads[loss._index] = np.ones(loss.shape)

        return {
            leaf: Tensor._wrap(
                np.array(grads[leaf._index], dtype=np.float64)
                if leaf._index in grads
                else np.zeros(leaf.shape)
            )
            for leaf in self._watched
        }

    def release(self):
        """Detach all tensors recorded on or watched by this tape."""
        for tensor in self._watched:
            tensor._tape = None
            tensor._index = None
        for node in self.nodes:
            node.output._tape = None
            node.output._index = None
        self._watched = []
        self.nodes = []


def backward(loss):
    """Gradient map of ``loss`` over the leaves watched by its tape.

    Parameters
    ----------
    loss : Tensor
        Scalar, grad-tracked tensor

    Returns
    -------
    dict
        Mapping from watched leaf Tensor to gradient Tensor
    """
    if not isinstance(loss, Tensor) or loss.tape is None:
        raise GradientError("backward requires a grad-tracked loss.")
    return loss.tape.backward(loss)


class OpCounter(object):
    """Count network forwards, JVPs and backward passes.

    Events are counted both in total and per network role, under keys like
    ``"forward"`` and ``"forward:student"``.
    """

    def __init__(self):
        self.counts = Counter()

    def record(self, event, role=None):
        self.counts[event] += 1
        if role is not None:
            self.counts["{e:s}:{r:s}".format(e=event, r=role)] += 1

    def __getitem__(self, key):
        return self.counts[key]

    def as_dict(self):
        return dict(sorted(self.counts.items()))

    def __repr__(self):
        return "OpCounter({c!r})".format(c=self.as_dict())


@contextmanager
def count_ops():
    """Collect operation counts for the enclosed block.

    Examples
    --------
    >>> with count_ops() as counter:
    ...     record_op("forward", "student")
    >>> counter["forward:student"]
    1
    """
    counter = OpCounter()
    stack = getattr(_state, "counters", [])
    _state.counters = stack + [counter]
    try:
        yield counter
    finally:
        _state.counters = stack


def record_op(event, role=None):
    """Record an event on every active counter.

    Forwards evaluated inside a JVP belong to that JVP and are not counted.
    """
    if event == "forward" and _flag("in_jvp"):
        return
    for counter in getattr(_state, "counters", []):
        counter.record(event, role)


@contextmanager
def _inside_jvp():
    with _set_flag("in_jvp"):
        yield
