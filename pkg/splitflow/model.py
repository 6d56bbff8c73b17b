"""The velocity network u(z, r, t, c).

The same network serves as average-velocity field ``u(z, r, t)`` and, with
``r = t``, as instantaneous velocity ``v(z, t)``. Inputs are the state, a
sinusoidal embedding of each time, and an optional class embedding whose last
row is the null class used for classifier-free guidance.
"""
import logging

import numpy as np

from . import autodiff as ad
from .autodiff import DualTensor, Tensor, no_grad, record_op
from .base_classes import PoisonedStateError, ShapeError, SplitflowInputError

__all__ = ["TimeEmbedding", "VelocityNet", "cfg_velocity"]
mod_logger = logging.getLogger(__name__)


class TimeEmbedding(object):
    """Fixed sinusoidal embedding of a batch of scalar times.

    Parameters
    ----------
    dim : int
        Embedding width, must be even

    max_frequency : float
        Largest angular frequency of the geometric series. Times live in
        [0, 1], so a few cycles are enough
        Default: 10.0

    Examples
    --------
    >>> emb = TimeEmbedding(4)
    >>> emb(Tensor([0.0])).data.tolist()
    [[0.0, 0.0, 1.0, 1.0]]
    """

    def __init__(self, dim, max_frequency=10.0):
        if dim < 2 or dim % 2:
            raise SplitflowInputError("time_embed_dim must be a positive even integer.")
        self.dim = int(dim)
        self.max_frequency = float(max_frequency)
        self.frequencies = np.geomspace(1.0, self.max_frequency, self.dim // 2)
        self._freq_row = Tensor(self.frequencies[None, :])

    def __call__(self, t):
        n = len(t)
        angles = ad.matmul(ad.reshape(t, (n, 1)), self._freq_row)
        return ad.concat(ad.sin(angles), ad.cos(angles))


def _he_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _as_times(value, n):
    if isinstance(value, (Tensor, DualTensor)):
        return value
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    return Tensor(arr)


def _primal(x):
    return x.primal.data if isinstance(x, DualTensor) else x.data


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class VelocityNet(object):
    """MLP velocity field with time and class embeddings.

    Parameters
    ----------
    data_dim : int
        Dimension of the state z

    hidden_dim : int
        Width of each hidden layer
        Default: 256

    depth : int
        Number of hidden layers
        Default: 3

    time_embed_dim : int
        Width of each of the r and t embeddings
        Default: 16

    num_classes : int
        Number of classes, 0 for an unconditional network. Class id
        ``num_classes`` is the reserved null class.
        Default: 0

    cond_embed_dim : int
        Width of the class embedding
        Default: time_embed_dim

    rng : numpy.random.Generator
        Generator for initialization
        Default: numpy.random.default_rng(0)

    zero_init_output : bool
        If True, zero the final layer so the initial field is the zero map
        Default: True

    role : str
        Label used by operation counters, e.g. 'student' or 'teacher'
        Default: 'student'

    max_frequency : float
        Largest frequency of the time embedding
        Default: 10.0
    """

    def __init__(
        self,
        data_dim,
        hidden_dim=256,
        depth=3,
        time_embed_dim=16,
        num_classes=0,
        cond_embed_dim=None,
        rng=None,
        zero_init_output=True,
        role="student",
        max_frequency=10.0,
    ):
        for label, value, low in [
            ("data_dim", data_dim, 1),
            ("hidden_dim", hidden_dim, 1),
            ("depth", depth, 1),
            ("num_classes", num_classes, 0),
        ]:
            if int(value) != value or value < low:
                raise SplitflowInputError(
                    "{label:s} must be an integer >= {low:d}, got {v!r}".format(
                        label=label, low=low, v=value
                    )
                )

        self._data_dim = int(data_dim)
        self._hidden_dim = int(hidden_dim)
        self._depth = int(depth)
        self._num_classes = int(num_classes)
        self._time_embedding = TimeEmbedding(time_embed_dim, max_frequency)
        self._cond_embed_dim = (
            int(cond_embed_dim) if cond_embed_dim else self._time_embedding.dim
        )
        self.role = role

        rng = rng if rng is not None else np.random.default_rng(0)
        params = []
        if self.conditional:
            params.append(
                rng.normal(0.0, 1.0, size=(self.num_classes + 1, self.cond_embed_dim))
            )
        widths = [self.input_dim] + [self.hidden_dim] * self.depth
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            params.append(_he_uniform(rng, fan_in, fan_out))
            params.append(np.zeros(fan_out))
        if zero_init_output:
            params.append(np.zeros((self.hidden_dim, self.data_dim)))
        else:
            params.append(_he_uniform(rng, self.hidden_dim, self.data_dim))
        params.append(np.zeros(self.data_dim))
        self._params = [Tensor(p) for p in params]

    @property
    def data_dim(self):
        return self._data_dim

    @property
    def hidden_dim(self):
        return self._hidden_dim

    @property
    def depth(self):
        return self._depth

    @property
    def time_embed_dim(self):
        return self._time_embedding.dim

    @property
    def max_frequency(self):
        return self._time_embedding.max_frequency

    @property
    def num_classes(self):
        return self._num_classes

    @property
    def cond_embed_dim(self):
        return self._cond_embed_dim

    @property
    def conditional(self):
        return self._num_classes > 0

    @property
    def null_class_id(self):
        """Id of the reserved embedding row used for dropped conditions"""
        return self._num_classes

    @property
    def input_dim(self):
        width = self.data_dim + 2 * self.time_embed_dim
        if self.conditional:
            width += self.cond_embed_dim
        return width

    @property
    def architecture(self):
        """Dimensions needed to rebuild this network"""
        return {
            "data_dim": self.data_dim,
            "hidden_dim": self.hidden_dim,
            "depth": self.depth,
            "time_embed_dim": self.time_embed_dim,
            "num_classes": self.num_classes,
            "cond_embed_dim": self.cond_embed_dim,
            "max_frequency": self.max_frequency,
        }

    def layer_shapes(self):
        """Parameter shapes in declared order (class embedding first)"""
        shapes = []
        if self.conditional:
            shapes.append((self.num_classes + 1, self.cond_embed_dim))
        widths = [self.input_dim] + [self.hidden_dim] * self.depth + [self.data_dim]
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            shapes.append((fan_in, fan_out))
            shapes.append((fan_out,))
        return shapes

    def param_count(self):
        return int(sum(int(np.prod(s)) for s in self.layer_shapes()))

    def parameters(self):
        """Parameter tensors in declared order"""
        return list(self._params)

    @property
    def layers(self):
        """List of (weight, bias) pairs, input layer first"""
        offset = 1 if self.conditional else 0
        p = self._params[offset:]
        return [(p[i], p[i + 1]) for i in range(0, len(p), 2)]

    def set_parameters(self, params):
        """Replace all parameters, checking shapes against the architecture."""
        params = [p if isinstance(p, Tensor) else Tensor(p) for p in params]
        expected = self.layer_shapes()
        if [tuple(p.shape) for p in params] != [tuple(s) for s in expected]:
            raise ShapeError(
                "set_parameters",
                *[p.shape for p in params],
            )
        self._params = params

    def flat_parameters(self):
        return np.concatenate([p.data.reshape(-1) for p in self._params])

    def set_flat_parameters(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.param_count():
            raise ShapeError("set_flat_parameters", flat.shape, (self.param_count(),))
        params, offset = [], 0
        for shape in self.layer_shapes():
            size = int(np.prod(shape))
            params.append(Tensor(flat[offset : offset + size].reshape(shape)))
            offset += size
        self._params = params

    def copy(self, role=None):
        """Return an independent network with the same parameters."""
        other = VelocityNet.__new__(VelocityNet)
        other.__dict__.update(self.__dict__)
        other._params = [Tensor(p.data) for p in self._params]
        if role is not None:
            other.role = role
        return other

    def _cond_embedding(self, cond, n, train, cfg_dropout, rng):
        if cond is None:
            ids = np.full(n, self.null_class_id, dtype=np.int64)
        else:
            ids = np.asarray(cond, dtype=np.int64).reshape(-1)
            if ids.shape != (n,):
                raise ShapeError("cond", ids.shape, (n,))
            if ids.min() < 0 or ids.max() > self.null_class_id:
                raise SplitflowInputError(
                    "class ids must lie in [0, {k:d}]".format(k=self.null_class_id)
                )
        if train and cfg_dropout > 0.0:
            if rng is None:
                raise SplitflowInputError("CFG dropout in train mode requires an rng.")
            drop = rng.random(n) < cfg_dropout
            ids = np.where(drop, self.null_class_id, ids)
        one_hot = np.zeros((n, self.num_classes + 1))
        one_hot[np.arange(n), ids] = 1.0
        return ad.matmul(Tensor(one_hot), self._params[0])

    def forward(self, z, r, t, cond=None, train=False, cfg_dropout=0.0, rng=None):
        """Evaluate u(z, r, t, cond).

        Parameters
        ----------
        z : Tensor, DualTensor or array of shape (batch, data_dim)
            State

        r, t : Tensor, DualTensor, array of shape (batch,) or float
            Interval start and end times, ``r <= t`` elementwise

        cond : array of int, optional
            Class ids in ``[0, num_classes]``; ignored by unconditional
            networks. None means the null class.

        train : bool
            Training mode. Only training mode applies CFG condition dropout.

        cfg_dropout : float
            Probability of replacing each class id with the null id

        rng : numpy.random.Generator
            Generator for condition dropout

        Returns
        -------
        Tensor or DualTensor of shape (batch, data_dim)
        """
        if not isinstance(z, (Tensor, DualTensor)):
            z = Tensor(np.atleast_2d(np.asarray(z, dtype=np.float64)))
        if len(z.shape) != 2 or z.shape[1] != self.data_dim:
            raise ShapeError("forward", z.shape, (z.shape[0], self.data_dim))
        n = z.shape[0]
        r = _as_times(r, n)
        t = _as_times(t, n)
        if r.shape != (n,) or t.shape != (n,):
            raise ShapeError("forward", r.shape, t.shape, (n,))
        if np.any(_primal(r) > _primal(t)):
            raise SplitflowInputError("forward requires r <= t elementwise.")

        record_op("forward", self.role)

        pieces = [z, self._time_embedding(r), self._time_embedding(t)]
        if self.conditional:
            pieces.append(self._cond_embedding(cond, n, train, cfg_dropout, rng))
        h = ad.concat(*pieces)

        layers = self.layers
        for weight, bias in layers[:-1]:
            h = ad.silu(ad.add(ad.matmul(h, weight), ad.broadcast_rows(bias, n)))
        weight, bias = layers[-1]
        out = ad.add(ad.matmul(h, weight), ad.broadcast_rows(bias, n))

        if not np.all(np.isfinite(_primal(out))):
            raise PoisonedStateError("{role:s} network forward".format(role=self.role))
        return out

    __call__ = forward

    def as_instantaneous(self, z, t, cond=None, **kwargs):
        """Estimate of the instantaneous velocity v(z, t): forward with r = t."""
        return self.forward(z, t, t, cond, **kwargs)

    def average_velocity(self, z, r, t, cond=None):
        """Untracked evaluation-mode u(z, r, t) as a numpy array."""
        with no_grad():
            return self.forward(z, r, t, cond).numpy()

    def velocity(self, z, t, cond=None):
        """Untracked evaluation-mode v(z, t) as a numpy array."""
        with no_grad():
            return self.as_instantaneous(z, t, cond).numpy()

    def __repr__(self):
        return (
            "VelocityNet(data_dim={d:d}, hidden_dim={h:d}, depth={k:d}, "
            "num_classes={c:d}, role={role!r})".format(
                d=self.data_dim,
                h=self.hidden_dim,
                k=self.depth,
                c=self.num_classes,
                role=self.role,
            )
        )


def cfg_velocity(field, z, t, cond, cfg_scale):
    """Classifier-free guided velocity ``(1 - w) v(z,t|null) + w v(z,t|cond)``.

    Unconditional fields, or ``cond=None``, return the plain velocity. A field
    that already folds guidance into its velocity (one with a ``cfg_scale_w``
    attribute, such as a TeacherHandle) is asked for scale ``w`` directly, so
    guidance is applied once.

    Parameters
    ----------
    field : VelocityNet, AnalyticField or TeacherHandle
        Anything with a ``velocity(z, t, cond)`` method

    z : array of shape (batch, dim)

    t : array of shape (batch,) or float

    cond : array of int or None

    cfg_scale : float
        Guidance scale w >= 0

    Returns
    -------
    numpy.ndarray
    """
    if cond is None or not getattr(field, "conditional", False):
        return field.velocity(z, t, cond)
    w = float(cfg_scale)
    if getattr(field, "cfg_scale_w", None) is not None:
        return field.velocity(z, t, cond, cfg_scale_w=w)
    v_null = field.velocity(z, t, None)
    v_cond = field.velocity(z, t, cond)
    return (1.0 - w) * v_null + w * v_cond
