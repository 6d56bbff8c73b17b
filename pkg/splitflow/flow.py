"""Flow paths, conditional velocity, the CFM loss and analytic velocity fields.

The path between a data point ``x`` (t=0) and a prior draw ``eps`` (t=1) is
``z_t = a(t) x + b(t) eps``. Average velocity over ``[r, t]`` is the
displacement ``(z_t - z_r) / (t - r)``, so sampling moves *backwards* in time:
``z_r = z_t - (t - r) u(z_t, r, t)``.
"""
import logging
import re
from collections import namedtuple

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import DualTensor, Tensor
from .base_classes import PoisonedStateError, ShapeError, SplitflowInputError

__all__ = [
    "Schedule",
    "LINEAR",
    "FlowSample",
    "TimeDistribution",
    "make_time_dist",
    "make_flow_sample",
    "subset",
    "conditional_velocity",
    "regression_loss",
    "cfm_loss",
    "AnalyticField",
    "analytic_average_velocity",
]
mod_logger = logging.getLogger(__name__)


Schedule = namedtuple("Schedule", ["kind", "a", "b", "da", "db"])
Schedule.__doc__ = """Interpolation schedule z_t = a(t) x + b(t) eps.

Fields ``a``, ``b`` are the coefficient functions and ``da``, ``db`` their
time derivatives. Boundary conditions: a(0)=1, b(0)=0, a(1)=0, b(1)=1.
"""

LINEAR = Schedule(
    kind="linear",
    a=lambda t: 1.0 - t,
    b=lambda t: t,
    da=lambda t: -np.ones_like(t),
    db=lambda t: np.ones_like(t),
)

FlowSample = namedtuple("FlowSample", ["x", "eps", "t", "r", "lam", "s", "z_t", "cond"])
FlowSample.__doc__ = """A batch of training tuples, one row per sample.

Invariants: ``0 <= r <= s <= t <= 1``, ``s == (1 - lam) t + lam r`` and
``z_t == a(t) x + b(t) eps``. ``cond`` is None or an int array of class ids.
"""


def subset(sample, mask):
    """Select the rows of ``sample`` where ``mask`` is True."""
    mask = np.asarray(mask)
    return FlowSample(
        *[None if field is None else field[mask] for field in sample]
    )


class TimeDistribution(object):
    """Law of the (r, t) pair, ordered so that r <= t.

    Parameters
    ----------
    kind : {'sorted_uniform', 'lognormal'}
        'sorted_uniform' draws two U(0, 1) values and sorts them.
        'lognormal' draws two logit-normal values ``sigmoid(N(mu, sigma))``
        and sorts them.

    mu, sigma : float
        Parameters of the logit-normal law
    """

    def __init__(self, kind="sorted_uniform", mu=-0.4, sigma=1.0):
        if kind not in ("sorted_uniform", "lognormal"):
            raise SplitflowInputError(
                "time_dist must be sorted_uniform or lognormal(mu, sigma), "
                "got {k!r}".format(k=kind)
            )
        if kind == "lognormal" and sigma <= 0:
            raise SplitflowInputError("lognormal sigma must be positive.")
        self.kind = kind
        self.mu = float(mu)
        self.sigma = float(sigma)

    def draw(self, rng, n):
        """Return arrays (r, t) of length n with r <= t."""
        if self.kind == "sorted_uniform":
            pair = rng.random((n, 2))
        else:
            pair = expit(rng.normal(self.mu, self.sigma, size=(n, 2)))
        pair.sort(axis=1)
        return pair[:, 0], pair[:, 1]

    def __str__(self):
        if self.kind == "sorted_uniform":
            return "sorted_uniform"
        return "lognormal({mu!r}, {sigma!r})".format(mu=self.mu, sigma=self.sigma)

    def __eq__(self, other):
        return isinstance(other, TimeDistribution) and str(self) == str(other)

    __hash__ = None


def make_time_dist(spec="sorted_uniform"):
    """Parse ``'sorted_uniform'`` or ``'lognormal(mu, sigma)'``.

    Examples
    --------
    >>> str(make_time_dist("lognormal(-0.4, 1.0)"))
    'lognormal(-0.4, 1.0)'
    """
    if isinstance(spec, TimeDistribution):
        return spec
    text = str(spec).strip()
    if text == "sorted_uniform":
        return TimeDistribution()
    match = re.match(r"^lognormal\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)$", text)
    if text == "lognormal":
        return TimeDistribution("lognormal")
    if match is None:
        raise SplitflowInputError(
            "time_dist must be sorted_uniform or lognormal(mu, sigma), "
            "got {k!r}".format(k=text)
        )
    return TimeDistribution("lognormal", float(match.group(1)), float(match.group(2)))


def make_flow_sample(
    x,
    eps,
    rng,
    time_dist="sorted_uniform",
    cond=None,
    lambda_range=(0.0, 1.0),
    schedule=LINEAR,
):
    """Draw times for a batch and build the path points.

    Parameters
    ----------
    x : array of shape (batch, dim)
        Data points

    eps : array of shape (batch, dim)
        Prior draws

    rng : numpy.random.Generator
        Generator for (r, t) and lambda

    time_dist : str or TimeDistribution
        Law of (r, t)
        Default: 'sorted_uniform'

    cond : array of int, optional
        Class ids carried along with the batch

    lambda_range : (float, float)
        lambda is drawn uniformly from this interval
        Default: (0.0, 1.0)

    schedule : Schedule
        Default: LINEAR

    Returns
    -------
    FlowSample
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    if x.shape != eps.shape:
        raise ShapeError("make_flow_sample", x.shape, eps.shape)
    lo, hi = lambda_range
    if not 0.0 <= lo <= hi <= 1.0:
        raise SplitflowInputError("lambda_range must satisfy 0 <= lo <= hi <= 1.")

    n = x.shape[0]
    r, t = make_time_dist(time_dist).draw(rng, n)
    lam = rng.uniform(lo, hi, size=n)
    s = (1.0 - lam) * t + lam * r
    # rounding can push s a hair outside [r, t]
    s = np.clip(s, r, t)
    z_t = schedule.a(t)[:, None] * x + schedule.b(t)[:, None] * eps
    if cond is not None:
        cond = np.asarray(cond, dtype=np.int64).reshape(-1)
    return FlowSample(x=x, eps=eps, t=t, r=r, lam=lam, s=s, z_t=z_t, cond=cond)


def conditional_velocity(sample, schedule=LINEAR):
    """Velocity of the conditional path, ``a'(t) x + b'(t) eps``.

    Under the linear schedule this is ``eps - x``.

    Examples
    --------
    >>> s = FlowSample(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]),
    ...                np.array([0.5]), np.array([0.5]), np.array([0.0]),
    ...                np.array([0.5]), np.array([[0.5, 0.5]]), None)
    >>> conditional_velocity(s).tolist()
    [[-1.0, 1.0]]
    """
    if schedule.kind == "linear":
        return sample.eps - sample.x
    return schedule.da(sample.t)[:, None] * sample.x + schedule.db(sample.t)[
        :, None
    ] * sample.eps


def regression_loss(prediction, target, norm="squared"):
    """Batch mean of the per-sample squared (or plain) L2 error.

    Parameters
    ----------
    prediction : Tensor of shape (batch, dim)

    target : Tensor or array of shape (batch, dim)
        Treated as a constant

    norm : {'squared', 'l2'}
        Default: 'squared'

    Returns
    -------
    Tensor
        Scalar loss
    """
    target = ad.stop_gradient(ad.as_tensor(target))
    per_sample = ad.sum(ad.square(ad.sub(prediction, target)), axis=1)
    if norm == "l2":
        per_sample = ad.sqrt(per_sample, eps=1e-12)
    elif norm != "squared":
        raise SplitflowInputError("loss_norm must be 'squared' or 'l2'.")
    loss = ad.mean(per_sample)
    if not np.isfinite(loss.item()):
        raise PoisonedStateError("regression loss")
    return loss


def cfm_loss(net, sample, cfg_dropout=0.0, rng=None, norm="squared"):
    """Conditional flow matching loss ``mean ||v(z_t, t) - (eps - x)||^2``.

    Parameters
    ----------
    net : VelocityNet

    sample : FlowSample

    cfg_dropout : float
        Probability of replacing each class id with the null id
        Default: 0.0

    rng : numpy.random.Generator
        Generator for condition dropout

    Returns
    -------
    Tensor
        Scalar loss, recorded on the tape watching ``net`` if any
    """
    if not 0.0 <= cfg_dropout <= 1.0:
        raise SplitflowInputError("cfg_dropout must lie in [0, 1].")
    prediction = net.as_instantaneous(
        sample.z_t, sample.t, sample.cond, train=True, cfg_dropout=cfg_dropout, rng=rng
    )
    return regression_loss(prediction, conditional_velocity(sample), norm)


def _column(x, n, d):
    """(n,) tensor repeated across d columns."""
    return ad.matmul(ad.reshape(x, (n, 1)), Tensor(np.ones((1, d))))


class AnalyticField(object):
    """Velocity field with a closed-form average velocity.

    Parameters
    ----------
    kind : {'constant', 'time_poly', 'linear_state'}
        'constant': v(z, tau) = c.
        'time_poly': v(z, tau) = tau in every coordinate.
        'linear_state': v(z, tau) = -z.

    c : array_like
        Velocity of the constant field (broadcast over the batch)

    Notes
    -----
    Fields expose the same evaluation interface as VelocityNet:
    ``velocity``, ``average_velocity`` (numpy) and ``forward`` (tensors,
    usable under :func:`splitflow.autodiff.jvp`).
    """

    kinds = ("constant", "time_poly", "linear_state")
    conditional = False
    role = "analytic"

    def __init__(self, kind, c=None):
        if kind not in self.kinds:
            raise SplitflowInputError(
                "AnalyticField kind must be one of {k!r}".format(k=self.kinds)
            )
        if kind == "constant" and c is None:
            raise SplitflowInputError("constant field requires c.")
        self.kind = kind
        self.c = None if c is None else np.atleast_1d(np.asarray(c, dtype=np.float64))

    @classmethod
    def constant(cls, c):
        return cls("constant", c)

    @classmethod
    def time_poly(cls):
        return cls("time_poly")

    @classmethod
    def linear_state(cls):
        return cls("linear_state")

    @classmethod
    def from_name(cls, name, dim=2):
        """Build a field by name; the constant field gets c = (1, -0.5, ...)."""
        if name == "constant":
            return cls.constant(np.resize([1.0, -0.5], dim))
        return cls(name)

    def velocity(self, z, t, cond=None):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (z.shape[0],))
        if self.kind == "constant":
            return np.broadcast_to(self.c, z.shape).copy()
        if self.kind == "time_poly":
            return np.broadcast_to(t[:, None], z.shape).copy()
        return -z

    def average_velocity(self, z, r, t, cond=None):
        """Closed-form u(z_t, r, t); r == t returns v(z_t, t)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        n = z.shape[0]
        r = np.broadcast_to(np.asarray(r, dtype=np.float64), (n,))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        if self.kind == "constant":
            return np.broadcast_to(self.c, z.shape).copy()
        if self.kind == "time_poly":
            return np.broadcast_to(((t + r) / 2.0)[:, None], z.shape).copy()
        h = t - r
        safe = np.where(h == 0.0, 1.0, h)
        # z_r = z_t exp(t - r) along the trajectory of v = -z
        ratio = np.where(h == 0.0, -1.0, -np.expm1(h) / safe)
        return ratio[:, None] * z

    def trajectory(self, z_t, t, tau):
        """State at time tau on the field's trajectory through (z_t, t)."""
        z_t = np.atleast_2d(np.asarray(z_t, dtype=np.float64))
        n = z_t.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (n,))
        if self.kind == "constant":
            return z_t + (tau - t)[:, None] * self.c
        if self.kind == "time_poly":
            return z_t + ((tau ** 2 - t ** 2) / 2.0)[:, None]
        return z_t * np.exp(t - tau)[:, None]

    def forward(self, z, r, t, cond=None, train=False, **kwargs):
        """u(z, r, t) from autodiff primitives, for r < t."""
        z = ad.as_tensor(z)
        n, d = z.shape
        r = ad.as_tensor(r)
        t = ad.as_tensor(t)
        if self.kind == "constant":
            return Tensor(np.broadcast_to(self.c, (n, d)))
        if self.kind == "time_poly":
            return _column(ad.scale(ad.add(t, r), 0.5), n, d)
        h = ad.sub(t, r)
        ratio = ad.div(ad.sub(Tensor(np.ones(n)), ad.exp(h)), h)
        return ad.mul(z, _column(ratio, n, d))

    __call__ = forward

    def __repr__(self):
        if self.kind == "constant":
            return "AnalyticField('constant', c={c!r})".format(c=self.c.tolist())
        return "AnalyticField({k!r})".format(k=self.kind)


def analytic_average_velocity(field, z_t, r, t):
    """Closed-form average velocity of an AnalyticField.

    Examples
    --------
    >>> f = AnalyticField.time_poly()
    >>> float(analytic_average_velocity(f, [[0.0]], 0.2, 0.8)[0, 0])
    0.5
    """
    if isinstance(z_t, (Tensor, DualTensor)):
        z_t = z_t.data
    return field.average_velocity(z_t, r, t)
