"""MeanFlow baseline: targets from the differential identity u = v - (t - r) du/dt.

The total derivative ``du/dt`` along the flow is a single Jacobian-vector
product of the network with tangent ``(v, 0, 1)`` in ``(z, r, t)``.
Boundary rows and every hyperparameter are shared with the interval splitting
trainer, so the objective is the only difference between the two.
"""
import logging

import numpy as np

from .autodiff import Tensor, jvp, no_grad
from .base_classes import PoisonedStateError, ShapeError
from .flow import regression_loss, subset
from .smf import _predict, _training_dropout, boundary_target, draw_branches
from .smf import drop_condition, make_plan
from .smf import train as _train

__all__ = ["meanflow_target", "meanflow_loss", "meanflow_objective", "train"]
mod_logger = logging.getLogger(__name__)


def meanflow_target(net, sample, v):
    """MeanFlow regression target ``v - (t - r) du/dt``.

    Parameters
    ----------
    net : VelocityNet or AnalyticField
        Field whose ``forward`` is built from autodiff primitives

    sample : FlowSample

    v : array of shape (batch, dim)
        Instantaneous velocity used both in the target and as the state
        tangent of the JVP

    Returns
    -------
    numpy.ndarray
        Constant target; rows with ``r == t`` equal ``v``
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != sample.z_t.shape:
        raise ShapeError("meanflow_target", v.shape, sample.z_t.shape)
    n = sample.x.shape[0]

    def u(z, r, t):
        return net.forward(z, r, t, sample.cond)

    with no_grad():
        _, dudt = jvp(
            u,
            (Tensor(sample.z_t), Tensor(sample.r), Tensor(sample.t)),
            (Tensor(v), Tensor(np.zeros(n)), Tensor(np.ones(n))),
        )
    dudt = dudt.numpy()
    gap = (sample.t - sample.r)[:, None]
    target = np.where(gap == 0.0, v, v - gap * dudt)
    if not np.all(np.isfinite(target)):
        raise PoisonedStateError("meanflow target")
    return target


def meanflow_objective(net, sample, plan, teacher=None, branch_rng=None, dropout_rng=None):
    """MeanFlow loss and the boundary mask used for it."""
    boundary = draw_branches(sample.x.shape[0], plan.flow_ratio_p, branch_rng)
    sample = drop_condition(net, sample, _training_dropout(plan), dropout_rng)
    v = boundary_target(teacher, sample, plan.cfg_scale_w, plan.mode)
    if boundary.all():
        target = v
    else:
        target = np.array(v, copy=True)
        rest = ~boundary
        target[rest] = meanflow_target(net, subset(sample, rest), v[rest])
    prediction = _predict(net, sample, boundary)
    return regression_loss(prediction, target, plan.loss_norm), boundary


def meanflow_loss(net, sample, plan, teacher=None, branch_rng=None, dropout_rng=None):
    """MeanFlow loss on one batch, with the same branch structure as smf_loss."""
    return meanflow_objective(net, sample, plan, teacher, branch_rng, dropout_rng)[0]


def train(plan, dataset, teacher=None, **kwargs):
    """Train with the MeanFlow objective; see :func:`splitflow.smf.train`."""
    plan = make_plan(**plan._replace(objective="meanflow")._asdict())
    return _train(plan, dataset, teacher=teacher, objective=meanflow_objective, **kwargs)
