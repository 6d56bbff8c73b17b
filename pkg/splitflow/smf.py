"""Average-velocity training: interval splitting consistency plus boundary targets.

Each batch row is either a *boundary* row (``r`` set to ``t``, target is the
instantaneous velocity) or a *consistency* row, whose target is built from
the network's own average velocity over the two halves of ``[r, t]``::

    u2  = u(z_t, s, t)
    z_s = z_t - (t - s) u2
    u1  = u(z_s, r, s)
    target = (1 - lam) u1 + lam u2

Targets are computed in evaluation mode without recording and enter the
loss as constants.
"""
import logging
import time
from collections import Counter, namedtuple

import numpy as np

from .autodiff import Tape, count_ops, no_grad
from .base_classes import (
    CheckpointDimensionError,
    DivergenceError,
    MissingTeacherError,
    PoisonedStateError,
    SplitflowInputError,
    substreams,
)
from .flow import (
    conditional_velocity,
    make_flow_sample,
    make_time_dist,
    regression_loss,
    subset,
)
from .metrics import isc_residual, make_probes
from .model import VelocityNet, cfg_velocity
from .optim import EMA, Adam

__all__ = [
    "TrainPlan",
    "make_plan",
    "TeacherHandle",
    "LossRecord",
    "TrainResult",
    "boundary_target",
    "isc_target",
    "smf_loss",
    "smf_objective",
    "draw_branches",
    "drop_condition",
    "train",
    "DIVERGENCE_LOSS",
    "DIVERGENCE_PATIENCE",
]
mod_logger = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e3
DIVERGENCE_PATIENCE = 10

TrainPlan = namedtuple(
    "TrainPlan",
    [
        "flow_ratio_p",
        "cfg_scale_w",
        "cfg_dropout_pretrain",
        "cfg_dropout_distill",
        "batch_size",
        "steps",
        "lr",
        "warmup_steps",
        "ema_decay",
        "use_ema",
        "time_dist",
        "seed",
        "mode",
        "teacher",
        "objective",
        "lambda_min",
        "lambda_max",
        "loss_norm",
        "log_every",
    ],
)
TrainPlan.__new__.__defaults__ = (
    0.75,  # flow_ratio_p
    1.0,  # cfg_scale_w
    0.1,  # cfg_dropout_pretrain
    0.0,  # cfg_dropout_distill
    256,  # batch_size
    1000,  # steps
    1e-4,  # lr
    1000,  # warmup_steps
    0.999,  # ema_decay
    True,  # use_ema
    "sorted_uniform",  # time_dist
    0,  # seed
    "distill",  # mode
    None,  # teacher
    "smf",  # objective
    0.05,  # lambda_min
    0.95,  # lambda_max
    "squared",  # loss_norm
    100,  # log_every
)
TrainPlan.__doc__ = """Hyperparameters of one training run.

``flow_ratio_p`` is the fraction of rows trained on the boundary condition.
``mode='from_scratch'`` supervises boundary rows with ``eps - x``;
``mode='distill'`` uses a teacher's guided velocity. ``teacher`` is a
checkpoint path or registered run id, used by the command line only.
"""

MODES = ("from_scratch", "distill")
OBJECTIVES = ("smf", "meanflow")
LOSS_NORMS = ("squared", "l2")


def make_plan(**kwargs):
    """Build and validate a TrainPlan.

    Parameters
    ----------
    **kwargs
        Any TrainPlan field; missing fields take their defaults

    Returns
    -------
    TrainPlan

    Examples
    --------
    >>> make_plan(flow_ratio_p=1.0, mode="from_scratch").flow_ratio_p
    1.0
    """
    unknown = set(kwargs) - set(TrainPlan._fields)
    if unknown:
        raise SplitflowInputError(
            "Unknown TrainPlan fields: {u!r}".format(u=sorted(unknown))
        )
    plan = TrainPlan(**kwargs)

    def require(ok, msg):
        if not ok:
            raise SplitflowInputError(msg)

    require(0.0 < plan.flow_ratio_p <= 1.0, "flow_ratio_p must lie in (0, 1].")
    require(plan.cfg_scale_w >= 0.0, "cfg_scale_w must be nonnegative.")
    require(
        0.0 <= plan.cfg_dropout_pretrain <= 1.0,
        "cfg_dropout_pretrain must lie in [0, 1].",
    )
    require(plan.cfg_dropout_distill == 0.0, "cfg_dropout_distill is fixed at 0.0.")
    require(int(plan.batch_size) == plan.batch_size and plan.batch_size >= 1,
            "batch_size must be a positive integer.")
    require(int(plan.steps) == plan.steps and plan.steps >= 0,
            "steps must be a nonnegative integer.")
    require(plan.lr > 0.0, "lr must be positive.")
    require(plan.warmup_steps >= 0, "warmup_steps must be nonnegative.")
    require(0.0 <= plan.ema_decay < 1.0, "ema_decay must lie in [0, 1).")
    require(int(plan.seed) == plan.seed and plan.seed >= 0,
            "seed must be a nonnegative integer.")
    require(plan.mode in MODES, "mode must be one of {m!r}".format(m=MODES))
    require(plan.objective in OBJECTIVES,
            "objective must be one of {o!r}".format(o=OBJECTIVES))
    require(plan.loss_norm in LOSS_NORMS,
            "loss_norm must be one of {n!r}".format(n=LOSS_NORMS))
    require(0.0 <= plan.lambda_min <= plan.lambda_max <= 1.0,
            "lambda range must satisfy 0 <= lambda_min <= lambda_max <= 1.")
    require(plan.log_every >= 1, "log_every must be a positive integer.")
    time_dist = str(make_time_dist(plan.time_dist))

    return plan._replace(
        batch_size=int(plan.batch_size),
        steps=int(plan.steps),
        warmup_steps=int(plan.warmup_steps),
        seed=int(plan.seed),
        log_every=int(plan.log_every),
        time_dist=time_dist,
    )


def _training_dropout(plan):
    if plan.mode == "from_scratch":
        return plan.cfg_dropout_pretrain
    return plan.cfg_dropout_distill


class TeacherHandle(object):
    """Frozen velocity network providing guided boundary targets.

    Parameters
    ----------
    net : VelocityNet
        Converged flow matching network. The handle keeps its own copy, so
        later changes to ``net`` do not reach the teacher.

    cfg_scale_w : float
        Guidance scale folded into the targets
    """

    def __init__(self, net, cfg_scale_w=1.0):
        if cfg_scale_w < 0:
            raise SplitflowInputError("cfg_scale_w must be nonnegative.")
        self._net = net.copy(role="teacher")
        self._cfg_scale_w = float(cfg_scale_w)

    @property
    def cfg_scale_w(self):
        return self._cfg_scale_w

    @property
    def architecture(self):
        return self._net.architecture

    @property
    def conditional(self):
        return self._net.conditional

    def velocity(self, z, t, cond=None, cfg_scale_w=None):
        """Guided velocity as a numpy array."""
        w = self._cfg_scale_w if cfg_scale_w is None else cfg_scale_w
        return cfg_velocity(self._net, z, t, cond, w)

    def average_velocity(self, z, r, t, cond=None):
        """Unguided u(z, r, t) of the frozen network."""
        return self._net.average_velocity(z, r, t, cond)

    def student_init(self):
        """A trainable copy of the teacher's weights."""
        return self._net.copy(role="student")

    def __repr__(self):
        return "TeacherHandle({net!r}, cfg_scale_w={w!r})".format(
            net=self._net, w=self._cfg_scale_w
        )


def boundary_target(source, sample, cfg_scale_w=None, mode="distill"):
    """Instantaneous velocity target for boundary rows.

    Parameters
    ----------
    source : TeacherHandle or None
        Teacher for ``mode='distill'``; ignored in ``from_scratch`` mode

    sample : FlowSample

    cfg_scale_w : float, optional
        Guidance scale; defaults to the teacher's

    mode : {'distill', 'from_scratch'}

    Returns
    -------
    numpy.ndarray
        Constant target of shape (batch, dim)
    """
    if mode == "from_scratch":
        return conditional_velocity(sample)
    if mode != "distill":
        raise SplitflowInputError("mode must be one of {m!r}".format(m=MODES))
    if source is None:
        raise MissingTeacherError()
    if isinstance(source, VelocityNet):
        source = TeacherHandle(source, 0.0 if cfg_scale_w is None else cfg_scale_w)
    with no_grad():
        return source.velocity(sample.z_t, sample.t, sample.cond, cfg_scale_w)


def isc_target(net, sample):
    """Interval splitting consistency target ``(1 - lam) u1 + lam u2``.

    Runs two evaluation-mode forward passes of ``net``.

    Parameters
    ----------
    net : VelocityNet or AnalyticField

    sample : FlowSample
        Rows with ``r <= s <= t``

    Returns
    -------
    numpy.ndarray
    """
    if np.any(sample.r > sample.s) or np.any(sample.s > sample.t):
        raise SplitflowInputError("isc_target requires r <= s <= t.")
    with no_grad():
        u2 = net.average_velocity(sample.z_t, sample.s, sample.t, sample.cond)
        z_s = sample.z_t - (sample.t - sample.s)[:, None] * u2
        u1 = net.average_velocity(z_s, sample.r, sample.s, sample.cond)
    lam = sample.lam[:, None]
    target = (1.0 - lam) * u1 + lam * u2
    if not np.all(np.isfinite(target)):
        raise PoisonedStateError("isc target")
    return target


def draw_branches(n, flow_ratio_p, rng):
    """Boolean mask of boundary rows; p = 1 consumes no randomness."""
    if flow_ratio_p >= 1.0:
        return np.ones(n, dtype=bool)
    return rng.random(n) < flow_ratio_p


def drop_condition(net, sample, cfg_dropout, rng):
    """Replace each class id with the null id with probability ``cfg_dropout``.

    The mask is drawn once per batch, so the prediction and every target
    built from the returned sample share one condition per row.
    """
    conditional = getattr(net, "conditional", False)
    if cfg_dropout <= 0.0 or sample.cond is None or not conditional:
        return sample
    if rng is None:
        raise SplitflowInputError("CFG dropout in train mode requires an rng.")
    drop = rng.random(sample.x.shape[0]) < cfg_dropout
    cond = np.where(drop, net.null_class_id, np.asarray(sample.cond, dtype=np.int64))
    return sample._replace(cond=cond)


def _predict(net, sample, boundary):
    r_in = np.where(boundary, sample.t, sample.r)
    return net.forward(sample.z_t, r_in, sample.t, sample.cond, train=True)


def smf_objective(net, sample, plan, teacher=None, branch_rng=None, dropout_rng=None):
    """Interval splitting loss and the boundary mask used for it."""
    n = sample.x.shape[0]
    boundary = draw_branches(n, plan.flow_ratio_p, branch_rng)
    sample = drop_condition(net, sample, _training_dropout(plan), dropout_rng)
    if boundary.all():
        target = boundary_target(teacher, sample, plan.cfg_scale_w, plan.mode)
    else:
        target = np.empty_like(sample.z_t)
        if boundary.any():
            target[boundary] = boundary_target(
                teacher, subset(sample, boundary), plan.cfg_scale_w, plan.mode
            )
        target[~boundary] = isc_target(net, subset(sample, ~boundary))
    prediction = _predict(net, sample, boundary)
    return regression_loss(prediction, target, plan.loss_norm), boundary


def smf_loss(net, sample, plan, teacher=None, branch_rng=None, dropout_rng=None):
    """Interval splitting loss on one batch.

    Parameters
    ----------
    net : VelocityNet
        Student network; its parameters may be watched by a Tape

    sample : FlowSample
        Batch with drawn times and lambda

    plan : TrainPlan

    teacher : TeacherHandle, optional
        Required when ``plan.mode == 'distill'`` and boundary rows exist

    branch_rng, dropout_rng : numpy.random.Generator
        Streams for the per-row branch choice and CFG condition dropout

    Returns
    -------
    Tensor
        Scalar loss
    """
    return smf_objective(net, sample, plan, teacher, branch_rng, dropout_rng)[0]


LossRecord = namedtuple(
    "LossRecord", ["step", "objective", "branch_mix", "loss", "isc_residual"]
)
LossRecord.__doc__ = "One row of the training loss log."

TrainResult = namedtuple(
    "TrainResult", ["net", "ema", "history", "op_counts", "step_ms", "bad_steps"]
)
TrainResult.__doc__ = """Outcome of :func:`train`.

``ema`` is a VelocityNet holding the EMA shadow (None when disabled),
``op_counts`` totals the operation counter over all steps and ``step_ms`` is
the mean wall-clock time of a step in milliseconds.
"""


def _objective_for(plan, objective):
    if objective is not None:
        return objective
    if plan.objective == "meanflow":
        from .meanflow import meanflow_objective

        return meanflow_objective
    return smf_objective


def _make_student(plan, dataset, teacher, net, architecture, rng):
    if plan.mode == "distill":
        if teacher is None:
            raise MissingTeacherError()
        if net is None:
            return teacher.student_init()
        if net.architecture != teacher.architecture:
            raise CheckpointDimensionError(
                "student architecture {s!r} does not match teacher {t!r}".format(
                    s=net.architecture, t=teacher.architecture
                )
            )
        return net
    if net is not None:
        return net
    architecture = dict(architecture or {})
    architecture.setdefault("num_classes", dataset.num_classes if dataset.labeled else 0)
    return VelocityNet(dataset.dim, rng=rng, **architecture)


def _ema_net(net, ema):
    if ema is None:
        return None
    shadow = net.copy(role="ema")
    shadow.set_parameters(ema.shadow)
    return shadow


def train(
    plan,
    dataset,
    teacher=None,
    net=None,
    architecture=None,
    objective=None,
    probes=None,
    run_id=None,
):
    """Train a velocity network on ``dataset`` under ``plan``.

    Parameters
    ----------
    plan : TrainPlan

    dataset : ToyDataset

    teacher : TeacherHandle, optional
        Required in distill mode. The student starts from its weights.

    net : VelocityNet, optional
        Starting network; built from ``architecture`` when omitted

    architecture : dict, optional
        Keyword arguments for VelocityNet in from_scratch mode

    objective : callable, optional
        Loss function with the signature of :func:`smf_objective`; chosen
        from ``plan.objective`` when omitted

    probes : Probes, optional
        Fixed probe set for the ISC residual column; drawn from the
        ``probe`` substream when omitted

    run_id : str, optional
        Used in log messages only

    Returns
    -------
    TrainResult
    """
    plan = make_plan(**plan._asdict())
    streams = substreams(plan.seed)
    objective = _objective_for(plan, objective)
    net = _make_student(plan, dataset, teacher, net, architecture, streams["init"])
    label = run_id or "train"

    ema = EMA([p.data for p in net.parameters()], plan.ema_decay) if plan.use_ema else None
    if plan.steps == 0:
        return TrainResult(net, _ema_net(net, ema), [], {}, 0.0, 0)

    if probes is None:
        probes = make_probes(dataset, streams["probe"], lambda_range=(0.0, 1.0))
    adam = Adam([p.shape for p in net.parameters()], plan.lr, plan.warmup_steps)
    lambda_range = (plan.lambda_min, plan.lambda_max)

    history = []
    totals = Counter()
    elapsed = 0.0
    consecutive_bad = 0
    bad_steps = 0
    window_losses = []
    window_mix = []

    for step in range(1, plan.steps + 1):
        x, labels = dataset.sample_batch(plan.batch_size, streams["data"])
        eps = streams["data"].standard_normal(x.shape)
        sample = make_flow_sample(
            x,
            eps,
            streams["times"],
            plan.time_dist,
            cond=labels if net.conditional else None,
            lambda_range=lambda_range,
        )

        started = time.perf_counter()
        loss_value = float("nan")
        updated = False
        with count_ops() as counter, Tape() as tape:
            params = net.parameters()
            tape.watch(*params)
            try:
                loss, boundary = objective(
                    net,
                    sample,
                    plan,
                    teacher,
                    streams["branch"],
                    streams["cfg_dropout"],
                )
                loss_value = loss.item()
                grads = tape.backward(loss)
            except PoisonedStateError as e:
                mod_logger.warning(
                    "{run:s} step {step:d} skipped: {msg:s}".format(
                        run=label, step=step, msg=str(e)
                    )
                )
            else:
                new_params = adam.step(
                    [p.data for p in params], [grads[p].data for p in params]
                )
                net.set_parameters(new_params)
                if ema is not None:
                    ema.update(new_params)
                updated = True
        elapsed += time.perf_counter() - started
        totals.update(counter.counts)

        if updated and loss_value <= DIVERGENCE_LOSS:
            consecutive_bad = 0
            window_losses.append(loss_value)
            window_mix.append(float(np.mean(boundary)))
        else:
            consecutive_bad += 1
            bad_steps += 1
            if consecutive_bad >= DIVERGENCE_PATIENCE:
                raise DivergenceError(step, loss_value)

        if step % plan.log_every == 0 or step == plan.steps:
            residual_mean, _ = isc_residual(net, probes)
            record = LossRecord(
                step=step,
                objective=plan.objective,
                branch_mix=float(np.mean(window_mix)) if window_mix else float("nan"),
                loss=float(np.mean(window_losses)) if window_losses else float("nan"),
                isc_residual=residual_mean,
            )
            history.append(record)
            window_losses, window_mix = [], []
            mod_logger.info(
                "{run:s} step {step:d}/{total:d} loss {loss:.6g} "
                "isc_residual {res:.6g}".format(
                    run=label,
                    step=step,
                    total=plan.steps,
                    loss=record.loss,
                    res=record.isc_residual,
                )
            )

    return TrainResult(
        net=net,
        ema=_ema_net(net, ema),
        history=history,
        op_counts=dict(totals),
        step_ms=1000.0 * elapsed / plan.steps,
        bad_steps=bad_steps,
    )
