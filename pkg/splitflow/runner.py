"""Run objects own a run directory and drive training, sampling and evaluation.

Run directory layout::

    <out>/<run_id>/
        config.ini          snapshot of the settings in effect
        checkpoints/        <phase>.ckpt per training phase
        metrics.csv         training loss log (deterministic values only)
        samples.csv         last sampler output
        reports.csv         evaluation MetricReport rows, wall-clock included
        summary.json        per-phase summary with operation counts and timing
"""
import json
import logging
import os
import shutil
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import checkpoint
from .base_classes import (
    MissingTeacherError,
    NamedObject,
    ResourceDoesNotExistException,
    SplitflowInputError,
    substreams,
)
from .config import (
    add_resource,
    get_run_dir,
    read_run_config,
    remove_resource,
    write_run_config,
)
from .datasets import ToyDataset
from .metrics import (
    LIMIT_DELTAS,
    append_csv,
    boundary_gap,
    isc_residual,
    limit_theorem_check,
    make_probes,
    make_report,
    mmd_rbf,
    w2_1d,
)
from .sampler import euler_sample, few_step_sample
from .smf import LossRecord, TeacherHandle, train

__all__ = ["Run", "METRICS_FIELDS", "REPORT_FIELDS", "evaluation_limit_check"]
mod_logger = logging.getLogger(__name__)

METRICS_FIELDS = ["phase"] + list(LossRecord._fields)
REPORT_FIELDS = [
    "run_id",
    "step",
    "sampler",
    "mmd_rbf",
    "w2_1d",
    "isc_residual_mean",
    "isc_residual_max",
    "boundary_gap",
    "limit_slope",
    "wall_ms",
]


def evaluation_limit_check(field, points):
    """Limit check of ``field`` on the evaluation points wide enough for every delta.

    Returns None when no point has ``t - r >= max(LIMIT_DELTAS)``.
    """
    wide = points.t - LIMIT_DELTAS.max() >= points.r
    if not wide.any():
        return None
    cond = points.cond[wide] if field.conditional and points.cond is not None else None
    return limit_theorem_check(
        field, points.z_t[wide], points.r[wide], points.t[wide], cond=cond
    )


def _resolve_checkpoint(source):
    """Checkpoint path for a path, a run directory or a registered run id."""
    if os.path.isfile(source):
        return source
    if os.path.isdir(source):
        run_dir = source
    else:
        run_dir = get_run_dir(source)
    for phase in ("pretrain", "distill", "meanflow_distill"):
        path = os.path.join(run_dir, "checkpoints", phase + ".ckpt")
        if os.path.isfile(path):
            return path
    raise ResourceDoesNotExistException(
        "No checkpoint found for {src:s}".format(src=source), source
    )


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class Run(NamedObject):
    """A named experiment with its own directory and registry entry.

    Parameters
    ----------
    settings : RunSettings, optional
        Parsed run config; defaults to the built-in defaults

    name : str, optional
        Run id; defaults to ``settings.run['name']``. Must satisfy the
        regular expression pattern: [a-zA-Z][-a-zA-Z0-9]*
    """

    def __init__(self, settings=None, name=None):
        settings = settings if settings is not None else read_run_config()
        name = name if name is not None else settings.run["name"]
        super(Run, self).__init__(name=name)

        self._settings = settings
        self._run_dir = os.path.abspath(os.path.join(settings.run["out"], self.name))
        os.makedirs(os.path.join(self._run_dir, "checkpoints"), exist_ok=True)
        if not os.path.isfile(self.config_path):
            write_run_config(settings, self.config_path)
        add_resource("runs", self.name, self._run_dir)

        self._dataset = ToyDataset(
            settings.data["kind"],
            labeled=settings.data["labeled"],
            noise=settings.data["noise"],
        )
        self._clobbered = False
        mod_logger.info(
            "Run {name:s} uses directory {path:s}".format(
                name=self.name, path=self._run_dir
            )
        )

    @classmethod
    def from_id(cls, run_id, overrides=None):
        """Reopen a registered run from its config snapshot."""
        run_dir = get_run_dir(run_id)
        settings = read_run_config(os.path.join(run_dir, "config.ini"), overrides)
        settings.run["out"] = os.path.dirname(run_dir)
        return cls(settings, name=os.path.basename(run_dir))

    @property
    def settings(self):
        return self._settings

    @property
    def dataset(self):
        return self._dataset

    @property
    def run_dir(self):
        return self._run_dir

    @property
    def config_path(self):
        return os.path.join(self._run_dir, "config.ini")

    @property
    def metrics_path(self):
        return os.path.join(self._run_dir, "metrics.csv")

    @property
    def samples_path(self):
        return os.path.join(self._run_dir, "samples.csv")

    @property
    def reports_path(self):
        return os.path.join(self._run_dir, "reports.csv")

    @property
    def summary_path(self):
        return os.path.join(self._run_dir, "summary.json")

    @property
    def clobbered(self):
        return self._clobbered

    def checkpoint_path(self, phase):
        return os.path.join(self._run_dir, "checkpoints", phase + ".ckpt")

    def _check_alive(self):
        if self._clobbered:
            raise ResourceDoesNotExistException(
                "This run has already been clobbered.", self.name
            )

    def _update_summary(self, key, value):
        summary = {}
        if os.path.isfile(self.summary_path):
            with open(self.summary_path) as f:
                summary = json.load(f)
        summary[key] = value
        with open(self.summary_path, "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)

    def _load_teacher(self, source=None):
        source = source or self._settings.plan.teacher
        if not source:
            raise MissingTeacherError()
        net, ema, _ = checkpoint.load(_resolve_checkpoint(source))
        return TeacherHandle(ema if ema is not None else net, self._settings.plan.cfg_scale_w)

    def _train_phase(self, phase, plan, teacher=None):
        self._check_alive()
        model = dict(self._settings.model)
        result = train(
            plan,
            self._dataset,
            teacher=teacher,
            architecture=model if teacher is None else None,
            run_id=self.name,
        )
        append_csv(
            self.metrics_path,
            [dict(r._asdict(), phase=phase) for r in result.history],
            METRICS_FIELDS,
        )
        checkpoint.save(result.net, self.checkpoint_path(phase), ema=result.ema, plan=plan)

        steps = max(plan.steps, 1)
        per_step = {k: v / steps for k, v in sorted(result.op_counts.items())}
        self._update_summary(
            phase,
            {
                "objective": plan.objective,
                "mode": plan.mode,
                "flow_ratio_p": plan.flow_ratio_p,
                "steps": plan.steps,
                "step_ms": result.step_ms,
                "bad_steps": result.bad_steps,
                "ops_per_step": per_step,
                "final_loss": result.history[-1].loss if result.history else None,
                "final_isc_residual": (
                    result.history[-1].isc_residual if result.history else None
                ),
            },
        )
        mod_logger.info(
            "Run {name:s} finished {phase:s} in {n:d} steps".format(
                name=self.name, phase=phase, n=plan.steps
            )
        )
        return result

    def pretrain(self):
        """Flow matching pretraining: every row on the boundary, CFG dropout on."""
        plan = self._settings.plan._replace(
            mode="from_scratch", flow_ratio_p=1.0, objective="smf"
        )
        return self._train_phase("pretrain", plan)

    def distill(self, teacher=None):
        """Interval splitting distillation from a teacher checkpoint or run id."""
        plan = self._settings.plan._replace(mode="distill", objective="smf")
        return self._train_phase("distill", plan, self._load_teacher(teacher))

    def meanflow_distill(self, teacher=None):
        """MeanFlow distillation under the same plan as :meth:`distill`."""
        plan = self._settings.plan._replace(mode="distill", objective="meanflow")
        return self._train_phase("meanflow_distill", plan, self._load_teacher(teacher))

    def latest_model(self):
        """Sampling network of the most recent training phase (EMA if saved)."""
        for phase in ("meanflow_distill", "distill", "pretrain"):
            path = self.checkpoint_path(phase)
            if os.path.isfile(path):
                net, ema, _ = checkpoint.load(path)
                use_ema = ema is not None and self._settings.plan.use_ema
                return ema if use_ema else net
        raise ResourceDoesNotExistException(
            "Run {name:s} has no checkpoints yet.".format(name=self.name), self.name
        )

    def _class_ids(self, net, n, rng):
        if not net.conditional:
            return None
        return rng.integers(0, net.num_classes, size=n)

    def sample(self, k=None, n=None, grid=None):
        """Draw ``n`` points with the k-step sampler and write samples.csv."""
        self._check_alive()
        opts = self._settings.sample
        k = opts["k"] if k is None else int(k)
        n = opts["n"] if n is None else int(n)
        grid = opts["grid"] if grid is None else grid
        if n < 1:
            raise SplitflowInputError("n must be a positive integer.")

        net = self.latest_model()
        rng = substreams(self._settings.run["seed"])["eval"]
        eps = rng.standard_normal((n, net.data_dim))
        cond = self._class_ids(net, n, rng)
        points = few_step_sample(net, k, eps, cond=cond, grid=grid)

        header = ["x{i:d}".format(i=i) for i in range(net.data_dim)]
        table = points
        fmt = ["%.17g"] * net.data_dim
        if cond is not None:
            header.append("cond")
            table = np.hstack([points, cond[:, None]])
            fmt.append("%d")
        np.savetxt(
            self.samples_path,
            table,
            delimiter=",",
            header=",".join(header),
            comments="",
            fmt=fmt,
        )
        mod_logger.info(
            "Run {name:s} wrote {n:d} samples ({k:d} steps) to {path:s}".format(
                name=self.name, n=n, k=k, path=self.samples_path
            )
        )
        return points

    def evaluate(self, teacher=None, ks=(1, 2), max_workers=4):
        """Compare few-step student samples with the teacher's guided Euler samples.

        Each sampler gets its own prior draws, drawn up front from the
        ``eval`` stream so results do not depend on thread scheduling.

        Returns
        -------
        list of MetricReport
        """
        self._check_alive()
        streams = substreams(self._settings.run["seed"])
        student = self.latest_model()
        try:
            teacher = self._load_teacher(teacher)
        except MissingTeacherError:
            teacher = None

        n_eval = self._settings.data["n_eval"]
        held_out, _ = self._dataset.sample_batch(n_eval, streams["eval"])
        probes = make_probes(self._dataset, streams["probe"])

        tasks = []
        for k in ks:
            eps = streams["eval"].standard_normal((n_eval, student.data_dim))
            cond = self._class_ids(student, n_eval, streams["eval"])
            tasks.append(
                ("few_step_{k:d}".format(k=k), student,
                 lambda eps=eps, cond=cond, k=k: few_step_sample(student, k, eps, cond))
            )
        if teacher is not None:
            n_steps = self._settings.sample["euler_steps"]
            eps = streams["eval"].standard_normal((n_eval, student.data_dim))
            cond = self._class_ids(student, n_eval, streams["eval"])
            tasks.append(
                ("teacher_euler_{n:d}".format(n=n_steps), teacher,
                 lambda eps=eps, cond=cond: euler_sample(
                     teacher, n_steps, eps, cond, cfg_scale=None))
            )

        def run_task(task):
            label, field, fn = task
            started = time.perf_counter()
            points = fn()
            wall_ms = 1000.0 * (time.perf_counter() - started)
            res_mean, res_max = isc_residual(field, probes)
            return make_report(
                run_id=self.name,
                step=self._settings.plan.steps,
                sampler=label,
                mmd_rbf=mmd_rbf(points, held_out),
                w2_1d=w2_1d(points, held_out) if student.data_dim == 1 else None,
                isc_residual_mean=res_mean,
                isc_residual_max=res_max,
                wall_ms=wall_ms,
            )

        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            reports = list(executor.map(run_task, tasks))

        student_values = {}
        limit = evaluation_limit_check(student, probes)
        if limit is not None:
            student_values["limit_slope"] = limit.order
        if teacher is not None:
            z = probes.z_t
            cond = probes.cond if student.conditional else None
            student_values["boundary_gap"] = boundary_gap(
                student, teacher.velocity(z, probes.t, cond), z, probes.t, cond
            )
        reports = [
            r._replace(**student_values) if r.sampler.startswith("few") else r
            for r in reports
        ]

        append_csv(self.reports_path, reports, REPORT_FIELDS)
        self._update_summary("evaluate", {r.sampler: r._asdict() for r in reports})
        for r in reports:
            mod_logger.info(
                "Run {name:s} {sampler:s}: mmd {mmd:.4g}".format(
                    name=self.name, sampler=r.sampler, mmd=r.mmd_rbf
                )
            )
        return reports

    def clobber(self):
        """Delete the run directory and its registry entry."""
        if self._clobbered:
            return
        shutil.rmtree(self._run_dir, ignore_errors=True)
        remove_resource("runs", self.name)
        self._clobbered = True
        mod_logger.info("Clobbered run {name:s}".format(name=self.name))
