"""Sample-quality metrics and identity diagnostics for average-velocity fields."""
import csv
import logging
import os
from collections import namedtuple

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .base_classes import PoisonedStateError, SplitflowInputError
from .flow import make_flow_sample

__all__ = [
    "MetricReport",
    "make_report",
    "mmd_rbf",
    "median_bandwidth",
    "w2_1d",
    "Probes",
    "make_probes",
    "isc_residual",
    "LimitCheck",
    "limit_theorem_check",
    "boundary_gap",
    "append_csv",
    "LIMIT_DELTAS",
]
mod_logger = logging.getLogger(__name__)

LIMIT_DELTAS = np.geomspace(1e-1, 1e-6, 11)
# difference quotients at delta=1e-6 lose about 10 digits
ROUNDOFF_LEVEL = 1e-9

MetricReport = namedtuple(
    "MetricReport",
    [
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
    ],
)
MetricReport.__new__.__defaults__ = (None,) * len(MetricReport._fields)
MetricReport.__doc__ = """One row of evaluation results; unset scalars are None."""

_SCALARS = (
    "mmd_rbf",
    "w2_1d",
    "isc_residual_mean",
    "isc_residual_max",
    "boundary_gap",
    "limit_slope",
    "wall_ms",
)


def make_report(**kwargs):
    """Build a MetricReport, rejecting non-finite scalars."""
    report = MetricReport(**kwargs)
    for name in _SCALARS:
        value = getattr(report, name)
        if value is not None and not np.isfinite(value):
            raise PoisonedStateError("metric {name:s}".format(name=name))
    return report


def _as_points(a, label):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise SplitflowInputError("{label:s} must be a nonempty point set.".format(label=label))
    return a


def median_bandwidth(a, b):
    """Median pairwise distance of the pooled sets, 1.0 if it is zero."""
    pooled = np.concatenate([a, b], axis=0)
    if pooled.shape[0] < 2:
        return 1.0
    dists = pdist(pooled)
    dists = dists[dists > 0]
    return float(np.median(dists)) if dists.size else 1.0


def mmd_rbf(a, b, bandwidth=None, unbiased=True):
    """Squared maximum mean discrepancy with kernel ``exp(-d^2 / (2 bw^2))``.

    Parameters
    ----------
    a, b : array of shape (n, dim) or (n,)
        Point sets of the same dimension

    bandwidth : float, optional
        Kernel bandwidth; the median pairwise distance of the pooled sets
        when omitted

    unbiased : bool
        Drop the diagonal terms of the within-set sums
        Default: True

    Returns
    -------
    float
        The unbiased estimate can be slightly negative.

    Examples
    --------
    >>> x = np.array([[0.0], [1.0], [2.0]])
    >>> mmd_rbf(x, x, bandwidth=1.0, unbiased=False)
    0.0
    """
    a = _as_points(a, "A")
    b = _as_points(b, "B")
    if a.shape[1] != b.shape[1]:
        raise SplitflowInputError("mmd_rbf point sets differ in dimension.")
    if unbiased and (a.shape[0] < 2 or b.shape[0] < 2):
        raise SplitflowInputError("unbiased mmd_rbf needs at least 2 points per set.")
    bw = median_bandwidth(a, b) if bandwidth is None else float(bandwidth)
    if bw <= 0:
        raise SplitflowInputError("bandwidth must be positive.")

    def kernel(x, y):
        return np.exp(-cdist(x, y, "sqeuclidean") / (2.0 * bw * bw))

    kaa, kbb, kab = kernel(a, a), kernel(b, b), kernel(a, b)
    n, m = a.shape[0], b.shape[0]
    if unbiased:
        np.fill_diagonal(kaa, 0.0)
        np.fill_diagonal(kbb, 0.0)
        value = kaa.sum() / (n * (n - 1)) + kbb.sum() / (m * (m - 1)) - 2.0 * kab.mean()
    else:
        value = kaa.mean() + kbb.mean() - 2.0 * kab.mean()
    return float(value)


def w2_1d(a, b):
    """Empirical 2-Wasserstein distance between 1-D samples.

    Unequal sizes are reconciled by evaluating both empirical quantile
    functions on the larger size's grid.

    Examples
    --------
    >>> w2_1d([0.0, 1.0, 2.0], [3.0, 4.0, 5.0])
    3.0
    """
    a = np.sort(np.asarray(a, dtype=np.float64).reshape(-1))
    b = np.sort(np.asarray(b, dtype=np.float64).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise SplitflowInputError("w2_1d needs nonempty samples.")
    if a.size != b.size:
        n = max(a.size, b.size)
        levels = (np.arange(n) + 0.5) / n
        a = np.quantile(a, levels, method="inverted_cdf")
        b = np.quantile(b, levels, method="inverted_cdf")
    return float(np.sqrt(np.mean((a - b) ** 2)))


Probes = namedtuple("Probes", ["z_t", "r", "s", "t", "lam", "cond"])
Probes.__doc__ = """Fixed evaluation points with ``r <= s <= t`` and ``s = (1-lam) t + lam r``."""


def make_probes(source, rng, n=256, lambda_range=(0.0, 1.0), time_dist="sorted_uniform"):
    """Draw a probe set on the flow path.

    Parameters
    ----------
    source : ToyDataset or int
        Dataset to draw ``x`` from, or a dimension for standard normal ``x``

    rng : numpy.random.Generator

    n : int
        Number of probes
        Default: 256

    Returns
    -------
    Probes
    """
    if isinstance(source, (int, np.integer)):
        x, labels = rng.standard_normal((n, int(source))), None
    else:
        x, labels = source.sample_batch(n, rng)
    eps = rng.standard_normal(x.shape)
    sample = make_flow_sample(
        x, eps, rng, time_dist, cond=labels, lambda_range=lambda_range
    )
    return Probes(sample.z_t, sample.r, sample.s, sample.t, sample.lam, sample.cond)


def isc_residual(field, probes):
    """Interval splitting residual of a field on fixed probes.

    For each probe the field's own displacement map gives
    ``z_s = z_t - (t - s) u(z_t, s, t)`` and the residual is
    ``|| u(z_t, r, t) - (1 - lam) u(z_s, r, s) - lam u(z_t, s, t) ||``.

    Returns
    -------
    (float, float)
        Mean and max residual
    """
    cond = probes.cond if getattr(field, "conditional", False) else None
    u_rt = field.average_velocity(probes.z_t, probes.r, probes.t, cond)
    u_st = field.average_velocity(probes.z_t, probes.s, probes.t, cond)
    z_s = probes.z_t - (probes.t - probes.s)[:, None] * u_st
    u_rs = field.average_velocity(z_s, probes.r, probes.s, cond)
    lam = probes.lam[:, None]
    residual = np.linalg.norm(u_rt - (1.0 - lam) * u_rs - lam * u_st, axis=1)
    return float(residual.mean()), float(residual.max())


LimitCheck = namedtuple("LimitCheck", ["deltas", "errors", "order"])
LimitCheck.__doc__ = """Convergence table of the difference quotient of g.

``order`` is the fitted log-log slope of error against delta, or None when
every error is at round-off level.
"""


def limit_theorem_check(field, z_t, r, t, deltas=LIMIT_DELTAS, cond=None):
    """Check that the difference quotient of ``g(tau) = (tau - r) u(z_tau, r, tau)`` tends to v.

    With ``s = t - delta`` and ``z_s`` from the field's displacement map,
    the quotient ``(g(t) - g(s)) / (t - s)`` should approach ``v(z_t, t)``
    as delta shrinks.

    Parameters
    ----------
    field : VelocityNet or AnalyticField

    z_t : array of shape (n, dim)

    r, t : array of shape (n,) or float
        Requires ``t - max(deltas) >= r``

    deltas : sequence of float
        Default: 11 geometric values from 1e-1 to 1e-6

    Returns
    -------
    LimitCheck
    """
    z_t = np.atleast_2d(np.asarray(z_t, dtype=np.float64))
    n = z_t.shape[0]
    r = np.broadcast_to(np.asarray(r, dtype=np.float64), (n,))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    deltas = np.asarray(deltas, dtype=np.float64)
    if np.any(t - deltas.max() < r):
        raise SplitflowInputError("limit_theorem_check needs t - max(delta) >= r.")

    v = field.average_velocity(z_t, t, t, cond)
    g_t = (t - r)[:, None] * field.average_velocity(z_t, r, t, cond)
    errors = []
    for delta in deltas:
        s = t - delta
        z_s = z_t - delta * field.average_velocity(z_t, s, t, cond)
        g_s = (s - r)[:, None] * field.average_velocity(z_s, r, s, cond)
        quotient = (g_t - g_s) / delta
        errors.append(float(np.mean(np.linalg.norm(quotient - v, axis=1))))
    errors = np.array(errors)

    usable = errors > ROUNDOFF_LEVEL
    order = None
    if usable.sum() >= 2:
        order = float(np.polyfit(np.log(deltas[usable]), np.log(errors[usable]), 1)[0])
    return LimitCheck(deltas=deltas, errors=errors, order=order)


def boundary_gap(field, target_v, z_t, t, cond=None):
    """Relative boundary error ``E||u(z_t, t, t) - v||^2 / E||v||^2``."""
    target_v = np.asarray(target_v, dtype=np.float64)
    pred = field.average_velocity(z_t, t, t, cond)
    denom = np.mean(np.sum(target_v ** 2, axis=1))
    if denom == 0:
        raise SplitflowInputError("boundary_gap target velocity is identically zero.")
    return float(np.mean(np.sum((pred - target_v) ** 2, axis=1)) / denom)


def _format(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def append_csv(path, rows, fieldnames):
    """Append rows (namedtuples or dicts) to a CSV file, writing the header once."""
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(fieldnames)
        for row in rows:
            mapping = row._asdict() if hasattr(row, "_asdict") else dict(row)
            writer.writerow([_format(mapping.get(k)) for k in fieldnames])
    return path
