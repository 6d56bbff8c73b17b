"""Identity checks of average-velocity fields against their exact relations."""
import logging
from collections import namedtuple

import numpy as np

from .base_classes import VerificationError
from .flow import FlowSample, subset
from .meanflow import meanflow_target
from .metrics import isc_residual, limit_theorem_check, make_probes

__all__ = ["IdentityReport", "verify_identities", "TOLERANCES"]
mod_logger = logging.getLogger(__name__)

TOLERANCES = {
    "isc_residual": 1e-10,
    "meanflow_residual": 1e-8,
    "limit_order": (0.9, 1.1),
}

IdentityReport = namedtuple(
    "IdentityReport",
    ["field", "isc_residual_mean", "isc_residual_max", "meanflow_residual", "limit"],
)


def _meanflow_residual(field, probes):
    sample = FlowSample(
        x=probes.z_t,
        eps=probes.z_t,
        t=probes.t,
        r=probes.r,
        lam=probes.lam,
        s=probes.s,
        z_t=probes.z_t,
        cond=None,
    )
    # the analytic tensor forward is undefined at r == t
    sample = subset(sample, probes.t > probes.r)
    v = field.velocity(sample.z_t, sample.t)
    target = meanflow_target(field, sample, v)
    exact = field.average_velocity(sample.z_t, sample.r, sample.t)
    return float(np.max(np.abs(target - exact)))


def verify_identities(field, rng, n=1000, dim=2, strict=True):
    """Check the splitting, differential and limit identities of ``field``.

    Parameters
    ----------
    field : AnalyticField
        A field with a closed-form average velocity

    rng : numpy.random.Generator

    n : int
        Number of probes
        Default: 1000

    dim : int
        State dimension of the probes
        Default: 2

    strict : bool
        Raise VerificationError when a tolerance is exceeded
        Default: True

    Returns
    -------
    IdentityReport
    """
    probes = make_probes(dim, rng, n=n)
    res_mean, res_max = isc_residual(field, probes)
    mf_residual = _meanflow_residual(field, probes)

    m = min(n, 64)
    z_t = rng.standard_normal((m, dim))
    r = rng.uniform(0.0, 0.4, size=m)
    t = rng.uniform(0.6, 1.0, size=m)
    limit = limit_theorem_check(field, z_t, r, t)

    report = IdentityReport(
        field=repr(field),
        isc_residual_mean=res_mean,
        isc_residual_max=res_max,
        meanflow_residual=mf_residual,
        limit=limit,
    )
    mod_logger.info(
        "verified {field:s}: isc max {isc:.3g}, meanflow {mf:.3g}, order {order!r}".format(
            field=report.field, isc=res_max, mf=mf_residual, order=limit.order
        )
    )

    failures = []
    if not res_max < TOLERANCES["isc_residual"]:
        failures.append(
            "isc residual {v:.3g} >= {tol:g}".format(v=res_max, tol=TOLERANCES["isc_residual"])
        )
    if not mf_residual < TOLERANCES["meanflow_residual"]:
        failures.append(
            "meanflow residual {v:.3g} >= {tol:g}".format(
                v=mf_residual, tol=TOLERANCES["meanflow_residual"]
            )
        )
    lo, hi = TOLERANCES["limit_order"]
    if limit.order is not None and not lo <= limit.order <= hi:
        failures.append(
            "limit order {v:.3g} outside [{lo:g}, {hi:g}]".format(v=limit.order, lo=lo, hi=hi)
        )
    if failures and strict:
        raise VerificationError(failures)
    return report
