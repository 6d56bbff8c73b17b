import numpy as np

from .base import Base
from ..base_classes import SplitflowInputError, substreams
from ..flow import AnalyticField
from ..verify import verify_identities


class Verify(Base):
    """Check the consistency identities on an analytic field"""

    def run(self):
        name = self.options.get("--field") or "time_poly"
        if name not in AnalyticField.kinds:
            raise SplitflowInputError(
                "--field must be one of {k!r}".format(k=AnalyticField.kinds)
            )
        try:
            dim = int(self.options.get("--dim") or 2)
            n = int(self.options.get("--n") or 1000)
            seed = int(self.options.get("--seed") or 0)
        except ValueError as e:
            raise SplitflowInputError(str(e))

        field = AnalyticField.from_name(name, dim)
        report = verify_identities(field, substreams(seed)["probe"], n=n, dim=dim)
        self.emit(
            {
                "field": name,
                "isc_residual_mean": report.isc_residual_mean,
                "isc_residual_max": report.isc_residual_max,
                "meanflow_residual": report.meanflow_residual,
                "limit": {
                    "deltas": np.asarray(report.limit.deltas).tolist(),
                    "errors": np.asarray(report.limit.errors).tolist(),
                    "order": report.limit.order,
                },
            }
        )
