from .distill import Distill


class MeanflowDistill(Distill):
    """Distill a student with the MeanFlow objective"""

    phase = "meanflow_distill"

    def train(self, run):
        return run.meanflow_distill(teacher=self.options.get("--teacher"))
