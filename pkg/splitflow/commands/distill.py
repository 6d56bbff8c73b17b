from .base import Base


class Distill(Base):
    """Distill an interval splitting student from a teacher"""

    phase = "distill"

    def train(self, run):
        return run.distill(teacher=self.options.get("--teacher"))

    def run(self):
        run = self.open_run()
        result = self.train(run)
        last = result.history[-1] if result.history else None
        self.emit(
            {
                "run": run.name,
                "checkpoint": run.checkpoint_path(self.phase),
                "loss": None if last is None else last.loss,
                "isc_residual": None if last is None else last.isc_residual,
            }
        )
