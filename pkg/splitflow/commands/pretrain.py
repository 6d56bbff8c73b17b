from .base import Base


class Pretrain(Base):
    """Train the flow matching teacher (flow ratio 1, CFG dropout on)"""

    def run(self):
        run = self.open_run()
        result = run.pretrain()
        self.emit(
            {
                "run": run.name,
                "checkpoint": run.checkpoint_path("pretrain"),
                "steps": run.settings.plan.steps,
                "step_ms": result.step_ms,
            }
        )
