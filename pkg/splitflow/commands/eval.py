from .base import Base


class Eval(Base):
    """Evaluate few-step samplers against the guided teacher"""

    def run(self):
        run = self.open_run()
        reports = run.evaluate(teacher=self.options.get("--teacher"))
        self.emit({"run": run.name, "reports": [r._asdict() for r in reports]})
