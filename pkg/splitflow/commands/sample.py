from .base import Base


class Sample(Base):
    """Write few-step samples of the latest model to samples.csv"""

    def run(self):
        run = self.open_run()
        n = self.options.get("--n")
        points = run.sample(
            k=self.options.get("--k"),
            n=None if n is None else int(n),
            grid=self.options.get("--grid"),
        )
        self.emit({"run": run.name, "samples": run.samples_path, "n": len(points)})
