# noqa
"""
splitflow

Usage:
  splitflow pretrain [--config=<file>] [options]
  splitflow distill [--config=<file>] [--teacher=<ckpt-or-run>] [options]
  splitflow meanflow-distill [--config=<file>] [--teacher=<ckpt-or-run>] [options]
  splitflow sample [--config=<file>] [--n=<n>] [--grid=<grid>] [options]
  splitflow eval [--config=<file>] [--teacher=<ckpt-or-run>] [options]
  splitflow verify [--field=<name>] [--dim=<d>] [--n=<n>] [--seed=<seed>]
  splitflow prune
  splitflow -h | --help
  splitflow --version

Options:
  -h --help                  Show this screen.
  --version                  Show version.
  --config=<file>            Run config file (INI).
  --name=<name>              Run id, overrides [run] name.
  --seed=<seed>              Master seed.
  --steps=<steps>            Training steps.
  --p=<p>                    Flow ratio, fraction of boundary rows.
  --cfg-scale=<w>            Teacher guidance scale folded into targets.
  --k=<k>                    Sampling steps.
  --out=<dir>                Output directory holding run directories.
  --teacher=<ckpt-or-run>    Teacher checkpoint path or registered run id.
  --n=<n>                    Number of samples or probes.
  --grid=<grid>              'uniform' or descending times, e.g. 1.0,0.4,0.0
  --field=<name>             constant, time_poly or linear_state [default: time_poly]
  --dim=<d>                  Probe dimension [default: 2]

Examples:
  splitflow pretrain --config run.cfg --steps 20000
  splitflow distill --config run.cfg --teacher teacher-run --p 0.75
  splitflow sample --config run.cfg --k 1
  splitflow verify --field time_poly

Errors:
  Failures print one JSON line {"error": <category>, "message": <text>} to
  stderr and exit with a category code: input 2, config 3, teacher 4,
  checkpoint 5, missing 6, divergence 7, poisoned 8, verify 9, other 1.
"""
import json
import logging
import sys
from inspect import getmembers, isclass

from docopt import docopt

from . import __version__ as VERSION
from .base_classes import SplitflowError

__all__ = ["main", "EXIT_CODES"]
mod_logger = logging.getLogger(__name__)

EXIT_CODES = {
    "input": 2,
    "shape": 2,
    "gradient": 1,
    "config": 3,
    "teacher": 4,
    "checkpoint": 5,
    "missing": 6,
    "divergence": 7,
    "poisoned": 8,
    "verify": 9,
}


def _fail(category, message):
    sys.stderr.write(json.dumps({"error": category, "message": message}) + "\n")
    return EXIT_CODES.get(category, 1)


def main(argv=None):
    """Create main CLI entrypoint."""
    import splitflow.commands

    options = docopt(__doc__, argv=argv, version=VERSION)

    # Match the subcommand the user is running with its command class
    for (k, v) in options.items():
        name = k.replace("-", "_")
        if k.startswith("-") or not v or not hasattr(splitflow.commands, name):
            continue
        module = getattr(splitflow.commands, name)
        members = getmembers(module, isclass)
        command = [
            c[1]
            for c in members
            if c[0] != "Base" and c[1].__module__ == module.__name__
        ][0]
        try:
            command(options).run()
        except SplitflowError as e:
            mod_logger.error(
                "{cmd:s} failed: {msg:s}".format(cmd=k, msg=str(e))
            )
            return _fail(e.category, str(e))
        except (OSError, ValueError) as e:
            return _fail("other", str(e))
        return 0
    return _fail("input", "no subcommand given")
