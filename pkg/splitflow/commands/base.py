"""The base command for the splitflow CLI."""
import json
import logging

from ..base_classes import ResourceDoesNotExistException
from ..config import CLI_OVERRIDES, read_run_config
from ..runner import Run

mod_logger = logging.getLogger(__name__)


class Base(object):
    """A base command."""

    def __init__(self, options, *args, **kwargs):
        self.options = options
        self.args = args
        self.kwargs = kwargs

    def overrides(self):
        """Config overrides given as command line flags."""
        return {
            target: self.options[flag]
            for flag, target in CLI_OVERRIDES.items()
            if self.options.get(flag) is not None
        }

    def settings(self):
        return read_run_config(self.options.get("--config"), self.overrides())

    def open_run(self):
        """Reopen a registered run given only --name, else start from the config."""
        name = self.options.get("--name")
        if name and not self.options.get("--config"):
            try:
                return Run.from_id(name, self.overrides())
            except ResourceDoesNotExistException:
                mod_logger.debug("Run {name:s} is not registered yet".format(name=name))
        return Run(self.settings(), name=name)

    def emit(self, payload):
        """Print a JSON result line to stdout."""
        print(json.dumps(payload, sort_keys=True))

    def run(self):
        raise NotImplementedError(
            "This is a base class. You must implement the run() "
            "method yourself for child classes."
        )
