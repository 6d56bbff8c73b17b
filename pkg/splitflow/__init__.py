"""splitflow trains average-velocity fields for one- and few-step sampling."""
import errno
import logging
import os

from . import config  # noqa
from .base_classes import *  # noqa
from .datasets import ToyDataset  # noqa
from .flow import AnalyticField, TimeDistribution, make_flow_sample  # noqa
from .model import VelocityNet, cfg_velocity  # noqa
from .smf import TeacherHandle, TrainPlan, make_plan, smf_loss, train  # noqa
from .meanflow import meanflow_loss  # noqa
from .sampler import euler_sample, few_step_sample  # noqa
from .runner import Run  # noqa
from ._version import version as __version__  # noqa

module_logger = logging.getLogger(__name__)

# get the log level from environment variable
if "SPLITFLOW_LOGLEVEL" in os.environ:
    loglevel = os.environ["SPLITFLOW_LOGLEVEL"]
    module_logger.setLevel(getattr(logging, loglevel.upper()))
else:
    module_logger.setLevel(logging.WARNING)

# create a file handler
logpath = os.environ.get(
    "SPLITFLOW_LOGFILE",
    os.path.join(os.path.expanduser("~"), ".splitflow", "splitflow.log"),
)

# Create the log directory if it doesn't exist
logdir = os.path.dirname(os.path.abspath(logpath))
try:
    os.makedirs(logdir)
except OSError as e:
    pre_existing = e.errno == errno.EEXIST and os.path.isdir(logdir)
    if pre_existing:
        pass
    else:  # pragma: nocover
        raise e

handler = logging.FileHandler(logpath, mode="w")
handler.setLevel(logging.DEBUG)

# create a logging format
formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
handler.setFormatter(formatter)

# add the handlers to the logger
module_logger.addHandler(handler)
module_logger.info("Started new splitflow session")
