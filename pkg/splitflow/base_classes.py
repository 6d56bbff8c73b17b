"""Exceptions, named objects and seeded random substreams shared by splitflow."""
import logging
import re
import zlib

import numpy as np

__all__ = [
    "SplitflowError",
    "SplitflowInputError",
    "ShapeError",
    "GradientError",
    "PoisonedStateError",
    "DivergenceError",
    "MissingTeacherError",
    "ConfigKeyError",
    "SplitflowConfigurationError",
    "CheckpointError",
    "CheckpointVersionError",
    "CheckpointTruncatedError",
    "CheckpointDimensionError",
    "ResourceDoesNotExistException",
    "VerificationError",
    "NamedObject",
    "substreams",
    "STREAM_NAMES",
]
mod_logger = logging.getLogger(__name__)

STREAM_NAMES = ("init", "data", "times", "branch", "cfg_dropout", "eval", "probe")


def substreams(seed, names=STREAM_NAMES):
    """Derive independent random generators from one master seed.

    Each named stream gets its own ``SeedSequence`` spawn key computed from
    the stream name, so adding a stream never shifts the others.

    Parameters
    ----------
    seed : int
        Master seed for the run

    names : sequence of str
        Names of the streams to create

    Returns
    -------
    dict
        Mapping from stream name to ``numpy.random.Generator``

    Examples
    --------
    >>> a = substreams(7)["data"].random()
    >>> b = substreams(7)["data"].random()
    >>> a == b
    True
    """
    if int(seed) < 0:
        raise SplitflowInputError("seed must be a nonnegative integer.")

    streams = {}
    for name in names:
        key = zlib.crc32(name.encode("utf-8"))
        seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))
        streams[name] = np.random.default_rng(seq)
    return streams


class SplitflowError(Exception):
    """Base class for all splitflow errors"""

    category = "error"


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class SplitflowInputError(SplitflowError):
    """Error indicating an input argument has an invalid value"""

    category = "input"

    def __init__(self, msg):
        """Initialize the Exception

        Parameters
        ----------
        msg : string
            The error message
        """
        super(SplitflowInputError, self).__init__(msg)


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class ShapeError(SplitflowError):
    """Error indicating that operand shapes are incompatible"""

    category = "shape"

    def __init__(self, op, *shapes):
        """Initialize the Exception

        Parameters
        ----------
        op : string
            Name of the primitive that rejected its operands

        shapes : tuples
            Shapes of the offending operands, in argument order
        """
        super(ShapeError, self).__init__(
            "{op:s}: incompatible shapes {shapes:s}".format(
                op=op, shapes=" and ".join(str(tuple(s)) for s in shapes)
            )
        )
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class GradientError(SplitflowError):
    """Error indicating that a backward pass was requested on a bad loss"""

    category = "gradient"

    def __init__(self, msg):
        super(GradientError, self).__init__(msg)


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class PoisonedStateError(SplitflowError):
    """Error indicating a NaN or Inf reached the model state"""

    category = "poisoned"

    def __init__(self, where):
        """Initialize the Exception

        Parameters
        ----------
        where : string
            Description of the computation that produced non-finite values
        """
        super(PoisonedStateError, self).__init__(
            "Non-finite values produced by {where:s}".format(where=where)
        )
        self.where = where


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class DivergenceError(SplitflowError):
    """Error indicating that training diverged"""

    category = "divergence"

    def __init__(self, step, loss):
        """Initialize the Exception

        Parameters
        ----------
        step : int
            Training step at which the divergence guard tripped

        loss : float
            Last observed loss value
        """
        super(DivergenceError, self).__init__(
            "Training diverged at step {step:d} (last loss {loss!r})".format(
                step=step, loss=loss
            )
        )
        self.step = step
        self.loss = loss


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class MissingTeacherError(SplitflowError):
    """Error indicating that distillation was requested without a teacher"""

    category = "teacher"

    def __init__(self):
        super(MissingTeacherError, self).__init__(
            "Distill mode requires a teacher checkpoint. Run `splitflow "
            "pretrain` first and pass its checkpoint or run id with "
            "--teacher, or set `teacher` in the [train] section."
        )


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class ConfigKeyError(SplitflowError):
    """Error indicating an unknown key in a run config file"""

    category = "config"

    def __init__(self, key, section):
        """Initialize the Exception

        Parameters
        ----------
        key : string
            The offending key

        section : string
            The section in which the key appeared
        """
        super(ConfigKeyError, self).__init__(
            "Unknown config key {key!r} in section [{section:s}]".format(
                key=key, section=section
            )
        )
        self.key = key
        self.section = section


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class SplitflowConfigurationError(SplitflowError):
    """Error indicating a malformed config file"""

    category = "config"

    def __init__(self, config_file, msg):
        """Initialize the Exception

        Parameters
        ----------
        config_file : string
            Path to the config file

        msg : string
            What is wrong with it
        """
        super(SplitflowConfigurationError, self).__init__(
            "{fn!s}: {msg:s}".format(fn=config_file, msg=msg)
        )
        self.config_file = config_file


class CheckpointError(SplitflowError):
    """Base class for unreadable or inconsistent checkpoints"""

    category = "checkpoint"


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class CheckpointVersionError(CheckpointError):
    """Error indicating an unsupported checkpoint format version"""

    def __init__(self, found, expected):
        super(CheckpointVersionError, self).__init__(
            "Checkpoint format version {found!r} is not supported "
            "(expected {expected!r})".format(found=found, expected=expected)
        )
        self.found = found
        self.expected = expected


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class CheckpointTruncatedError(CheckpointError):
    """Error indicating the parameter block is shorter or longer than declared"""

    def __init__(self, expected, found):
        """Initialize the Exception

        Parameters
        ----------
        expected : int
            Byte length declared in the header

        found : int
            Byte length actually present after the header
        """
        super(CheckpointTruncatedError, self).__init__(
            "Checkpoint parameter block has {found:d} bytes, header declares "
            "{expected:d}".format(found=found, expected=expected)
        )
        self.expected = expected
        self.found = found


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class CheckpointDimensionError(CheckpointError):
    """Error indicating architecture dimensions do not agree"""

    def __init__(self, msg):
        super(CheckpointDimensionError, self).__init__(msg)


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class ResourceDoesNotExistException(SplitflowError):
    """Exception indicating that a requested run does not exist"""

    category = "missing"

    def __init__(self, message, resource_id):
        """Initialize the Exception

        Parameters
        ----------
        message : string
            The error message to display to the user

        resource_id : string
            The run id or path that could not be found
        """
        super(ResourceDoesNotExistException, self).__init__(message)
        self.resource_id = resource_id


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class VerificationError(SplitflowError):
    """Error indicating that an identity check exceeded its tolerance"""

    category = "verify"

    def __init__(self, failures):
        """Initialize the Exception

        Parameters
        ----------
        failures : list of str
            One description per failed check
        """
        super(VerificationError, self).__init__(
            "Identity checks failed: " + "; ".join(failures)
        )
        self.failures = list(failures)


# noinspection PyPropertyAccess,PyAttributeOutsideInit
class NamedObject(object):
    """Base class for building objects with name property"""

    def __init__(self, name):
        """Initialize a base class with a name

        Parameters
        ----------
        name : string
            Name of the object.
            Must satisfy regular expression pattern: [a-zA-Z][-a-zA-Z0-9]*
        """
        if not isinstance(name, str):
            raise SplitflowInputError(
                "name must be a string. You passed a {t!s}".format(t=type(name))
            )

        pattern = re.compile("^[a-zA-Z][-a-zA-Z0-9]*$")
        if not pattern.match(name):
            raise SplitflowInputError(
                "We use name in run directory and registry identifiers so it "
                "must satisfy the regular expression pattern: "
                "[a-zA-Z][-a-zA-Z0-9]* (note that underscores are not allowed)."
            )

        self._name = name

    @property
    def name(self):
        """The name of this object"""
        return self._name
