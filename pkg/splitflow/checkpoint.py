"""Self-describing single-file checkpoints.

Layout::

    <UTF-8 JSON header>\\n
    <param_count little-endian float64 values, declared layer order>
    <the same again for the EMA shadow, when has_ema is true>

The header records the format name and version, the network architecture,
the interpolation schedule, the training plan, ``param_count``,
``byte_length`` (bytes of one parameter block), ``has_ema`` and the layer
shapes.
"""
import json
import logging
import os
import tempfile

import numpy as np
import tenacity

from .base_classes import (
    CheckpointDimensionError,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    SplitflowInputError,
)
from .model import VelocityNet
from .smf import TrainPlan, make_plan

__all__ = ["FORMAT_NAME", "FORMAT_VERSION", "save", "load", "read_header"]
mod_logger = logging.getLogger(__name__)

FORMAT_NAME = "splitflow-checkpoint"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def _header(net, ema, plan):
    byte_length = net.param_count() * _DTYPE.itemsize
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "architecture": net.architecture,
        "schedule": "linear",
        "plan": None if plan is None else plan._asdict(),
        "param_count": net.param_count(),
        "byte_length": byte_length,
        "has_ema": ema is not None,
        "layer_shapes": [list(s) for s in net.layer_shapes()],
    }


def _replace(src, dst):
    # rename can fail transiently with PermissionError while dst is open elsewhere
    retry = tenacity.Retrying(
        wait=tenacity.wait_exponential(multiplier=0.05, max=1),
        stop=tenacity.stop_after_attempt(5),
        retry=tenacity.retry_if_exception_type(PermissionError),
        reraise=True,
    )
    retry(os.replace, src, dst)


def save(net, path, ema=None, plan=None):
    """Write ``net`` (and optionally its EMA shadow and plan) to ``path``.

    Parameters
    ----------
    net : VelocityNet

    path : str

    ema : VelocityNet, optional
        EMA shadow with the same architecture as ``net``

    plan : TrainPlan, optional

    Returns
    -------
    str
        Absolute path written
    """
    if ema is not None and ema.architecture != net.architecture:
        raise CheckpointDimensionError("EMA architecture differs from the network's.")
    path = os.path.abspath(path)
    directory = os.path.dirname(path)
    os.makedirs(directory, exist_ok=True)

    header = json.dumps(_header(net, ema, plan), sort_keys=True).encode("utf-8")
    blocks = [net.flat_parameters().astype(_DTYPE).tobytes()]
    if ema is not None:
        blocks.append(ema.flat_parameters().astype(_DTYPE).tobytes())

    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header + b"\n")
            for block in blocks:
                f.write(block)
        _replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise

    mod_logger.info("Wrote checkpoint {path:s}".format(path=path))
    return path


def _split(raw):
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError("Checkpoint has no header line.")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointError("Checkpoint header is not valid JSON: {e!s}".format(e=e))
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise CheckpointError("Not a splitflow checkpoint.")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(header.get("version"), FORMAT_VERSION)
    return header, raw[newline + 1 :]


def read_header(path):
    """Return the decoded JSON header of the checkpoint at ``path``."""
    with open(path, "rb") as f:
        return _split(f.read())[0]


def load(path):
    """Read a checkpoint.

    Parameters
    ----------
    path : str

    Returns
    -------
    net : VelocityNet

    ema : VelocityNet or None

    plan : TrainPlan or None

    Raises
    ------
    CheckpointVersionError
        Unsupported format version

    CheckpointTruncatedError
        Parameter blocks shorter or longer than the header declares

    CheckpointDimensionError
        Header architecture is malformed or disagrees with the header counts
    """
    with open(path, "rb") as f:
        raw = f.read()
    header, body = _split(raw)

    try:
        architecture = dict(header["architecture"])
        param_count = int(header["param_count"])
        byte_length = int(header["byte_length"])
        has_ema = bool(header["has_ema"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError("Checkpoint header is missing {e!s}".format(e=e))

    try:
        net = VelocityNet(rng=np.random.default_rng(0), **architecture)
    except (TypeError, SplitflowInputError) as e:
        raise CheckpointDimensionError(
            "Header architecture is not understood: {e!s}".format(e=e)
        )
    if param_count != net.param_count():
        raise CheckpointDimensionError(
            "Header declares {n:d} parameters, architecture has {m:d}".format(
                n=param_count, m=net.param_count()
            )
        )
    if byte_length != param_count * _DTYPE.itemsize:
        raise CheckpointDimensionError(
            "Header byte_length {b:d} does not match {n:d} float64 parameters".format(
                b=byte_length, n=param_count
            )
        )
    shapes = [tuple(s) for s in header.get("layer_shapes", net.layer_shapes())]
    if shapes != [tuple(s) for s in net.layer_shapes()]:
        raise CheckpointDimensionError("Header layer shapes do not match the architecture.")

    expected = byte_length * (2 if has_ema else 1)
    if len(body) != expected:
        raise CheckpointTruncatedError(expected, len(body))

    net.set_flat_parameters(np.frombuffer(body[:byte_length], dtype=_DTYPE))
    ema = None
    if has_ema:
        ema = net.copy(role="ema")
        ema.set_flat_parameters(np.frombuffer(body[byte_length:], dtype=_DTYPE))

    plan = header.get("plan")
    if plan is not None:
        plan = make_plan(**{k: v for k, v in plan.items() if k in TrainPlan._fields})

    mod_logger.debug("Loaded checkpoint {path:s}".format(path=os.path.abspath(path)))
    return net, ema, plan
