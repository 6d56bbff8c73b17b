"""
The config module maintains the splitflow run registry and parses run configs.

The registry file (``~/.splitflow/splitflow.cfg`` unless the
``SPLITFLOW_CONFIG_FILE`` environment variable says otherwise) maps run ids to
run directories under its ``[runs]`` section. Each run object keeps its own
entry current, so users rarely need these functions directly.

Run configs are INI files with the sections ``[run]``, ``[data]``,
``[model]``, ``[train]`` and ``[sample]``; see ``doc/example_config.txt``.
"""
import configparser
import errno
import logging
import os
from collections import namedtuple
from threading import RLock

from .base_classes import (
    ConfigKeyError,
    ResourceDoesNotExistException,
    SplitflowConfigurationError,
    SplitflowInputError,
)
from .smf import TrainPlan, make_plan

__all__ = [
    "rlock",
    "prune",
    "get_config_file",
    "add_resource",
    "remove_resource",
    "verify_sections",
    "get_run_dir",
    "registered_runs",
    "RunSettings",
    "SCHEMA",
    "CLI_OVERRIDES",
    "read_run_config",
    "write_run_config",
]
mod_logger = logging.getLogger(__name__)
rlock = RLock()

APPROVED_SECTIONS = ["runs"]


def _registry_parser():
    config = configparser.ConfigParser()
    # run ids are case sensitive
    config.optionxform = str
    return config


def get_config_file():
    """
    Get the path to the splitflow registry file.

    First, check for the SPLITFLOW_CONFIG_FILE environment variable.
    If that fails, use ~/.splitflow/splitflow.cfg. If that file doesn't
    exist, create it.

    Returns
    -------
    config_file : string
        Path to splitflow registry file
    """
    try:
        env_file = os.environ["SPLITFLOW_CONFIG_FILE"]
        config_file = os.path.abspath(env_file)
    except KeyError:
        home = os.path.expanduser("~")
        config_file = os.path.join(home, ".splitflow", "splitflow.cfg")

    with rlock:
        if not os.path.isfile(config_file):
            configdir = os.path.dirname(config_file)
            try:
                os.makedirs(configdir)
            except OSError as e:
                pre_existing = e.errno == errno.EEXIST and os.path.isdir(configdir)
                if not pre_existing:  # pragma: nocover
                    raise e

            with open(config_file, "w") as f:
                f.write("# splitflow configuration file")

            mod_logger.info(
                "Created new splitflow config file at {path:s}".format(path=config_file)
            )

    mod_logger.debug("Using splitflow config file {path:s}".format(path=config_file))

    return config_file


def add_resource(section, option, value):
    """
    Add a resource to the splitflow registry file.

    Parameters
    ----------
    section : string
        Config section to which to add option:value

    option : string
        Config option to add (i.e. the key in the key:value pair)

    value : string
        Config value to add (i.e. second item in key:value pair)
    """
    config_file = get_config_file()
    config = _registry_parser()

    with rlock:
        config.read(config_file)
        if section not in config.sections():
            config.add_section(section)
        config.set(section=section, option=option, value=value)
        with open(config_file, "w") as f:
            config.write(f)


def remove_resource(section, option):
    """
    Remove a resource from the splitflow registry file.

    Parameters
    ----------
    section : string
        Config section from which to remove option

    option : string
        Config option to remove (i.e. the key in the key:value pair)
    """
    config_file = get_config_file()
    config = _registry_parser()

    with rlock:
        config.read(config_file)
        try:
            config.remove_option(section, option)
        except configparser.NoSectionError:
            pass
        with open(config_file, "w") as f:
            config.write(f)


def verify_sections():
    """Verify registry sections, remove ones that don't belong."""
    config_file = get_config_file()
    config = _registry_parser()
    with rlock:
        config.read(config_file)

        for section in config.sections():
            if section not in APPROVED_SECTIONS:
                config.remove_section(section)

        with open(config_file, "w") as f:
            config.write(f)


def registered_runs():
    """Mapping from registered run id to run directory."""
    config = _registry_parser()
    with rlock:
        config.read(get_config_file())
    if "runs" not in config.sections():
        return {}
    return dict(config["runs"].items())


def get_run_dir(run_id):
    """Run directory registered for ``run_id``.

    Raises
    ------
    ResourceDoesNotExistException
        If no run with that id is registered
    """
    runs = registered_runs()
    try:
        return runs[run_id]
    except KeyError:
        raise ResourceDoesNotExistException(
            "Run {rid:s} is not registered in {path:s}".format(
                rid=run_id, path=get_config_file()
            ),
            run_id,
        )


def prune():
    """
    Clean stale runs from the registry file.

    Verify that every registered run directory still exists. If not, remove
    the run from the registry.
    """
    config_file = get_config_file()
    config = _registry_parser()

    with rlock:
        config.read(config_file)
        pruned = []
        if "runs" in config.sections():
            for run_id, run_dir in list(config["runs"].items()):
                if not os.path.isdir(run_dir):
                    config.remove_option("runs", run_id)
                    pruned.append(run_id)
                    mod_logger.info(
                        "Removed run {rid:s} from your config file.".format(rid=run_id)
                    )

        with open(config_file, "w") as f:
            config.write(f)

    return pruned


def _boolean(value):
    if isinstance(value, bool):
        return value
    try:
        return configparser.ConfigParser.BOOLEAN_STATES[str(value).strip().lower()]
    except KeyError:
        raise ValueError("not a boolean: {v!r}".format(v=value))


def _optional_str(value):
    if value is None:
        return None
    value = str(value).strip()
    return value or None


def _optional_int(value):
    if value is None or str(value).strip() in ("", "none", "None"):
        return None
    return int(value)


_PLAN_DEFAULTS = TrainPlan()._asdict()
_PLAN_TYPES = {
    "flow_ratio_p": float,
    "cfg_scale_w": float,
    "cfg_dropout_pretrain": float,
    "cfg_dropout_distill": float,
    "batch_size": int,
    "steps": int,
    "lr": float,
    "warmup_steps": int,
    "ema_decay": float,
    "use_ema": _boolean,
    "time_dist": str,
    "seed": int,
    "mode": str,
    "teacher": _optional_str,
    "objective": str,
    "lambda_min": float,
    "lambda_max": float,
    "loss_norm": str,
    "log_every": int,
}

# section -> key -> (converter, default)
SCHEMA = {
    "run": {"name": (str, "splitflow"), "out": (str, "runs"), "seed": (int, 0)},
    "data": {
        "kind": (str, "gauss_mixture_8"),
        "labeled": (_boolean, True),
        "noise": (float, 0.05),
        "n_eval": (int, 2000),
    },
    "model": {
        "hidden_dim": (int, 256),
        "depth": (int, 3),
        "time_embed_dim": (int, 16),
        "cond_embed_dim": (_optional_int, None),
    },
    "train": {k: (_PLAN_TYPES[k], v) for k, v in _PLAN_DEFAULTS.items()},
    "sample": {
        "k": (int, 1),
        "n": (int, 1000),
        "grid": (str, "uniform"),
        "euler_steps": (int, 10),
    },
}

CLI_OVERRIDES = {
    "--seed": ("run", "seed"),
    "--steps": ("train", "steps"),
    "--p": ("train", "flow_ratio_p"),
    "--cfg-scale": ("train", "cfg_scale_w"),
    "--k": ("sample", "k"),
    "--out": ("run", "out"),
}

RunSettings = namedtuple("RunSettings", ["run", "data", "model", "plan", "sample"])
RunSettings.__doc__ = """Parsed run config.

``run``, ``data``, ``model`` and ``sample`` are dicts keyed as in the INI
file; ``plan`` is a validated TrainPlan whose seed is the run seed.
"""


def _convert(config_file, section, key, raw):
    converter = SCHEMA[section][key][0]
    try:
        return converter(raw)
    except (TypeError, ValueError):
        raise SplitflowConfigurationError(
            config_file,
            "[{section:s}] {key:s} = {raw!r} is not a valid {kind:s}".format(
                section=section,
                key=key,
                raw=raw,
                kind=getattr(converter, "__name__", "value").lstrip("_"),
            ),
        )


def read_run_config(path=None, overrides=None):
    """Parse a run config file and apply overrides.

    Parameters
    ----------
    path : str, optional
        INI file; None uses defaults only

    overrides : dict, optional
        Mapping from ``(section, key)`` to a value (string or typed)

    Returns
    -------
    RunSettings

    Raises
    ------
    ConfigKeyError
        Unknown section or key

    SplitflowConfigurationError
        Unreadable file or a value of the wrong type
    """
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    source = path or "<defaults>"

    if path is not None:
        if not os.path.isfile(path):
            raise SplitflowConfigurationError(path, "config file does not exist")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as e:
            raise SplitflowConfigurationError(path, str(e))
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigKeyError(section, section)
            for key, raw in parser[section].items():
                if key not in SCHEMA[section]:
                    raise ConfigKeyError(key, section)
                values[section][key] = _convert(path, section, key, raw)
        mod_logger.debug("Read run config {path:s}".format(path=path))

    for (section, key), raw in (overrides or {}).items():
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigKeyError(key, section)
        values[section][key] = _convert(source, section, key, raw)

    # one master seed per run
    values["train"]["seed"] = values["run"]["seed"]
    try:
        plan = make_plan(**values["train"])
    except SplitflowInputError as e:
        raise SplitflowConfigurationError(source, str(e))

    return RunSettings(
        run=values["run"],
        data=values["data"],
        model=values["model"],
        plan=plan,
        sample=values["sample"],
    )


def write_run_config(settings, path):
    """Write ``settings`` as an INI file that ``read_run_config`` reads back."""
    parser = configparser.ConfigParser()
    sections = {
        "run": settings.run,
        "data": settings.data,
        "model": settings.model,
        "train": settings.plan._asdict(),
        "sample": settings.sample,
    }
    for section, values in sections.items():
        parser.add_section(section)
        for key, value in values.items():
            parser.set(section, key, "" if value is None else str(value))
    with open(path, "w") as f:
        parser.write(f)
    return path
