import os
import shutil
import tempfile

import numpy as np
import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SPLITFLOW_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set SPLITFLOW_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="function")
def tmp_cfg_dir():
    old_cfg_file = os.environ.get("SPLITFLOW_CONFIG_FILE")
    temp_dir = tempfile.mkdtemp()
    temp_name = os.path.join(temp_dir, "splitflow.cfg")
    os.environ["SPLITFLOW_CONFIG_FILE"] = temp_name
    yield temp_name
    shutil.rmtree(temp_dir)
    if old_cfg_file is None:
        os.environ.pop("SPLITFLOW_CONFIG_FILE", None)
    else:
        os.environ["SPLITFLOW_CONFIG_FILE"] = old_cfg_file


@pytest.fixture(scope="function")
def tmp_run_dir(tmp_cfg_dir):
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir, ignore_errors=True)


@pytest.fixture(scope="function")
def rng():
    return np.random.default_rng(0)
