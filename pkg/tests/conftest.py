"""Shared fixtures: a miniature benchmark config sized for unit tests."""

import pytest

from offbandit.config import load_config
from offbandit.evaluate import run_benchmark

TINY_INI = """
[reward_model]
members = 2
epochs = 6
[policy]
epochs = 4
[ga]
max_iters = 40
[eval]
train_records = 300
heldout = 60
restart_grid = 1,3
beta_grid = 0,1
beta_restarts = 2
m_grid = 1,10
timing_contexts = 4
"""


@pytest.fixture(scope="session")
def tiny_ini_text():
    return TINY_INI


@pytest.fixture(scope="session")
def tiny_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY_INI)
    return load_config(path, profile="fast", seed=3)


@pytest.fixture(scope="session")
def tiny_result(tiny_cfg):
    return run_benchmark(tiny_cfg)
