import os

import pytest

from aaris.config import ExperimentConfig


def pytest_collection_modifyitems(config, items):
    if os.getenv("AARIS_SLOW_TESTS") == "1":
        return
    skip = pytest.mark.skip(reason="set AARIS_SLOW_TESTS=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def _merge(base: dict, updates: dict) -> dict:
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


@pytest.fixture
def make_cfg():
    """Factory for small experiment configs; keyword sections are deep-merged."""

    def build(**updates) -> ExperimentConfig:
        data = {
            "allow_extra_sweep_values": True,
            "episodes": 3,
            "seeds": [0, 1, 2],
            "env": {"k": 2, "horizon_slots": 4, "channel": {"mx": 2, "my": 2, "n_bs": 2}},
            "agent": {"hidden": [16, 16], "batch_size": 8, "buffer_capacity": 500},
            "meta": {"n_tasks": 2, "episodes_train": 2, "episodes_adapt": 3},
        }
        return ExperimentConfig.model_validate(_merge(data, updates))

    return build


@pytest.fixture
def tiny_cfg(make_cfg):
    return make_cfg()
