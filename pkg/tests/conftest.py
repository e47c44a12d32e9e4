"""Shared fixtures: seeded networks, ready-made worlds and output directories."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from plugnet.config import build_config  # noqa: E402
from plugnet.scenarios import build_world  # noqa: E402
from plugnet.simnet import SimNetwork  # noqa: E402


def make_config(scenario="benign", seed=7, **overrides):
    flags = {'scenario': scenario, 'seed': seed}
    flags.update(overrides)
    return build_config(flags, env={})


def make_world(scenario="benign", seed=7, with_attacker=False, online=False, **overrides):
    world = build_world(make_config(scenario, seed, **overrides), with_attacker=with_attacker)
    if online:
        world.bring_online()
    return world


@pytest.fixture
def sim():
    return SimNetwork(seed=1234)


@pytest.fixture
def world():
    """Benign world, nothing exchanged yet."""
    return make_world()


@pytest.fixture
def online_world():
    """Benign world with the plug paired, bound, on the relay and synced."""
    return make_world(online=True)


@pytest.fixture
def attack_world():
    return make_world("sharing-attack", with_attacker=True, online=True)


@pytest.fixture
def patched_attack_world():
    return make_world("sharing-attack-patched", with_attacker=True, online=True)


@pytest.fixture
def output_dir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    return path


@pytest.fixture(scope="session")
def benign_trace(tmp_path_factory):
    """trace.jsonl of one finished benign run."""
    from plugnet.scenarios import run_scenario

    result = run_scenario(make_config("benign", 7))
    path = tmp_path_factory.mktemp("benign") / "trace.jsonl"
    result.world.sim.write_trace(str(path))
    return path
