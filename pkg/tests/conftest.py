import importlib.resources as resources
from pathlib import Path

import pytest

from adaptive_dsse import load_network, load_scenario, run_estimation

DATA = resources.files("adaptive_dsse").joinpath("data")


def data_path(name: str) -> str:
    return str(DATA.joinpath(name))


@pytest.fixture(scope="session")
def ieee13():
    return load_network(data_path("ieee13_balanced.json"))


@pytest.fixture(scope="session")
def paper_scenario():
    return load_scenario(data_path("paper_scenario.json"))


@pytest.fixture(scope="session")
def gamma_scenario():
    return load_scenario(data_path("gamma_ramp_scenario.json"))


@pytest.fixture(scope="session")
def paper_run(paper_scenario):
    """One shared both-modes run of the paper scenario (deterministic)."""
    return run_estimation(paper_scenario, mode="both", transport="inprocess")


def two_bus_network(r=0.01, x=0.02, p=1.0, q=0.5):
    from adaptive_dsse.network import network_from_dict

    return network_from_dict(
        {
            "schema_version": 1,
            "base_voltage_v": 4160.0,
            "base_power_va": 5e6,
            "slack": "s",
            "buses": ["s", "a"],
            "branches": [{"id": "s-a", "from": "s", "to": "a", "r": r, "x": x}],
            "loads": [{"node": "a", "p": p, "q": q}],
            "generators": [],
        },
        "<two-bus>",
    )
