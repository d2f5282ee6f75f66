from __future__ import annotations

from pathlib import Path

import pytest

from commarket.scenario import Scenario, load_scenario

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def fixture_scenario(name: str) -> Scenario:
    return load_scenario(SCENARIO_DIR / f"{name}.json")


@pytest.fixture
def two_entity_trade() -> Scenario:
    return fixture_scenario("two_entity_trade")


@pytest.fixture
def peak_import() -> Scenario:
    return fixture_scenario("peak_import")


@pytest.fixture
def storage_shift() -> Scenario:
    return fixture_scenario("storage_shift")


@pytest.fixture
def two_period_peak() -> Scenario:
    return fixture_scenario("two_period_peak")


@pytest.fixture
def shedding() -> Scenario:
    return fixture_scenario("shedding")


@pytest.fixture
def reserve_market() -> Scenario:
    return fixture_scenario("reserve_market")
