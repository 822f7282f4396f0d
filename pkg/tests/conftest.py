import pytest

from leomoe.scenario import build_runtime, load_scenario


@pytest.fixture(scope="session")
def desk_scenario():
    return load_scenario("desk_toy")


@pytest.fixture(scope="session")
def desk_runtime(desk_scenario):
    # Shared across files; Scenario and ScenarioRuntime are immutable.
    return build_runtime(desk_scenario)
