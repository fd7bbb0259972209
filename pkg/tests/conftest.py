import numpy as np
import pytest

from wasncal.geometry import ScenarioSpec, generate_scenario
from wasncal.measurement import NoiseSpec, build_covariances

_criteria: dict[str, list] = {}
_notes: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for key in report.keywords:
        if key.startswith("criterion_"):
            _criteria.setdefault(key, []).append(report.outcome)


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m:
            item.keywords[f"criterion_{m.args[0]}"] = m.args[1]
            item.user_properties.append(("criterion", m.args))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda k: int(k.split("_")[1])):
        outcomes = _criteria[key]
        verdict = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {key.split('_')[1]}: {verdict} ({len(outcomes)} checks)")
    if _notes:
        terminalreporter.section("acceptance measurements")
        for line in _notes:
            terminalreporter.write_line(line)


@pytest.fixture
def seed7_scenario():
    return generate_scenario(ScenarioSpec(seed=7), np.random.default_rng(7))


@pytest.fixture
def default_noise():
    return NoiseSpec.from_db(-30, -30, -30)


@pytest.fixture
def default_q(default_noise):
    return build_covariances(default_noise, 10, 10, 3)


@pytest.fixture
def note():
    """Record a measured value for the acceptance summary."""
    return _notes.append
