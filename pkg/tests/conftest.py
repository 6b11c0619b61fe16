import os

import pytest


@pytest.fixture(scope="session", autouse=True)
def _isolated_data_dir(tmp_path_factory):
    """Keep reference-solution caches out of the user's home directory."""
    if "BVPTUNE_DATA" not in os.environ:
        os.environ["BVPTUNE_DATA"] = str(tmp_path_factory.mktemp("bvptune-data"))
    yield


@pytest.fixture(scope="session")
def small_dataset():
    """100 settings per registered problem, the CLI's default seed."""
    from bvptune.dataset import generate

    return generate(None, 100, seed=7, workers=1)


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        request.config._acceptance[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
