import pytest

# acceptance criterion number -> result line, filled in by test_acceptance
ACCEPTANCE = {}
N_CRITERIA = 8
_collected = {"acceptance": False}


def pytest_addoption(parser):
    parser.addoption("--slow", action="store_true", default=False, help="run slow reproduction tests")


def pytest_collection_modifyitems(config, items):
    _collected["acceptance"] = any(item.path.name == "test_acceptance.py" for item in items)
    if config.getoption("--slow"):
        return
    skip = pytest.mark.skip(reason="needs --slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not _collected["acceptance"]:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(ACCEPTANCE.get(n, f"criterion {n}: SKIP (not run)"))
