import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Emit the FAIL half of the acceptance gate's one-line-per-criterion log."""
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and report.failed and item.name.startswith("test_criterion_"):
        number = int(item.name.split("_")[2])
        print(f"FAIL criterion {number}: {item.name}")
