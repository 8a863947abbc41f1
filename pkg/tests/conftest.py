import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(desc): marks a test as one numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and rep.when == "call":
        status = "PASS" if rep.passed else "FAIL"
        print(f"\nACCEPTANCE {marker.args[0]}: {status}")
