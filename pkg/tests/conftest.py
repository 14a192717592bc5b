import warnings

import pytest

from fuzzneg.fuzzy import default_system
from fuzzneg.tariff import PricingMode, Tariff

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def flat():
    return Tariff()


@pytest.fixture(scope="session")
def progressive():
    return Tariff(mode=PricingMode.PROGRESSIVE)


@pytest.fixture(scope="session")
def system():
    return default_system()


@pytest.fixture(autouse=True)
def _quiet_no_rule_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        yield


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
