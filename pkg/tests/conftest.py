import math
import sys

import pytest

from qswitch.network import NetworkSpec, build_modes, propagation_delay

KAPPA = 2 * math.pi * 10e6


@pytest.fixture(scope="session")
def spec():
    return NetworkSpec()


@pytest.fixture(scope="session")
def modes(spec):
    return build_modes(spec)


@pytest.fixture(scope="session")
def tp(spec):
    return propagation_delay(spec)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
