import pytest

from ioncascade.chain import IonChain, TrapConfig


@pytest.fixture(scope="session")
def chain2():
    return IonChain(TrapConfig(n_ions=2))


@pytest.fixture(scope="session")
def chain3():
    return IonChain(TrapConfig(n_ions=3))


@pytest.fixture(scope="session")
def chain4():
    return IonChain(TrapConfig(n_ions=4))


# acceptance results, filled by test_acceptance.py and printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
