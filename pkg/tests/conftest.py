import pytest

from hybrid_forest.core import FeatureSpec, Instance, Schema


@pytest.fixture
def schema3():
    """Two numeric features, three classes."""
    return Schema.numeric(2, class_count=3)


@pytest.fixture
def mixed_schema():
    return Schema((FeatureSpec.numeric("a"), FeatureSpec.nominal("b", 3)), class_count=2)


def parity_stream(n):
    """Class alternates; feature 0 equals the class, feature 1 is balanced noise."""
    return [Instance((i % 2, (i // 2) % 2), i % 2) for i in range(n)]


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
