import pytest

from cellcycle import CharGrid, DurationModel, GrowthModel, ModelOperators


def make_ops(h=1 / 256, T_B=0.2, p=2.0, variant="single_line", a_max=10.0, s_range=(0.0, 12.0),
             growth=None):
    growth = growth or GrowthModel.constant(1.0)
    grid = CharGrid.build(growth, T_B, h, a_max, *s_range)
    return ModelOperators(grid, DurationModel.exponential(p), variant)


@pytest.fixture(scope="session")
def b1():
    """Benchmark: constant growth k=1, Exp(2), T_B=0.2, h=1/256, a_max=10, s in [0, 12]."""
    return make_ops()


@pytest.fixture(scope="session")
def coarse():
    """Same model on a coarse grid, for quick structural checks."""
    return make_ops(h=1 / 32, a_max=8.0, s_range=(0.0, 10.0))


_ACCEPTANCE = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(label: str, ok: bool, detail: str):
        line = "%s %s: %s" % ("PASS" if ok else "FAIL", label, detail)
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
