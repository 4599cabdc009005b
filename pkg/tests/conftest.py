import numpy as np
import pytest

from mrfsig.gibbs_core import ParamVector


def random_theta(rng, d, lo=-2.0, hi=2.0, pair_prob=1.0):
    """Random parameter over all singletons and a random subset of pairs."""
    pairs = [(s, t) for s in range(d) for t in range(s + 1, d) if rng.random() < pair_prob]
    return ParamVector(d, rng.uniform(lo, hi, d), tuple(pairs), rng.uniform(lo, hi, len(pairs)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def emit(ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {request.node.name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
