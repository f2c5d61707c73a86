from pathlib import Path

import numpy as np
import pytest

from wsnad import autoencoder as ae

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture
def toy_config():
    return CONFIGS / "toy.json"


@pytest.fixture
def acceptance_config():
    return CONFIGS / "acceptance.json"


@pytest.fixture
def small_params():
    """A 6-input, 3-hidden network with nonzero biases."""
    rng = np.random.default_rng(11)
    shape = ae.NetworkShape(6, 3)
    p = ae.init_params(shape, 0.5, seed=3)
    return ae.ModelParams(p.w_hidden, rng.normal(0, 0.3, 3), p.w_output, rng.normal(0, 0.3, 6))


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and return the flag."""
    def record(number, name, ok, detail):
        line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        print(line)
        request.config.stash[ACCEPTANCE_KEY].append((number, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash.get(ACCEPTANCE_KEY, []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
