import os

import numpy as np
import pytest

from mixweights import data


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """IDX files for the MNIST experiments.

    Uses ``$MIXWEIGHTS_MNIST_DIR`` when it is set, otherwise exports the
    5000-row MNIST subset bundled with mlxtend into a temporary directory.
    """
    env = os.environ.get("MIXWEIGHTS_MNIST_DIR")
    if env:
        return env
    out = tmp_path_factory.mktemp("mnist")
    data.export_bundled_mnist(str(out))
    return str(out)


@pytest.fixture
def report(request):
    """Record one ``[PASS]``/``[FAIL]`` line per acceptance criterion and assert it."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def _report(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}: {detail}"
        print(line)
        lines.append((number, line))
        assert passed, line

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda item: item[0]):
            terminalreporter.write_line(line)
