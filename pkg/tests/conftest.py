import numpy as np
import pytest

from semibandit_bic.core import ProductPrior


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def sorted_beta_prior(gen, d, strict=True):
    """Random Beta product prior with prior means non-increasing in index."""
    while True:
        params = [(float(gen.uniform(0.5, 4)), float(gen.uniform(0.5, 6))) for _ in range(d)]
        params.sort(key=lambda ab: -ab[0] / (ab[0] + ab[1]))
        means = [a / (a + b) for a, b in params]
        if not strict or all(means[i] - means[i + 1] > 1e-3 for i in range(d - 1)):
            return ProductPrior.beta(params)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str = "") -> bool:
    line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
