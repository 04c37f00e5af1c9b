import numpy as np
import pytest

from ctseg.dataset import SynthSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_synth():
    return generate_synthetic(SynthSpec(num_videos=8, num_subactions=3, feature_dim=6,
                                        segment_length_range=(5, 9), rng_seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line (``[PASS]``/``[FAIL]``) and assert on it."""

    def check(name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
