import numpy as np
import pytest

from circle.dataset import MultiViewDataset, SynthSpec, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    """A 3-view, 5-cluster dataset with 40 samples per cluster, fully aligned."""
    return generate_synthetic(SynthSpec(samples_per_cluster=40, dims=(12, 8, 10), seed=3))


def make_dataset(views, labels=None, mask=None, corr=None):
    return MultiViewDataset(views=views, labels=labels, aligned_mask=mask, true_correspondence=corr)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion and print it."""

    def emit(name, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
