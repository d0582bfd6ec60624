import numpy as np
import pytest

from kinverify.datakit import even_plan, kfold_split, synth_generate

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def planted():
    return synth_generate(d=16, n_pos=1000, rank=3, noise_sigma=0.1, seed=7)


@pytest.fixture(scope="session")
def planted_fold(planted):
    return kfold_split(planted.positives, even_plan(1000), seed=7)[0]


@pytest.fixture(scope="session")
def small_triples():
    sd = synth_generate(d=8, n_pos=120, rank=2, noise_sigma=0.1, seed=3)
    return sd.triples


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
