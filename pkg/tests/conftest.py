import numpy as np
import pytest

from otca.config import ExperimentConfig
from otca.flow_env import NoiseSchedule, VelocityNet
from otca import harness


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def trained_net(default_cfg):
    """The default pretrained toy flow model (about a second of training)."""
    net, _ = harness.pretrain(default_cfg, seed=0)
    return net


@pytest.fixture
def small_net():
    # 138 parameters: small enough for full finite-difference sweeps
    return VelocityNet(dim=2, n_cond=2, widths=(8, 8), seed=5)


@pytest.fixture
def schedule():
    return NoiseSchedule(eta=0.3, steps=6)


# acceptance results, filled in by tests/test_acceptance.py
ACCEPTANCE = {}
N_CRITERIA = 12


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in ACCEPTANCE:
            ok, name, detail = ACCEPTANCE[n]
            tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d} {name}: {detail}")
        else:
            tr.write_line(f"[----] {n:2d} not run")
