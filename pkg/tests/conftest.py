import numpy as np
import pytest

import taskilc
from taskilc import model as tm


@pytest.fixture(scope="session")
def biped():
    return tm.load_model(taskilc.bundled_model_path("biped"))


@pytest.fixture(scope="session")
def pendulum():
    return tm.load_model(taskilc.bundled_model_path("pendulum"))


@pytest.fixture()
def rng():
    return np.random.default_rng(20260809)


def random_state(model, rng, scale=0.5):
    q = rng.uniform(-scale, scale, model.nq)
    qd = rng.uniform(-scale, scale, model.nq)
    return q, qd


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: spec acceptance criteria (long closed-loop runs)")
