from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from rdbn import load_model

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")

MODELS = Path(__file__).resolve().parent.parent / "models"


@pytest.fixture(scope="session")
def models_dir():
    return MODELS


@pytest.fixture(scope="session")
def tiny_model():
    return load_model(MODELS / "tiny_attach.rdbn")


@pytest.fixture(scope="session")
def color_model():
    return load_model(MODELS / "color_bolting.rdbn")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
