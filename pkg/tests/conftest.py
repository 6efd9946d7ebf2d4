import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from thzq.nn import TrainConfig
from thzq.pipeline import train
from thzq.synth import SceneConfig, synth_dataset

# pinned seeds for the synthetic experiment
DATA_SEED = 0
TRAIN_SEED = 0
REDUCED_EPOCHS = 200

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_dataset():
    return synth_dataset(SceneConfig(seed=DATA_SEED))


@pytest.fixture(scope="session")
def small_dataset():
    return synth_dataset(SceneConfig(seed=3, pixels_per_side=4, scans_per_pixel_side=5))


@pytest.fixture(scope="session")
def training_run(default_dataset):
    """All four methods on the default dataset with the reduced 200-epoch schedule.

    Returns ``(models, seconds)`` where ``models`` maps kind to ``(checkpoint, valid metrics)``.
    """
    config = TrainConfig(epochs=REDUCED_EPOCHS, seed=TRAIN_SEED)
    start = time.perf_counter()
    with threadpool_limits(limits=1):
        models = {
            kind: train(kind, default_dataset, config)
            for kind in ("intensity", "logreg", "dnn", "qml-dnn")
        }
    return models, time.perf_counter() - start


@pytest.fixture(scope="session")
def trained_models(training_run):
    return training_run[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
