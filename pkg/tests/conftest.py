import numpy as np
import pytest

from dccfl.dataset import LabeledTable

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_blobs(num_classes=4, n_features=6, n_per_class=200, seed=0, spread=5.0, noise=1.0):
    """Well-separated Gaussian blobs, one per class."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, spread, (num_classes, n_features))
    features = np.concatenate(
        [centers[k] + rng.normal(0.0, noise, (n_per_class, n_features)) for k in range(num_classes)]
    )
    labels = np.repeat(np.arange(num_classes), n_per_class)
    perm = rng.permutation(labels.size)
    return LabeledTable(features[perm], labels[perm], num_classes)


def write_csv(table: LabeledTable, path, label_column="label"):
    import pandas as pd

    df = pd.DataFrame(table.features, columns=[f"f{j}" for j in range(table.n_features)])
    df[label_column] = table.labels
    df.to_csv(path, index=False)
    return path


@pytest.fixture
def blobs_table():
    return make_blobs()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
