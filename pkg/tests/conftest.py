import numpy as np
import pytest

from braincnn.data import make_fixtures, scan_dataset


def max_rel_err(a, b, floor=1e-3):
    """Worst-coordinate relative error with a scale floor.

    The floor keeps finite-difference roundoff noise on exactly-zero
    gradients (e.g. conv bias under batchnorm) from masquerading as a
    mismatch: below the floor the comparison is absolute.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float((np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)).max())


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    """Small 4-class synthetic dataset shared by pipeline/CLI tests."""
    root = tmp_path_factory.mktemp("fixtures") / "data"
    make_fixtures(root, per_class=12, seed=11, size=16)
    return root


@pytest.fixture(scope="session")
def fixture_index(fixture_root):
    return scan_dataset(fixture_root)
