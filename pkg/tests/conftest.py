import numpy as np
import pytest

from lowrank_dg.dataset_io import SyntheticSpec, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec(n_classes=3, angles=(0.0, 30.0, 60.0), input_dim=6, per_class=20,
                         rotation_planes=2, seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_spec):
    return generate_synthetic(small_spec)


def central_difference(f, arr, h=1e-5):
    """Numerical gradient of scalar ``f()`` with respect to ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        orig = arr[i]
        arr[i] = orig + h
        up = f()
        arr[i] = orig - h
        down = f()
        arr[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def relative_error(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
