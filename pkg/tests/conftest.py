import numpy as np
import pytest

from coral import _accel
from coral.cloud import Label, PointCloud

BACKENDS = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    monkeypatch.setattr(_accel, "USE_NUMBA", request.param == "numba")
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cloud(rng, n=400, scale=1.0, label=Label.A, origin=(0.0, 0.0, 0.0)):
    return PointCloud(rng.uniform(0.0, scale, size=(n, 3)), origin, label=label)
