import numpy as np
import pytest

from captor.fixture import make_fixture
from captor.text import CaptionRecord, normalize
from captor.trainer import TrainConfig, fit


def fd_grad(f, arr, eps=1e-5):
    """Central finite-difference gradient of scalar f() w.r.t. arr (in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        saved = arr[i]
        arr[i] = saved + eps
        fp = f()
        arr[i] = saved - eps
        fm = f()
        arr[i] = saved
        g[i] = (fp - fm) / (2.0 * eps)
    return g


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


@pytest.fixture(scope="session")
def fixture_data():
    grids, lines = make_fixture(8, 42, 9, 16)
    records = []
    for line in lines:
        image_id, caption = line.split("\t")
        records.append(CaptionRecord(image_id, caption, tuple(normalize(caption))))
    return grids, records


@pytest.fixture(scope="session")
def trained_model(fixture_data):
    grids, records = fixture_data
    cfg = TrainConfig(epochs=150, batch_size=4, seed=0)
    return fit({g.image_id: g for g in grids}, records, cfg)
