"""
Test configuration and fixtures
"""
import numpy as np
import pytest

from bcgn.core.config import get_settings
from bcgn.schemas.config_schemas import ArchConfig, LatentKind, Objective, TrainConfig
from bcgn.services.data import gen_shift_task
from bcgn.services.nets import init_params
from bcgn.services.tensor import Rng, Tensor


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Settings are re-read from the environment for every test"""
    monkeypatch.delenv("BCGN_THREADS", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng():
    """Seeded random stream"""
    return Rng(1234)


@pytest.fixture
def tiny_arch():
    """Smallest architecture the networks support, in double precision"""
    return ArchConfig(
        channels=3, height=8, width=8, features=4, res_blocks=1, latent_channels=2, dtype="float64"
    )


@pytest.fixture
def tiny_arch_f32():
    """Same architecture in single precision, as used for training"""
    return ArchConfig(channels=3, height=8, width=8, features=4, res_blocks=1, latent_channels=2)


@pytest.fixture
def tiny_params(tiny_arch):
    """Initialized parameters of all six networks"""
    return init_params(tiny_arch, Rng.derive(0, "init"))


@pytest.fixture
def shift_data():
    """Small paired shift task at 8×8"""
    data_a, data_b, _ = gen_shift_task(seed=0, n=4, height=8, width=8)
    return data_a, data_b


@pytest.fixture
def tiny_train_config(tiny_arch_f32):
    """Training configuration sized for unit tests"""
    return TrainConfig(
        epochs_total=2,
        epochs_constant=1,
        batch_size=2,
        m_x=2,
        m_y=2,
        seed=3,
        latent_kind=LatentKind.SFM,
        objective=Objective(gamma=0.5),
        arch=tiny_arch_f32,
    )


@pytest.fixture
def images(rng):
    """Factory for N×C×H×W float64 image tensors in (-1, 1)"""

    def make(n=2, c=3, h=8, w=8, dtype=np.float64):
        data = np.tanh(rng.normal((n, c, h, w), dtype=np.float64)).astype(dtype)
        return Tensor(data, dtype=dtype)

    return make
