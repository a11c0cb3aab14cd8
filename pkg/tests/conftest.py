import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rfsampling import _backend

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=sorted(_backend.available()))
def backend(request, monkeypatch):
    """Run a test once per importable kernel backend."""
    monkeypatch.setattr(_backend, "kernels", _backend.available()[request.param])
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SEPARATED = dict(means=((1.5, 0.0), (-1.5, 0.0)), variances=(0.25, 0.25))


@pytest.fixture(scope="session")
def trained_default():
    """MLP trained on the default two-class task (5k Adam steps)."""
    from rfsampling.train import TrainConfig, default_field, train
    tc = TrainConfig()
    return tc, train(default_field(tc), tc)


@pytest.fixture(scope="session")
def trained_separated():
    """Same recipe on a well separated, equal-spread mixture."""
    from rfsampling.train import TrainConfig, default_field, train
    tc = TrainConfig(**SEPARATED)
    return tc, train(default_field(tc), tc)


@pytest.fixture(scope="session")
def checkpoint(trained_default, tmp_path_factory):
    from rfsampling.train import save_checkpoint
    path = tmp_path_factory.mktemp("ckpt") / "model.rfck"
    save_checkpoint(trained_default[1].field, path)
    return path
