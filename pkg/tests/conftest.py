import numpy as np
import pytest

from utils.models import ModelVariant


@pytest.fixture(autouse=True)
def event_log_dir(tmp_path, monkeypatch):
    log_dir = tmp_path / "logs"
    monkeypatch.setenv("MIDINET_PERSIST_DIR", str(log_dir))
    return log_dir


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_variant(**overrides) -> ModelVariant:
    fields = dict(
        id=0,
        g_filters=4,
        cond_filters=3,
        twod_layers=(1, 2, 3, 4),
        use_chord=True,
        lambda1=0.1,
        lambda2=1.0,
        noise_dim=8,
        fc_units=(16, 8),
        d_filters=(3, 5),
        d_fc_units=8,
    )
    fields.update(overrides)
    return ModelVariant(**fields)


@pytest.fixture
def variant():
    return toy_variant()
