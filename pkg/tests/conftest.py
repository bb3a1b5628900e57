import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_dataset():
    """12-domain synthetic set, 10 samples each: fast shared fixture."""
    from zstrans.synthetic import SyntheticSpec, make_synthetic

    return make_synthetic(SyntheticSpec(), 10, 7)


@pytest.fixture(scope="session")
def desk_config():
    from zstrans.config import NetConfig

    return NetConfig.desk(n_seen_classes=8)


@pytest.fixture()
def bundle(desk_config):
    """Freshly built bundle; function-scoped because steps mutate it."""
    from zstrans.networks import build_bundle

    return build_bundle(desk_config, rng_seed=0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
