import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cfrec import TrainConfig, SynthConfig, synth_generate, train


@pytest.fixture(scope="session")
def tiny_ds():
    """20 users x 30 items, moderately noisy rank-2 ratings."""
    return synth_generate(SynthConfig(20, 30, 0.3, num_latent_causes=2,
                                      noise_std=0.3, seed=11))


@pytest.fixture(scope="session")
def tiny_cfg():
    return TrainConfig(d=4, lr=0.2, epochs=150, batch_size=180, seed=3)


@pytest.fixture(scope="session")
def fm_tiny(tiny_ds, tiny_cfg):
    params, _ = train("fm", tiny_ds, tiny_cfg)
    return params


@pytest.fixture(scope="session")
def ncf_tiny(tiny_ds, tiny_cfg):
    params, _ = train("ncf", tiny_ds, tiny_cfg)
    return params
