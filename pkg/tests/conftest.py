import numpy as np
import pytest

from src.models.zsl.data_model import SyntheticSpec, generate_synthetic, split_partitions
from src.models.zsl.parameter_controls import load_config

# small enough for a pipeline run in well under a second per seed
FAST_SETTINGS = {
    "m_seen": 6,
    "v_unseen": 3,
    "visual_dim": 12,
    "semantic_dim": 3,
    "hidden_dim": 3,
    "examples_per_class": 5,
    "latent_dim": 2,
    "hidden_units": 8,
    "epochs": 3,
    "projection_epochs": 3,
    "batch_size": 8,
    "g": 3,
    "cache": False,
    "seeds": 1,
}


@pytest.fixture
def fast_config(tmp_path):
    """Factory for a quick ExperimentConfig writing under tmp_path."""

    def build(**overrides):
        settings = dict(FAST_SETTINGS, output_dir=str(tmp_path / "out"))
        settings.update(overrides)
        return load_config(overrides=settings)

    return build


@pytest.fixture
def small_benchmark():
    spec = SyntheticSpec(
        seed=3, m_seen=6, v_unseen=3, d=12, n=3, cluster_spread=0.2, examples_per_class=4, hidden_dim=3
    )
    ds, table = generate_synthetic(spec)
    train, test = split_partitions(ds)
    return spec, ds, table, train, test


@pytest.fixture
def rng():
    return np.random.default_rng(0)
