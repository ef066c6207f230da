import numpy as np
import pytest

from shiftclass.data import normalize_batch
from shiftclass.experiments import texture_task, train_texture_pairs
from shiftclass.training import TrainConfig

QUICK_TEXTURE_CFG = TrainConfig(
    atoms=50, epochs=80, lr=0.01, batch_size=64, v=1e-3
)


@pytest.fixture(scope="session")
def texture_setup():
    """Small texture task shared across module tests: 3 trained pairs and a
    200-patch-per-class disjoint test set."""
    from shiftclass.data import synth_textures

    images = synth_textures(7)
    train_regions, test_raw = texture_task(
        images, test_per_class=200, master_seed=11
    )
    models = train_texture_pairs(
        train_regions, QUICK_TEXTURE_CFG, n_pairs=3, master_seed=5
    )
    return {
        "images": images,
        "train_regions": train_regions,
        "test_raw": test_raw,
        "test_norm": normalize_batch(test_raw),
        "models": models,
    }


def make_blobs(seed, centers, per_class=30, std=0.5):
    rng = np.random.default_rng(seed)
    xs, labels = [], []
    for k, center in enumerate(centers):
        xs.append(rng.normal(center, std, size=(per_class, len(center))))
        labels += [k] * per_class
    return np.vstack(xs), np.array(labels)
