import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import ctmdetect as cd

settings.register_profile(
    "ci",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    max_examples=50,
)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def small_recs():
    return cd.generate_synthetic(cd.SynthConfig(n_subjects=2, duration_s=40.0, seed=11))


@pytest.fixture(scope="session")
def small_dataset(small_recs):
    return cd.build_dataset(small_recs)


@pytest.fixture(scope="session")
def small_model(small_dataset):
    ds = small_dataset
    hp = cd.GbtHyperParams(n_rounds=12, max_depth=3, learning_rate=0.3)
    return cd.train(
        ds.X, ds.y, w=cd.balanced_weights(ds.y, 3), hp=hp,
        class_names=cd.LABEL_NAMES, feature_names=ds.feature_names,
    )


def random_quat(rng):
    q = rng.standard_normal(4)
    while np.linalg.norm(q) < 1e-6:
        q = rng.standard_normal(4)
    return q / np.linalg.norm(q)
