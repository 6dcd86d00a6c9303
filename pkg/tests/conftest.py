import numpy as np
import pytest

from pyramidssl.synth import CohortConfig, DEFAULT_TEXTURES, SynthSpec, generate_cohort, generate_pyramid


def small_spec(seed=0, class_id=0, **kw):
    return SynthSpec(seed=seed, levels=4, base_size=32, class_id=class_id,
                     texture=DEFAULT_TEXTURES[class_id], **kw)


@pytest.fixture(scope="session")
def small_pyramid():
    return generate_pyramid(small_spec(3))


TINY_COHORT = dict(num_classes=2, train_per_class=2, test_per_class=1, levels=4, base_size=32,
                   roi_size=128)


@pytest.fixture(scope="session")
def tiny_cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("cohort")
    return generate_cohort(CohortConfig(**TINY_COHORT), root, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
