"""Shared fixtures: one small scene with oracle outputs, reused read-only."""

import numpy as np
import pytest

from cnslab.scenesynth import (ClipNoiseConfig, MaskFragConfig, SceneConfig,
                               generate_scene, standard_oracle_outputs)

SMALL_SCENE = SceneConfig(object_count=4, points_per_object=120,
                          background_points=500, num_classes=5, camera_count=3,
                          image_width=32, image_height=32, focal=24.0)

TINY_TRAIN = dict(object_count=4, points_per_object=120, background_points=500,
                  num_classes=5, camera_count=3, image_width=32,
                  image_height=32, focal=24.0)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SMALL_SCENE, seed=11)


@pytest.fixture(scope="session")
def small_oracles(small_scene):
    return standard_oracle_outputs(small_scene, ClipNoiseConfig(eps=0.4, block=4),
                                   MaskFragConfig(3, 1), feat_dim=8,
                                   feat_sigma=0.1, embed_dim=16)


@pytest.fixture(scope="session")
def noiseless_oracles(small_scene):
    return standard_oracle_outputs(small_scene, ClipNoiseConfig(eps=0.0, block=4),
                                   MaskFragConfig(3, 0), feat_dim=8,
                                   feat_sigma=0.1, embed_dim=16)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
