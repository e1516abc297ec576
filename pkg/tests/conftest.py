"""
Shared fixtures for the Refign test suite
"""

import os
import sys

import numpy as np
import pytest

# Add parent directory to path
parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if parent_dir not in sys.path:
    sys.path.append(parent_dir)

from tools.refine import ClassTaxonomy  # noqa: E402
from tools.scenes import SceneConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def taxonomy():
    return ClassTaxonomy.default()


@pytest.fixture
def small_taxonomy():
    """Four classes: two large static, one small static, one dynamic"""
    return ClassTaxonomy(4, frozenset({0, 1}), frozenset({2}), frozenset({3}))


@pytest.fixture
def tiny_scene():
    return SceneConfig(height=8, width=8, pool_size=2, corruption=0.6, homography_strength=0.1,
                       dynamic_shift=1.0)


def _random_prob_map_data(rng, h, w, c):
    logits = rng.normal(size=(h, w, c))
    e = np.exp(logits - logits.max(axis=2, keepdims=True))
    return (e / e.sum(axis=2, keepdims=True)).astype(np.float32)


@pytest.fixture
def make_probs():
    """Factory for random (h, w, c) float32 probability arrays"""
    return _random_prob_map_data

