"""
Tests for the synthetic scene generator
"""

import numpy as np
import pytest

from tools.refine import ClassTaxonomy
from tools.scenes import SceneConfig, corrupt, generate_pool, generate_triplet, label_histogram, pool_seeds
from utils.helper import ContractViolation


def test_equal_seeds_give_identical_triplets(tiny_scene):
    a = generate_triplet(7, tiny_scene)
    b = generate_triplet(7, tiny_scene)
    for name in ("source", "target", "reference"):
        assert np.array_equal(getattr(a, name).data, getattr(b, name).data)
    assert np.array_equal(a.target_labels.data, b.target_labels.data)
    assert np.array_equal(a.true_ref_to_target_homography.matrix, b.true_ref_to_target_homography.matrix)

    c = generate_triplet(8, tiny_scene)
    assert not np.array_equal(a.target.data, c.target.data)


def test_static_clean_scene_has_identical_target_and_reference():
    cfg = SceneConfig(height=16, width=16, corruption=0.0, homography_strength=0.0, num_dynamic=0)
    t = generate_triplet(3, cfg)
    assert np.array_equal(t.true_ref_to_target_homography.matrix, np.eye(3))
    assert np.array_equal(t.target.data, t.reference.data)


def test_dynamic_objects_move_in_the_reference():
    cfg = SceneConfig(height=32, width=32, corruption=0.0, homography_strength=0.0, num_dynamic=2,
                      dynamic_shift=6.0)
    t = generate_triplet(11, cfg)
    assert not np.array_equal(t.target.data, t.reference.data)


def test_every_class_appears_across_seeds():
    cfg = SceneConfig(height=32, width=32, pool_size=100)
    counts = label_histogram(generate_pool(5, cfg), cfg.class_count)
    assert np.all(counts > 0)
    assert counts.sum() == 100 * 32 * 32


def test_images_are_in_range_and_labels_valid(tiny_scene):
    t = generate_triplet(1, tiny_scene)
    for image in (t.source, t.target, t.reference):
        assert image.channels == 3
        assert image.data.min() >= 0.0 and image.data.max() <= 1.0
    assert t.shape == (8, 8)
    assert t.target_labels.classes == 6


def test_corruption_strength_zero_is_the_identity(rng):
    image = rng.uniform(size=(4, 4, 3))
    assert np.array_equal(corrupt(image, 0.0, rng), image)
    dark = corrupt(image, 1.0, np.random.default_rng(0))
    assert dark.min() >= 0.0 and dark.max() <= 1.0
    assert dark.mean() < image.mean()


def test_pool_is_deterministic(tiny_scene):
    assert pool_seeds(9, 3) == pool_seeds(9, 3)
    assert len(set(pool_seeds(9, 5))) == 5
    pool = generate_pool(9, tiny_scene)
    assert [t.seed for t in pool] == pool_seeds(9, tiny_scene.pool_size)


def test_custom_taxonomy_sets_the_label_range():
    tax = ClassTaxonomy(4, frozenset({0, 1}), frozenset({2}), frozenset({3}))
    cfg = SceneConfig(height=16, width=16, class_count=4)
    t = generate_triplet(2, cfg, tax)
    assert t.target_labels.data.max() < 4


def test_config_and_taxonomy_validation(taxonomy):
    with pytest.raises(ContractViolation):
        SceneConfig(corruption=1.5)
    with pytest.raises(ContractViolation):
        SceneConfig(height=1)
    with pytest.raises(ContractViolation):
        generate_triplet(0, SceneConfig(height=8, width=8, class_count=4), taxonomy)
