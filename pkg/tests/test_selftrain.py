"""
Tests for the self-training loop
"""

import logging

import numpy as np
import pandas as pd
import pytest

from tools.alignment import IdentityAlignment, OracleAlignment, StoredFlowAlignment
from tools.refine import ClassTaxonomy, RefineConfig, pseudo_label, refine
from tools.scenes import SceneConfig, generate_pool
from tools.selftrain import (
    METRIC_COLUMNS,
    TrainConfig,
    adaptation_gradients,
    evaluate_target,
    refign_train,
    replay_teacher,
    write_metrics_csv,
)
from tools.toy_model import ToyModelParams, cross_entropy_gradients, extract_features, feature_dim, forward
from utils.helper import ContractViolation, EmptyInputError


@pytest.fixture
def pool(tiny_scene):
    return generate_pool(3, tiny_scene)


def _config(**kwargs):
    settings = dict(iterations=12, learning_rate=0.5, ema_momentum=0.9, rng_seed=4, eval_interval=5)
    settings.update(kwargs)
    return TrainConfig(**settings)


def test_training_is_deterministic(pool):
    a = refign_train(pool, _config(), OracleAlignment())
    b = refign_train(pool, _config(), OracleAlignment())
    pd.testing.assert_frame_equal(a.metrics, b.metrics)
    assert a.student.equals(b.student)
    assert a.teacher.equals(b.teacher)


def test_metrics_log_layout(pool):
    result = refign_train(pool, _config(), OracleAlignment())
    m = result.metrics
    assert list(m.columns) == METRIC_COLUMNS
    assert m["iteration"].tolist() == list(range(12))
    assert (m["loss_source"] > 0).all()
    evaluated = m["target_miou"].notna()
    assert m.loc[evaluated, "iteration"].tolist() == [4, 9, 11]
    target = m["branch"] == "target"
    assert m.loc[target, "trust"].notna().all()
    assert m.loc[~target, "trust"].isna().all()
    assert sum(result.branch_counts().values()) == 12


def test_bypass_matches_zero_alpha(pool):
    bypass = refign_train(pool, _config(bypass_refine=True), OracleAlignment())
    zero = refign_train(pool, _config(refine=RefineConfig(fixed_alpha=0.0)), OracleAlignment())
    pd.testing.assert_frame_equal(bypass.metrics, zero.metrics)
    assert bypass.student.equals(zero.student)


def test_teacher_follows_the_ema_recursion(pool):
    result = refign_train(pool, _config(record_history=True), IdentityAlignment())
    teachers = replay_teacher(result.history, 0.9)
    assert len(teachers) == 12
    assert teachers[0].equals(result.history[0].student)
    assert teachers[-1].equals(result.teacher)
    for state, replayed in zip(result.history, teachers):
        assert state.teacher.equals(replayed)


def test_branches_are_balanced():
    cfg = _config(iterations=10_000, eval_interval=100_000, learning_rate=0.01)
    tiny = generate_pool(1, SceneConfig(height=4, width=4, pool_size=2, num_buildings=1, num_poles=1,
                                        num_dynamic=1, homography_strength=0.0))
    counts = refign_train(tiny, cfg, IdentityAlignment()).branch_counts()
    assert abs(counts["target"] - 5000) <= 150
    assert counts["target"] + counts["reference"] == 10_000


def test_reference_adaptation_off_uses_only_the_target_branch(pool):
    result = refign_train(pool, _config(reference_adaptation=False), IdentityAlignment())
    assert result.branch_counts() == {"target": 12}


def test_alignment_failure_falls_back_to_the_teacher_prediction(pool, caplog):
    cfg = _config(reference_adaptation=False)
    with caplog.at_level(logging.WARNING, logger="tools.selftrain"):
        failed = refign_train(pool, cfg, StoredFlowAlignment({}))
    assert (failed.metrics["align_failed"] == 1).all()
    assert "Alignment failed" in caplog.text

    bypass = refign_train(pool, _config(reference_adaptation=False, bypass_refine=True), IdentityAlignment())
    assert failed.student.equals(bypass.student)


def test_first_update_treats_pseudo_labels_as_constants(pool, rng):
    tax = ClassTaxonomy.default()
    init = ToyModelParams.random(feature_dim(3), 6, rng, scale=0.5)
    cfg = _config(iterations=1, reference_adaptation=False)
    result = refign_train(pool, cfg, IdentityAlignment(), tax, init)

    loop_seed, _ = np.random.SeedSequence(cfg.rng_seed).spawn(2)
    triplet = pool[int(np.random.default_rng(loop_seed).integers(len(pool)))]
    q_t = forward(init, triplet.target)
    aligned = IdentityAlignment()(forward(init, triplet.reference), triplet, rng)
    pseudo = pseudo_label(refine(q_t, aligned.aligned, aligned.confidence, tax, cfg.refine).refined)

    _, source_grads = cross_entropy_gradients(init, extract_features(triplet.source), triplet.source_labels)
    _, adapt_grads = adaptation_gradients(init, extract_features(triplet.target), pseudo)
    expected = init.axpy(-cfg.learning_rate, source_grads + adapt_grads)
    assert np.allclose(result.student.weight, expected.weight, atol=1e-12)
    assert np.allclose(result.student.bias, expected.bias, atol=1e-12)


def test_evaluate_target_with_an_untrained_model(pool):
    cm, diversity = evaluate_target(ToyModelParams.zeros(feature_dim(3), 6), pool)
    assert cm.counts.sum() == 2 * 8 * 8
    assert cm.counts[:, 1:].sum() == 0  # uniform scores break ties towards class 0
    assert diversity == 0.0
    with pytest.raises(EmptyInputError):
        evaluate_target(ToyModelParams.zeros(feature_dim(3), 6), [])


def test_invalid_inputs(pool):
    with pytest.raises(EmptyInputError):
        refign_train([], _config(), IdentityAlignment())
    with pytest.raises(ContractViolation):
        refign_train(pool, _config(), IdentityAlignment(), init=ToyModelParams.zeros(feature_dim(3), 4))
    with pytest.raises(ContractViolation):
        TrainConfig(iterations=0)
    with pytest.raises(ContractViolation):
        TrainConfig(ema_momentum=1.2)


def test_metrics_csv_is_reproducible(pool, tmp_path):
    result = refign_train(pool, _config(), OracleAlignment())
    write_metrics_csv(result.metrics, tmp_path / "a.csv")
    write_metrics_csv(refign_train(pool, _config(), OracleAlignment()).metrics, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert pd.read_csv(tmp_path / "a.csv").shape == (12, len(METRIC_COLUMNS))
