"""
Tests for the refign command-line interface
"""

import numpy as np
import pandas as pd
import pytest

from config.config import GAMMA_SWEEP, IGNORE_INDEX
from tools import alignment
from tools.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from tools.experiments import run_experiment
from tools.fields import FlowField, LabelMap, ProbMap, ScalarField
from tools.metrics import ause, match_set_from_flows
from tools.refine import RefineConfig
from tools.run_config import load_run_config, load_taxonomy
from tools.tensor_io import (
    array_to_params,
    read_gaussian_flow,
    read_image,
    read_label_map,
    read_tensor,
    write_gaussian_flow,
    write_label_map,
    write_prob_map,
    write_tensor,
)
from tools.toy_model import feature_dim
from tools.uncertainty import GaussianFlow, compose_gaussian

SMALL_RUN = """
train.iterations = 6
train.eval_interval = 3
train.learning_rate = 0.5
scene.height = 8
scene.width = 8
scene.pool_size = 2
alignment.fit_steps = 5
"""


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return str(path)


@pytest.fixture
def taxonomy_file(tmp_path):
    path = tmp_path / "tax.cfg"
    path.write_text("class_count = 4\nlarge_static = 0,1\nsmall_static = 2\ndynamic = 3\n", encoding="utf-8")
    return str(path)


def _gaussian(rng, h=5, w=5, log_var=(-0.5, 0.5)):
    return GaussianFlow(FlowField(rng.uniform(-1, 1, size=(h, w, 2))), ScalarField(rng.uniform(*log_var, size=(h, w))))


def test_compose_matches_the_library(tmp_path, rng):
    first, second = _gaussian(rng), _gaussian(rng)
    write_gaussian_flow(tmp_path / "a.rftn", first)
    write_gaussian_flow(tmp_path / "b.rftn", second)
    code = main(["compose", str(tmp_path / "a.rftn"), str(tmp_path / "b.rftn"), "--out", str(tmp_path / "c.rftn")])
    assert code == EXIT_OK
    out = read_gaussian_flow(tmp_path / "c.rftn")
    expected = compose_gaussian(first, second)
    assert np.array_equal(out.mean.data, expected.mean.data)
    assert np.array_equal(out.log_variance.data, expected.log_variance.data)
    assert np.array_equal(out.validity.data, expected.validity.data)


def test_compose_with_a_zero_variance_second_leg_keeps_the_first_variance(tmp_path, rng):
    first = _gaussian(rng)
    second = GaussianFlow.from_variance(FlowField.zeros(5, 5), np.zeros((5, 5)))
    write_gaussian_flow(tmp_path / "a.rftn", first)
    write_gaussian_flow(tmp_path / "b.rftn", second)
    assert main(["compose", str(tmp_path / "a.rftn"), str(tmp_path / "b.rftn"), "--out",
                 str(tmp_path / "c.rftn")]) == EXIT_OK
    out = read_gaussian_flow(tmp_path / "c.rftn")
    valid = out.validity.data
    # the clamped log-variance floor leaves a residual of exp(-10)
    assert np.allclose(out.variance[valid], first.variance[valid], rtol=1e-4)


def _refine_inputs(tmp_path, rng, make_probs):
    q_t = ProbMap(make_probs(rng, 6, 6, 4))
    q_r = ProbMap(make_probs(rng, 6, 6, 4))
    g = GaussianFlow(FlowField.constant(6, 6, 0.5, -0.25), ScalarField(rng.uniform(-2, 1, size=(6, 6))))
    write_prob_map(tmp_path / "q_t.rftn", q_t)
    write_prob_map(tmp_path / "q_r.rftn", q_r)
    write_gaussian_flow(tmp_path / "g.rftn", g)
    args = ["refine", "--q-t", str(tmp_path / "q_t.rftn"), "--q-r", str(tmp_path / "q_r.rftn"),
            "--flow", str(tmp_path / "g.rftn"), "--out-dir", str(tmp_path / "out")]
    return q_t, q_r, g, args


def test_refine_without_mixing_returns_the_target(tmp_path, rng, make_probs, taxonomy_file, capsys):
    q_t, _, _, args = _refine_inputs(tmp_path, rng, make_probs)
    assert main(args + ["--taxonomy", taxonomy_file, "--fixed-alpha", "0"]) == EXIT_OK
    assert np.array_equal(read_tensor(tmp_path / "out" / "refined.rftn"), q_t.data)
    labels = read_label_map(tmp_path / "out" / "labels.rftn", 4)
    assert np.array_equal(labels.data, np.argmax(q_t.data, axis=2))
    assert "trust_score=" in capsys.readouterr().out


def test_refine_matches_the_library(tmp_path, rng, make_probs, taxonomy_file):
    q_t, q_r, g, args = _refine_inputs(tmp_path, rng, make_probs)
    assert main(args + ["--taxonomy", taxonomy_file, "--gamma", "0.5", "--threshold", "0.6"]) == EXIT_OK
    expected = alignment.test_time_refine(q_t, q_r, g, load_taxonomy(taxonomy_file), RefineConfig(gamma=0.5),
                                          1.0, 0.6)
    assert np.array_equal(read_tensor(tmp_path / "out" / "refined.rftn"), expected.refined)
    assert np.array_equal(read_label_map(tmp_path / "out" / "labels.rftn", 4).data, expected.labels.data)


def test_eval_miou_of_perfect_predictions(tmp_path, capsys):
    labels = LabelMap(np.array([[0, 1, 2], [2, IGNORE_INDEX, 1]]), 3)
    write_label_map(tmp_path / "z.rftn", labels)
    code = main(["eval", "--metric", "miou", "--classes", "3", "--pred", str(tmp_path / "z.rftn"),
                 "--gt", str(tmp_path / "z.rftn"), "--out", str(tmp_path / "report.csv")])
    assert code == EXIT_OK
    report = pd.read_csv(tmp_path / "report.csv")
    assert report.loc[report["metric"] == "miou", "value"].item() == 1.0


def test_eval_flow_metrics(tmp_path, capsys):
    write_tensor(tmp_path / "gt.rftn", np.zeros((2, 2, 2), dtype=np.float32))
    pred = GaussianFlow(FlowField.constant(2, 2, 3.0, 4.0), ScalarField.full(2, 2, 0.0))
    write_gaussian_flow(tmp_path / "pred.rftn", pred)
    files = ["--pred", str(tmp_path / "pred.rftn"), "--gt", str(tmp_path / "gt.rftn")]

    assert main(["eval", "--metric", "aepe"] + files) == EXIT_OK
    assert "aepe,,5.0" in capsys.readouterr().out
    assert main(["eval", "--metric", "pck", "--thresholds", "1,5"] + files) == EXIT_OK
    out = capsys.readouterr().out
    assert "pck,t=1,0.0" in out and "pck,t=5,100.0" in out


def test_eval_ause_matches_the_library(tmp_path, rng):
    gt = rng.uniform(-2, 2, size=(6, 6, 2)).astype(np.float32)
    write_tensor(tmp_path / "gt.rftn", gt)
    write_gaussian_flow(tmp_path / "pred.rftn", _gaussian(rng, 6, 6, log_var=(-2.0, 2.0)))
    code = main(["eval", "--metric", "ause", "--pred", str(tmp_path / "pred.rftn"), "--gt", str(tmp_path / "gt.rftn"),
                 "--out", str(tmp_path / "report.csv")])
    assert code == EXIT_OK

    report = pd.read_csv(tmp_path / "report.csv")
    expected = ause(match_set_from_flows(FlowField(gt), read_gaussian_flow(tmp_path / "pred.rftn")))
    assert expected > 0.0
    assert report.loc[report["metric"] == "ause", "value"].item() == pytest.approx(expected, abs=1e-12)


def test_eval_ause_of_error_ordered_variance_is_zero(tmp_path, capsys):
    write_tensor(tmp_path / "gt.rftn", np.zeros((1, 3, 2), dtype=np.float32))
    mean = FlowField(np.array([[[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]]))
    write_gaussian_flow(tmp_path / "pred.rftn", GaussianFlow(mean, ScalarField(np.array([[0.0, 1.0, 2.0]]))))
    assert main(["eval", "--metric", "ause", "--pred", str(tmp_path / "pred.rftn"),
                 "--gt", str(tmp_path / "gt.rftn")]) == EXIT_OK
    assert "ause,,0.0" in capsys.readouterr().out


def test_usage_errors_exit_with_two(tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["eval", "--metric", "f1", "--pred", "a", "--gt", "b"]) == EXIT_USAGE
    assert main(["eval", "--metric", "aepe", "--pred", "a", "b", "--gt", "c"]) == EXIT_USAGE
    assert main(["compose", "only-one"]) == EXIT_USAGE


def test_malformed_or_missing_files_exit_with_one(tmp_path):
    (tmp_path / "junk.rftn").write_bytes(b"not a container at all")
    assert main(["eval", "--metric", "aepe", "--pred", str(tmp_path / "junk.rftn"),
                 "--gt", str(tmp_path / "junk.rftn")]) == EXIT_RUNTIME
    assert main(["compose", str(tmp_path / "missing.rftn"), str(tmp_path / "missing.rftn"),
                 "--out", str(tmp_path / "c.rftn")]) == EXIT_RUNTIME
    (tmp_path / "bad.cfg").write_text("train.iterations = zero\n", encoding="utf-8")
    assert main(["selftrain", "--config", str(tmp_path / "bad.cfg"), "--out-dir", str(tmp_path)]) == EXIT_RUNTIME


def test_selftrain_is_reproducible(tmp_path, run_config, capsys):
    for name in ("a", "b"):
        code = main(["selftrain", "--config", run_config, "--seed", "3", "--out-dir", str(tmp_path / name)])
        assert code == EXIT_OK
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    params = read_tensor(tmp_path / "a" / "params.rftn")
    assert params.shape == (feature_dim(3) + 1, 6, 2)
    library = run_experiment(load_run_config(run_config).with_seed(3), "selftrain")
    assert array_to_params(params).equals(library.result.student)
    assert "target_miou=" in capsys.readouterr().out


def test_selftrain_ablation_writes_six_rows(tmp_path, run_config):
    assert main(["selftrain", "--config", run_config, "--ablate", "--out-dir", str(tmp_path)]) == EXIT_OK
    report = pd.read_csv(tmp_path / "ablation.csv")
    assert report["label"].tolist() == ["naive_average", "aligned_half_confidence", "with_confidence",
                                        "with_static_mask", "with_trust_score", "with_reference_adaptation"]
    assert report["target_miou"].between(0.0, 1.0).all()
    assert not (tmp_path / "metrics.csv").exists()


def test_gamma_sweep_uses_given_or_default_values(tmp_path, run_config, mocker):
    assert main(["selftrain", "--config", run_config, "--gamma-sweep", "0.5,0.25",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    assert pd.read_csv(tmp_path / "gamma_sweep.csv")["label"].tolist() == ["gamma=0.5", "gamma=0.25"]

    sweep = mocker.patch("tools.cli.run_gamma_sweep",
                         return_value=pd.DataFrame(columns=["label", "target_miou", "diversity", "mean_trust"]))
    assert main(["selftrain", "--config", run_config, "--gamma-sweep", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert sweep.call_args.args[1] == GAMMA_SWEEP


def test_generate_writes_a_scene(tmp_path, run_config):
    out = tmp_path / "scene"
    assert main(["generate", "--config", run_config, "--seed", "5", "--out-dir", str(out)]) == EXIT_OK
    for name in ("source", "target", "reference"):
        assert read_image(out / f"{name}.rftn").shape == (8, 8)
    assert read_label_map(out / "target_labels.rftn", 6).shape == (8, 8)
    truth = read_gaussian_flow(out / "flow_tr_true.rftn")
    noisy = read_gaussian_flow(out / "flow_tr.rftn")
    assert np.all(truth.log_variance.data == -10.0)
    assert noisy.shape == truth.shape
    assert not np.array_equal(noisy.mean.data, truth.mean.data)
