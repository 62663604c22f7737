from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lvquant.data.phantom import generate_dataset
from lvquant.data.preprocess import denormalize_targets, normalize_targets
from lvquant.errors import ConfigError, LVQuantError
from lvquant.model import PHASE_BRANCH, init_params
from lvquant.training import (
    STEP1_TRAINABLE,
    TrainConfig,
    ablation_configs,
    destandardize_targets,
    dump_config,
    make_folds,
    parse_config,
    prepare_dataset,
    prox_group_lasso,
    run_experiment,
    sgd_step,
    standardize_targets,
    target_stats,
    train_step1,
    train_step2,
    train_two_step,
)

TINY = TrainConfig(epochs_step1=2, epochs_step2=2, batch_subjects=2)


@pytest.fixture(scope="module")
def tiny_data():
    return prepare_dataset(generate_dataset(4, seed=3, frames_per_cycle=8))


# -- folds ------------------------------------------------------------------------

def test_fold_sizes():
    assert make_folds([f"s{i}" for i in range(10)], 5, 0).sizes() == [2] * 5
    assert sorted(make_folds([f"s{i}" for i in range(11)], 5, 0).sizes(), reverse=True) == [3, 2, 2, 2, 2]


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(2, 8), st.integers(0, 1000))
def test_folds_partition_subjects(n, k, seed):
    if k > n:
        with pytest.raises(ValueError):
            make_folds(range(n), k, seed)
        return
    plan = make_folds([f"s{i}" for i in range(n)], k, seed)
    assert plan == make_folds([f"s{i}" for i in range(n)], k, seed)
    sizes = plan.sizes()
    assert sum(sizes) == n and max(sizes) - min(sizes) <= 1
    for f in range(k):
        assert not set(plan.test_ids(f)) & set(plan.train_ids(f))
        assert len(plan.test_ids(f)) + len(plan.train_ids(f)) == n


# -- optimizer --------------------------------------------------------------------

def test_sgd_plain_and_zero_gradient():
    p = {"a": np.array([1.0, 2.0])}
    new, _ = sgd_step(p, {"a": np.array([0.5, -1.0])}, lr=0.1)
    np.testing.assert_allclose(new["a"], [0.95, 2.1])
    same, v = sgd_step(p, {"a": np.zeros(2)}, lr=0.1, momentum=0.9)
    np.testing.assert_array_equal(same["a"], p["a"])


def test_sgd_momentum_two_steps_on_quadratic():
    theta = {"t": np.array([1.0])}
    v = None
    for _ in range(2):
        theta, v = sgd_step(theta, {"t": theta["t"].copy()}, lr=0.1, momentum=0.9, velocity=v)
    assert theta["t"][0] == pytest.approx(0.72, abs=1e-15)


def test_sgd_weight_decay_and_shape_check():
    new, _ = sgd_step({"a": np.array([2.0])}, {"a": np.array([0.0])}, lr=0.5, weight_decay=0.1)
    assert new["a"][0] == pytest.approx(2.0 - 0.5 * 0.2)
    with pytest.raises(ValueError):
        sgd_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, lr=0.1)


def test_prox_zeroes_small_columns_and_shrinks_large_ones():
    w = np.array([[3.0, 0.01, 0.0], [4.0, 0.0, 0.0]])
    out = prox_group_lasso(w, 1.0)
    np.testing.assert_allclose(out[:, 0], [3.0 * 0.8, 4.0 * 0.8])
    assert np.all(out[:, 1:] == 0)


# -- target scaling --------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 3.0))
def test_train_time_scaling_is_inverted_at_eval(seed, spacing):
    rng = np.random.default_rng(seed)
    labels = np.c_[rng.uniform(300, 3000, (20, 2)), rng.uniform(20, 60, (20, 3)), rng.uniform(3, 15, (20, 6))]
    p = init_params(0, dtype=np.float32)
    p.buffers["targets.mean"] = rng.uniform(0, 1, 11).astype(np.float32)
    p.buffers["targets.std"] = rng.uniform(0.01, 0.2, 11).astype(np.float32)
    z = standardize_targets(normalize_targets(labels, spacing), p)
    back = denormalize_targets(destandardize_targets(z, p), spacing)
    np.testing.assert_allclose(back, labels, rtol=1e-6)


def test_target_stats_use_every_training_frame(tiny_data):
    mean, std = target_stats(tiny_data, np.float64)
    allt = np.concatenate([s.targets for s in tiny_data])
    np.testing.assert_allclose(mean, allt.mean(axis=0))
    np.testing.assert_allclose(std, allt.std(axis=0))


# -- config files ----------------------------------------------------------------

def test_config_round_trip_and_errors():
    cfg = replace(TrainConfig(), lr_step1=0.02, epochs_step2=7).with_lambdas(0.0, 0.5)
    cfg = replace(cfg, objective=replace(cfg.objective, temporal_boundary="skip_first"))
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config("# comment only\nlambda1 = 0.3\n").objective.lambda1 == 0.3
    for bad in ("momentum = 1.5", "unknown = 1", "lr_step1 = fast", "lambda1", "inter_in_step1 = maybe"):
        with pytest.raises(ConfigError):
            parse_config(bad)


def test_ablation_configs_share_everything_but_lambdas():
    cfgs = ablation_configs(TrainConfig())
    assert list(cfgs) == ["N/N", "intra/N", "intra/inter"]
    assert [c.objective.label for c in cfgs.values()] == list(cfgs)
    assert len({replace(c, objective=None) for c in cfgs.values()}) == 1


# -- the two steps ----------------------------------------------------------------

def _branch_digest(params):
    return params.digest(PHASE_BRANCH)


def _rest_digest(params):
    return params.digest(STEP1_TRAINABLE)


def test_step1_leaves_phase_branch_bit_identical(tiny_data):
    init = init_params(TINY.seed)
    p1, log1 = train_step1(tiny_data, TINY)
    assert _branch_digest(p1) == _branch_digest(init)
    assert _rest_digest(p1) != _rest_digest(init)
    assert len(log1.epochs) == 2


def test_step2_leaves_everything_else_bit_identical(tiny_data):
    p1, _ = train_step1(tiny_data, TINY)
    p2, log2 = train_step2(tiny_data, TINY, p1)
    assert _rest_digest(p2) == _rest_digest(p1)
    assert _branch_digest(p2) != _branch_digest(p1)
    for k, v in p1.buffers.items():
        assert v.tobytes() == p2.buffers[k].tobytes()
    assert all(e.loss_area == 0 and e.total == e.loss_phase for e in log2.epochs)


def test_zero_step2_epochs_is_identity(tiny_data):
    p1, _ = train_step1(tiny_data, TINY)
    p2, log2 = train_step2(tiny_data, replace(TINY, epochs_step2=0), p1)
    assert p2.digest() == p1.digest() and log2.epochs == []


def test_training_is_reproducible_and_lambda_sensitive(tiny_data):
    a, _ = train_two_step(tiny_data, TINY)
    b, _ = train_two_step(tiny_data, TINY)
    assert a.digest() == b.digest()
    c, _ = train_two_step(tiny_data, TINY.with_lambdas(0.0, 0.0))
    assert c.digest() != a.digest()


def test_empty_training_set():
    with pytest.raises(LVQuantError):
        train_step1([], TINY)


def test_training_curves_trend_down():
    data = prepare_dataset(generate_dataset(6, seed=4, frames_per_cycle=8))
    cfg = replace(TINY, epochs_step1=8, epochs_step2=8, lr_step1=0.003)
    _, (log1, log2) = train_two_step(data, cfg)
    totals = [e.total for e in log1.epochs]
    assert totals[-1] <= totals[0]
    assert all(b <= 1.1 * a for a, b in zip(totals, totals[1:]))
    phase = [e.loss_phase for e in log2.epochs]
    assert phase[-1] < phase[0]


def test_log_csv_layout(tiny_data):
    _, log1 = train_step1(tiny_data, replace(TINY, epochs_step1=1))
    lines = log1.csv().splitlines()
    assert lines[0].startswith("epoch,loss_area") and lines[1].startswith("1,")


def test_train_config_validation():
    for bad in (dict(lr_step1=0.0), dict(momentum=1.0), dict(fold_count=1), dict(batch_subjects=0),
                dict(weight_decay=-1.0), dict(precision=16), dict(intra_update="adam")):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


# -- cross-validation protocol ----------------------------------------------------

def test_experiment_keeps_test_subjects_out_of_training(tmp_path):
    data = prepare_dataset(generate_dataset(6, seed=8, frames_per_cycle=6))
    cfg = replace(TINY, epochs_step1=1, epochs_step2=1, fold_count=3)
    res = run_experiment(data, cfg, out_dir=tmp_path)
    tested = [sid for f in res.folds for sid in f.test_ids]
    assert sorted(tested) == sorted(s.subject_id for s in data)
    for f in res.folds:
        assert f.seen_ids == set(f.train_ids)
        assert not f.seen_ids & set(f.test_ids)
    assert res.report.n_frames == 6 * 6
    assert (tmp_path / "intra_inter_fold2.lvqm").is_file()
    assert (tmp_path / "intra_inter_fold0_step1.csv").read_text().startswith("epoch,")
    again = run_experiment(data, cfg)
    assert again.report == res.report
