import math

import numpy as np
import pytest

from src.core.dataset import Dataset, FeatureSequence
from src.core.exceptions import ContractError
from src.core.losses import joint_loss
from src.core.model import AUX, PRIMARY, SHARED, forward, init_params
from src.core.training import (
    OptimizerState,
    adam_step,
    inner_adapt,
    sgd_step,
    train_joint,
    train_meta,
)


def test_sgd_step_moves_against_the_gradient(params):
    name = params.names(PRIMARY)[0]
    before = params[name].numpy()
    grad = np.ones_like(before)
    sgd_step(params, {name: grad}, lr=0.5, names=[name])
    np.testing.assert_allclose(params[name].data, before - 0.5)


def test_sgd_step_needs_every_gradient(params):
    with pytest.raises(ContractError):
        sgd_step(params, {}, lr=0.1, names=[params.names()[0]])


def test_first_adam_step_has_the_learning_rate_as_magnitude(params):
    name = params.names(SHARED)[0]
    before = params[name].numpy()
    grad = np.random.default_rng(0).normal(size=before.shape)
    state = OptimizerState("adam", lr=0.01)
    adam_step(state, params, {name: grad}, [name])
    assert state.step == 1
    np.testing.assert_allclose(params[name].data - before, -0.01 * np.sign(grad), atol=1e-6)


def test_optimizer_kind_is_validated():
    with pytest.raises(ContractError):
        OptimizerState("rmsprop", lr=0.1)
    with pytest.raises(ContractError):
        adam_step(OptimizerState("sgd", lr=0.1), None, {})


def test_joint_training_with_zero_epochs_returns_the_initialisation(params, bench, train_config):
    trained, history = train_joint(params, bench.train, train_config.model_copy(update={"joint_epochs": 0}))
    assert trained.same_as(params)
    assert history == []
    assert trained.stage == "joint"


def test_joint_training_updates_a_copy(params, bench, train_config):
    snapshot = params.content_hash()
    trained, history = train_joint(params, bench.train, train_config)
    assert params.content_hash() == snapshot
    assert not trained.same_as(params)
    assert [r.epoch for r in history] == [1]
    assert history[0].l_joint == pytest.approx(history[0].l_pri + history[0].l_aux)


def test_joint_training_is_deterministic(params, bench, train_config):
    first, _ = train_joint(params, bench.train, train_config)
    second, _ = train_joint(params, bench.train, train_config)
    assert first.same_as(second)


def test_joint_training_needs_labels(params, bench, train_config):
    unlabeled = bench.train.with_videos([v.without_targets() for v in bench.train])
    with pytest.raises(ContractError):
        train_joint(params, unlabeled, train_config)


def test_inner_adapt_touches_only_shared_and_aux(params, video):
    adapted, trajectory = inner_adapt(params, video, lr=0.1, steps=3)
    assert len(trajectory) == 4
    assert adapted.content_hash(PRIMARY) == params.content_hash(PRIMARY)
    assert adapted.content_hash(SHARED, AUX) != params.content_hash(SHARED, AUX)


def test_inner_adapt_ignores_labels(params, video):
    _, with_labels = inner_adapt(params, video, lr=0.1, steps=2)
    _, without_labels = inner_adapt(params, video.without_targets(), lr=0.1, steps=2)
    assert with_labels == without_labels


def test_inner_adapt_with_zero_rate_is_identity(params, video):
    adapted, trajectory = inner_adapt(params, video, lr=0.0, steps=2)
    assert adapted.same_as(params)
    assert trajectory[0] == trajectory[-1]


def test_inner_adapt_preconditions(params, video):
    with pytest.raises(ContractError):
        inner_adapt(params, video, lr=0.1, steps=0)
    with pytest.raises(ContractError):
        inner_adapt(params, video.without_audio(), lr=0.1, steps=1)


def test_meta_training_needs_joint_weights(params, bench, train_config):
    with pytest.raises(ContractError):
        train_meta(params, bench.train, train_config)


@pytest.mark.parametrize("line7_mode", ["sequential", "batch_mean"])
def test_meta_training_write_discipline(params, bench, train_config, line7_mode):
    joint, _ = train_joint(params, bench.train, train_config)
    audit = []
    meta, history = train_meta(joint, bench.train, train_config.model_copy(update={"line7_mode": line7_mode}), audit)

    allowed = {"aux": set(meta.names(SHARED, AUX)), "outer": set(meta.names(SHARED, PRIMARY))}
    assert {source for _, source in audit} == {"aux", "outer"}
    for name, source in audit:
        assert name in allowed[source], (name, source)
    assert meta.stage == "meta"
    assert len(history) == 1
    assert joint.stage == "joint"


def test_meta_training_with_frozen_outer_rate_keeps_primary(params, bench, train_config):
    joint, _ = train_joint(params, bench.train, train_config)
    frozen = train_config.model_copy(update={"meta_lr": 0.0, "outer_optimizer": "sgd"})
    meta, _ = train_meta(joint, bench.train, frozen)
    assert meta.content_hash(PRIMARY) == joint.content_hash(PRIMARY)


def test_meta_training_is_deterministic(params, bench, train_config):
    joint, _ = train_joint(params, bench.train, train_config)
    first, _ = train_meta(joint, bench.train, train_config)
    second, _ = train_meta(joint, bench.train, train_config)
    assert first.same_as(second)


def test_stage_survives_copy(model_config):
    store = init_params(model_config)
    store.stage = "joint"
    assert store.copy().stage == "joint"


def test_adam_matches_a_scalar_reference_over_ten_steps(params):
    name = "score.fc2.b"
    state = OptimizerState("adam", lr=0.05)
    p, m, v = float(params[name].data[0]), 0.0, 0.0
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for t in range(1, 11):
        g = 2.0 * (p - 3.0)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        p = p - 0.05 * (m / (1.0 - beta1 ** t)) / (math.sqrt(v / (1.0 - beta2 ** t)) + eps)

        current = params[name].data
        adam_step(state, params, {name: 2.0 * (current - 3.0)}, [name])
        assert params[name].data[0] == pytest.approx(p, abs=1e-12)
    assert state.step == 10


def test_zero_information_video_trains_toward_one_half(params, train_config):
    flat = FeatureSequence("flat", np.ones((6, 4)), np.ones((6, 3)), np.full(6, 0.5))
    dataset = Dataset((flat,), "train", 4, 3)
    cfg = train_config.model_copy(update={"joint_epochs": 200, "batch_size": 1, "joint_lr": 0.01})
    trained, _ = train_joint(params, dataset, cfg)
    assert np.mean(np.abs(forward(trained, flat).h - 0.5)) < 0.05


def test_joint_loss_trends_down_over_fifty_steps(params, bench, train_config):
    cfg = train_config.model_copy(update={"joint_epochs": 50, "batch_size": len(bench.train), "joint_lr": 1e-3})
    _, history = train_joint(params, bench.train, cfg)
    losses = [record.l_joint for record in history]
    assert len(losses) == 50
    assert sum(b > a for a, b in zip(losses, losses[1:])) <= 5
    assert losses[-1] < losses[0]


def _mean_joint_loss(params, dataset):
    return np.mean([joint_loss(params, video).l_joint.item() for video in dataset])


def test_thirty_epochs_lower_the_joint_loss(params, bench, train_config):
    trained, _ = train_joint(params, bench.train, train_config.model_copy(update={"joint_epochs": 30}))
    assert _mean_joint_loss(trained, bench.train) < _mean_joint_loss(params, bench.train)


def test_small_inner_rate_gives_a_monotone_aux_trajectory(params, video):
    _, trajectory = inner_adapt(params, video, lr=1e-2, steps=10)
    violations = sum(b > a + 1e-9 for a, b in zip(trajectory, trajectory[1:]))
    assert violations <= 1


def test_meta_training_survives_saturated_scores(params, bench, train_config):
    joint, _ = train_joint(params, bench.train, train_config)
    joint.assign({"score.fc2.b": np.array([300.0])}, source="test")
    meta, history = train_meta(joint, bench.train, train_config)
    assert math.isfinite(history[0].l_pri)
    assert meta.stage == "meta"
