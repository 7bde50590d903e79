import math

import numpy as np
import pytest

from src.core.exceptions import ContractError, DimensionError, NumericError
from src.core.losses import (
    aux_loss,
    binary_entropy,
    joint_loss,
    masked_primary_loss,
    primary_loss,
    primary_loss_from_logits,
)
from src.core.model import ForwardTrace, forward
from src.core.numerics import Array, backward, gradcheck


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def test_primary_loss_matches_hand_computation():
    loss = primary_loss(Array([0.5, 0.5]), np.array([0.5, 0.5]))
    assert loss.item() == pytest.approx(0.693147, abs=1e-6)
    loss = primary_loss(Array([0.9, 0.1]), np.array([1.0, 0.0]))
    assert loss.item() == pytest.approx(0.10536, abs=1e-5)


def test_primary_loss_accepts_graded_targets():
    h = Array([0.8])
    expected = -(0.3 * math.log(0.8) + 0.7 * math.log(0.2))
    assert primary_loss(h, np.array([0.3])).item() == pytest.approx(expected)


def test_primary_loss_checks_lengths():
    with pytest.raises(DimensionError):
        primary_loss(Array([0.5, 0.5]), np.array([1.0]))
    with pytest.raises(DimensionError):
        primary_loss_from_logits(Array([0.0, 0.0]), np.array([1.0]))


def test_primary_loss_rejects_saturated_scores():
    with pytest.raises(NumericError):
        primary_loss(Array([0.0, 0.5]), np.array([1.0, 0.0]))


@pytest.mark.parametrize("target", [0.2, 0.5, 0.9])
def test_bce_is_minimal_where_the_score_equals_the_target(target):
    grid = np.round(np.linspace(0.01, 0.99, 99), 2)
    losses = [primary_loss(Array([h]), np.array([target])).item() for h in grid]
    assert grid[int(np.argmin(losses))] == pytest.approx(target)


def test_logit_form_equals_the_score_form():
    z = np.array([-2.0, 0.3, 1.7])
    y = np.array([0.0, 0.4, 1.0])
    h = 1.0 / (1.0 + np.exp(-z))
    assert primary_loss_from_logits(Array(z), y).item() == pytest.approx(primary_loss(Array(h), y).item(), rel=1e-12)


def test_logit_form_stays_finite_when_scores_saturate():
    loss = primary_loss_from_logits(Array([800.0, -800.0]), np.array([0.0, 1.0]))
    assert loss.item() == pytest.approx(800.0)
    assert binary_entropy(Array([800.0, -800.0])).item() == pytest.approx(0.0, abs=1e-12)


def test_primary_loss_gradient_matches_finite_differences():
    y = np.array([1.0, 0.0, 0.3])
    assert gradcheck(lambda z: primary_loss_from_logits(z, y), [np.array([0.4, -1.2, 2.0])], eps=1e-6) < 1e-6


def test_masked_primary_loss_uses_selected_clips_only():
    z = Array([logit(0.9), 0.0, logit(0.1)])
    loss = masked_primary_loss(z, np.array([1.0, 0.0, 0.0]), np.array([True, False, True]))
    assert loss.item() == pytest.approx(-math.log(0.9))
    with pytest.raises(ContractError):
        masked_primary_loss(z, np.zeros(3), np.zeros(3, dtype=bool))


def test_binary_entropy_is_maximal_at_one_half():
    assert binary_entropy(Array([0.0, 0.0])).item() == pytest.approx(math.log(2.0))
    assert binary_entropy(Array([logit(0.99)])).item() < binary_entropy(Array([logit(0.6)])).item()


def test_joint_loss_is_the_sum_of_its_parts(params, video):
    bundle = joint_loss(params, video)
    assert bundle.l_aux.item() == bundle.l_hal_av.item() + bundle.l_hal_va.item()
    assert bundle.l_joint.item() == bundle.l_pri.item() + bundle.l_aux.item()
    assert all(value >= 0.0 for value in bundle.values().values())


def test_joint_loss_survives_saturated_scores(params, video):
    saturated = params.copy()
    saturated.assign({"score.fc2.b": np.array([200.0])}, source="test")
    bundle = joint_loss(saturated, video, np.zeros(video.n_clips))
    assert math.isfinite(bundle.l_joint.item())
    assert bundle.l_pri.item() > 100.0


def test_joint_loss_needs_labels(params, video):
    with pytest.raises(ContractError):
        joint_loss(params, video.without_targets())


def test_aux_loss_is_undefined_without_audio(params, video):
    with pytest.raises(ContractError):
        aux_loss(forward(params, video.without_audio()))


def test_aux_loss_vanishes_when_hallucinations_match(params, video):
    trace = forward(params, video)
    exact = ForwardTrace(
        visual_self=trace.visual_self,
        audio_self=trace.audio_self,
        hallucinated_audio=trace.audio_self,
        hallucinated_visual=trace.visual_self,
        visual_bimodal=trace.visual_bimodal,
        audio_bimodal=trace.audio_bimodal,
        logits=trace.logits,
        scores=trace.scores,
        missing_audio=False,
    )
    l_hal_av, l_hal_va, l_aux = aux_loss(exact)
    assert (l_hal_av.item(), l_hal_va.item(), l_aux.item()) == (0.0, 0.0, 0.0)


def test_aux_loss_never_reaches_primary_parameters(params, video):
    _, _, l_aux = aux_loss(forward(params, video))
    grads = params.gradients(l_aux, params.names("primary"))
    assert all(np.all(g == 0.0) for g in grads.values())
    assert backward(l_aux)
