import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from src.core.dataset import FeatureSequence
from src.core.exceptions import ContractError, DimensionError, NumericError
from src.core.model import ForwardTrace, ParamStore, forward
from src.core.numerics import Array, as_array, detach, log, log_sigmoid, mean, sigmoid, square

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossBundle:
    """
    Losses of one forward pass. l_aux = l_hal_av + l_hal_va and l_joint = l_pri + l_aux,
    both as recorded graph nodes, so a single backward on l_joint reaches every partition.
    """

    l_pri: Array
    l_hal_av: Array
    l_hal_va: Array
    l_aux: Array
    l_joint: Array

    def values(self) -> Dict[str, float]:
        return {
            "l_pri": self.l_pri.item(),
            "l_hal_av": self.l_hal_av.item(),
            "l_hal_va": self.l_hal_va.item(),
            "l_aux": self.l_aux.item(),
            "l_joint": self.l_joint.item(),
        }


def primary_loss(h: Array, h_gt) -> Array:
    """
    Mean binary cross-entropy between clip scores and (possibly graded) targets.

    Args:
        h (Array): Predicted scores, shape (n,), strictly inside (0, 1).
        h_gt: Targets in [0, 1], shape (n,).

    Returns:
        Array: Scalar loss.

    Raises:
        DimensionError: If the lengths differ.
        NumericError: If any score is 0 or 1 (or outside).
    """
    y = as_array(h_gt)
    if h.shape != y.shape:
        raise DimensionError(f"primary_loss: scores {h.shape} vs targets {y.shape}")
    if np.any(h.data <= 0.0) or np.any(h.data >= 1.0):
        raise NumericError("primary_loss: scores must lie strictly inside (0, 1)")
    return -mean(y * log(h) + (1.0 - y) * log(1.0 - h))


def primary_loss_from_logits(logits: Array, h_gt) -> Array:
    """
    The same BCE written on the pre-sigmoid logits z: −mean(y log σ(z) + (1−y) log σ(−z)).
    Finite for any finite z, including scores that round to 0 or 1.
    """
    y = as_array(h_gt)
    if logits.shape != y.shape:
        raise DimensionError(f"primary_loss: logits {logits.shape} vs targets {y.shape}")
    return -mean(y * log_sigmoid(logits) + (1.0 - y) * log_sigmoid(-logits))


def masked_primary_loss(logits: Array, h_gt: np.ndarray, mask: np.ndarray) -> Array:
    """BCE (on logits) averaged over the clips selected by `mask` only."""
    index = np.flatnonzero(mask)
    if index.size == 0:
        raise ContractError("masked_primary_loss needs at least one selected clip")
    return primary_loss_from_logits(logits[index], np.asarray(h_gt, dtype=np.float64)[index])


def binary_entropy(logits: Array) -> Array:
    """Mean of −[h ln h + (1−h) ln(1−h)] over clips, with h = σ(logits)."""
    h = sigmoid(logits)
    return -mean(h * log_sigmoid(logits) + (1.0 - h) * log_sigmoid(-logits))


def aux_loss(trace: ForwardTrace) -> Tuple[Array, Array, Array]:
    """
    Cross-modal hallucination losses against detached targets.

    Returns:
        Tuple[Array, Array, Array]: (l_hal_av, l_hal_va, l_aux) where
        l_hal_va = mean((â − detach(a^a))²), l_hal_av = mean((v̂ − detach(v^v))²).

    Raises:
        ContractError: If the trace comes from missing-audio mode.
    """
    if trace.hallucinated_visual is None or trace.missing_audio:
        raise ContractError("aux_loss needs both hallucinated streams (normal mode forward)")
    l_hal_va = mean(square(trace.hallucinated_audio - detach(trace.audio_self)))
    l_hal_av = mean(square(trace.hallucinated_visual - detach(trace.visual_self)))
    return l_hal_av, l_hal_va, l_hal_av + l_hal_va


def aux_objective(params: ParamStore, video: FeatureSequence) -> Array:
    """L_aux of one unlabeled video (targets are never read)."""
    _, _, l_aux = aux_loss(forward(params, video))
    return l_aux


def joint_loss(params: ParamStore, video: FeatureSequence, h_gt: Optional[np.ndarray] = None) -> LossBundle:
    """
    L_joint = L_pri + L_aux from a single forward pass.

    Args:
        params (ParamStore): Model parameters.
        video (FeatureSequence): A video with audio.
        h_gt (Optional[np.ndarray]): Targets; defaults to the video's own.

    Raises:
        ContractError: If no targets are available.
    """
    targets = h_gt if h_gt is not None else video.targets
    if targets is None:
        raise ContractError(f"joint_loss needs labels; video '{video.id}' has none")
    trace = forward(params, video)
    l_pri = primary_loss_from_logits(trace.logits, targets)
    l_hal_av, l_hal_va, l_aux = aux_loss(trace)
    return LossBundle(l_pri, l_hal_av, l_hal_va, l_aux, l_pri + l_aux)
