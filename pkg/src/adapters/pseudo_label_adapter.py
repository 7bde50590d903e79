import logging

import numpy as np

from src.core.dataset import FeatureSequence
from src.core.losses import masked_primary_loss
from src.core.model import PRIMARY, SHARED, ParamStore, forward
from src.core.training import sgd_step
from src.interfaces.adaptation_strategy import AdaptationOutcome, AdaptationStrategy

logger = logging.getLogger(__name__)


class PseudoLabelAdapter(AdaptationStrategy):
    """
    Confidence pseudo-labelling: each round labels clips with h >= tau_hi as highlights and
    h <= tau_lo as non-highlights, then takes one SGD step on the BCE over those clips,
    updating the shared and primary parameters.
    """

    kind = "pseudo_label"

    def _round(self, adapted: ParamStore, video: FeatureSequence):
        trace = forward(adapted, video)
        h = trace.h
        confident = (h >= self.strategy.tau_hi) | (h <= self.strategy.tau_lo)
        if not confident.any():
            return None
        return masked_primary_loss(trace.logits, (h >= self.strategy.tau_hi).astype(np.float64), confident)

    def adapt(self, params: ParamStore, video: FeatureSequence) -> AdaptationOutcome:
        adapted = params.copy()
        names = adapted.names(SHARED, PRIMARY)
        losses, flags = [], []
        for step in range(self.strategy.steps):
            loss = self._round(adapted, video)
            if loss is None:
                logger.warning(f"Video '{video.id}': no confident clips in round {step + 1}, no update")
                flags.append(f"no_confident_clips:{step + 1}")
                losses.append(0.0)
                continue
            losses.append(loss.item())
            sgd_step(adapted, adapted.gradients(loss, names), self.strategy.lr, names, source="pseudo_label")

        final = self._round(adapted, video)
        losses.append(0.0 if final is None else final.item())
        return AdaptationOutcome(adapted, losses, flags)
