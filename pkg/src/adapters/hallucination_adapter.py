import logging

from src.core.dataset import FeatureSequence
from src.core.model import ParamStore
from src.core.training import inner_adapt
from src.interfaces.adaptation_strategy import AdaptationOutcome, AdaptationStrategy

# Initialize logger for this module
logger = logging.getLogger(__name__)


class HallucinationAdapter(AdaptationStrategy):
    """
    Adapts the shared and hallucination parameters on the cross-modal hallucination loss,
    then predicts with the adapted shared parameters and the untouched primary ones.
    """

    kind = "hallucination"

    def adapt(self, params: ParamStore, video: FeatureSequence) -> AdaptationOutcome:
        if not video.has_audio:
            # Missing-audio mode: the audio target is the detached hallucination itself,
            # so the auxiliary loss is identically zero and there is nothing to adapt.
            logger.warning(f"Video '{video.id}' has no audio; skipping hallucination adaptation")
            return AdaptationOutcome(params.copy(), [0.0] * (self.strategy.steps + 1), ["no_audio"])

        adapted, trajectory = inner_adapt(params, video, self.strategy.lr, self.strategy.steps)
        logger.debug(f"Video '{video.id}': L_aux {trajectory[0]:.5f} -> {trajectory[-1]:.5f}")
        return AdaptationOutcome(adapted, trajectory, [])
