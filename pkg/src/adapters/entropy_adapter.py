import logging

from src.core.dataset import FeatureSequence
from src.core.losses import binary_entropy
from src.core.model import SHARED, ParamStore, forward
from src.core.training import sgd_step
from src.interfaces.adaptation_strategy import AdaptationOutcome, AdaptationStrategy

logger = logging.getLogger(__name__)


class EntropyAdapter(AdaptationStrategy):
    """
    TENT-style baseline: K SGD steps minimising the mean binary entropy of the clip
    scores. Only the shared parameters move, as the closest analogue of adapting the
    normalisation affines of a network that has no normalisation layers.
    """

    kind = "entropy"

    def adapt(self, params: ParamStore, video: FeatureSequence) -> AdaptationOutcome:
        adapted = params.copy()
        names = adapted.names(SHARED)
        losses = []
        for _ in range(self.strategy.steps):
            loss = binary_entropy(forward(adapted, video).logits)
            losses.append(loss.item())
            sgd_step(adapted, adapted.gradients(loss, names), self.strategy.lr, names, source="entropy")
        losses.append(binary_entropy(forward(adapted, video).logits).item())
        return AdaptationOutcome(adapted, losses, [])
