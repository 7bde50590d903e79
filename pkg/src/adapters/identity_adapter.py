from src.core.dataset import FeatureSequence
from src.core.model import ParamStore
from src.interfaces.adaptation_strategy import AdaptationOutcome, AdaptationStrategy


class IdentityAdapter(AdaptationStrategy):
    """No adaptation: the control strategy."""

    kind = "none"

    def adapt(self, params: ParamStore, video: FeatureSequence) -> AdaptationOutcome:
        return AdaptationOutcome(params, [], [])
