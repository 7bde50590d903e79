from abc import ABC, abstractmethod
from typing import List, NamedTuple

from src.core.dataset import FeatureSequence
from src.core.exceptions import ContractError
from src.core.model import ParamStore
from src.core.schemas import StrategyConfig


class AdaptationOutcome(NamedTuple):
    params: ParamStore
    losses: List[float]
    flags: List[str]


class AdaptationStrategy(ABC):
    """
    Abstract base class for test-time adaptation strategies.

    This enforces a Strategy Pattern, allowing evaluation to swap the way a model is
    adapted to each test video without changing the evaluation loop.
    """

    kind: str = "abstract"

    def __init__(self, strategy: StrategyConfig) -> None:
        if strategy.kind != self.kind:
            raise ContractError(f"{type(self).__name__} cannot run a '{strategy.kind}' strategy")
        self.strategy = strategy

    @abstractmethod
    def adapt(self, params: ParamStore, video: FeatureSequence) -> AdaptationOutcome:
        """
        Adapts a copy of the parameters to one unlabeled video.

        Args:
            params (ParamStore): The trained base parameters. Implementations must not
                modify them.
            video (FeatureSequence): The test video with its targets stripped.

        Returns:
            AdaptationOutcome: Adapted copy, the loss before each step plus after the
                last one (K+1 values), and any flags raised along the way.
        """
        pass
