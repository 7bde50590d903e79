"""
Per-video test-time adaptation and split evaluation.

Every video adapts independently from the same base parameters; the base store is only
ever read, so videos can be processed on worker threads and the results are merged back
in dataset order.
"""

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Type, Union

import numpy as np

from src.adapters.entropy_adapter import EntropyAdapter
from src.adapters.hallucination_adapter import HallucinationAdapter
from src.adapters.identity_adapter import IdentityAdapter
from src.adapters.pseudo_label_adapter import PseudoLabelAdapter
from src.core.dataset import Dataset, FeatureSequence
from src.core.exceptions import ContractError, NumericError
from src.core.metrics import binarize_targets, hit_at_1, mean_average_precision, skipped_videos, top5_map
from src.core.model import ParamStore, forward
from src.core.schemas import AdaptationReport, BinarizeRule, MetricSummary, StrategyConfig
from src.interfaces.adaptation_strategy import AdaptationOutcome, AdaptationStrategy

logger = logging.getLogger(__name__)

STRATEGIES: Dict[str, Type[AdaptationStrategy]] = {
    adapter.kind: adapter
    for adapter in (HallucinationAdapter, EntropyAdapter, PseudoLabelAdapter, IdentityAdapter)
}

# CLI spellings of the strategy kinds
STRATEGY_ALIASES = {"halluc": "hallucination", "entropy": "entropy", "pseudo": "pseudo_label", "none": "none"}

_CLIP = 1e-12


def build_strategy(strategy: StrategyConfig) -> AdaptationStrategy:
    """Instantiates the adapter registered for `strategy.kind`."""
    try:
        adapter = STRATEGIES[strategy.kind]
    except KeyError:
        raise ContractError(f"No adapter registered for strategy '{strategy.kind}'") from None
    return adapter(strategy)


def clipped_bce(scores: np.ndarray, targets: np.ndarray) -> float:
    """Mean BCE with scores clipped away from 0 and 1; an evaluation number, not a training loss."""
    h = np.clip(np.asarray(scores, dtype=np.float64), _CLIP, 1.0 - _CLIP)
    y = np.asarray(targets, dtype=np.float64)
    return float(-np.mean(y * np.log(h) + (1.0 - y) * np.log(1.0 - h)))


def adapt_and_predict(params: ParamStore, video: FeatureSequence,
                      strategy: Union[StrategyConfig, AdaptationStrategy]) -> Tuple[np.ndarray, AdaptationReport]:
    """
    Adapts a private copy of `params` to one video and scores its clips.

    Labels are stripped before the adapter sees the video; they are only used afterwards
    to fill `AdaptationReport.l_pri`. `params` itself is never written. An adaptation that
    overflows is abandoned: the video keeps its unadapted scores and gets the flag `diverged`.

    Returns:
        Tuple[np.ndarray, AdaptationReport]: Post-adaptation scores and the report.
    """
    adapter = strategy if isinstance(strategy, AdaptationStrategy) else build_strategy(strategy)
    unlabeled = video.without_targets()

    start = time.perf_counter()
    pre = forward(params, unlabeled).h
    try:
        outcome = adapter.adapt(params, unlabeled)
    except NumericError as e:
        logger.warning(f"Adaptation of '{video.id}' with {adapter.kind} diverged, keeping the unadapted scores: {e}")
        outcome = AdaptationOutcome(params, [], ["diverged"])
    post = pre if outcome.params is params else forward(outcome.params, unlabeled).h
    millis = (time.perf_counter() - start) * 1000.0

    report = AdaptationReport(
        id=video.id,
        strategy=adapter.kind,
        losses=outcome.losses,
        pre=pre.tolist(),
        post=post.tolist(),
        l_pri=clipped_bce(post, video.targets) if video.has_targets else None,
        millis=millis,
        flags=outcome.flags,
    )
    logger.debug(
        f"Adapted '{video.id}' with {adapter.kind} in {millis:.1f} ms",
        extra={"video_id": video.id, "strategy": adapter.kind, "millis": millis},
    )
    return post, report


def evaluate_split(params: ParamStore, dataset: Dataset, strategy: StrategyConfig,
                   rule: BinarizeRule = BinarizeRule(), threads: int = 1) -> Tuple[MetricSummary, List[AdaptationReport]]:
    """
    Adapts to and scores every video of a labeled split, then computes the ranking metrics.

    Args:
        params (ParamStore): Trained base parameters (never modified).
        dataset (Dataset): Labeled evaluation split.
        strategy (StrategyConfig): Test-time strategy.
        rule (BinarizeRule): How graded targets become highlight flags.
        threads (int): Worker threads; results do not depend on it.

    Returns:
        Tuple[MetricSummary, List[AdaptationReport]]: Summary and per-video reports in dataset order.

    Raises:
        ContractError: If the split is empty or unlabeled.
    """
    if len(dataset) == 0:
        raise ContractError(f"Cannot evaluate the empty split '{dataset.split}'")
    if not dataset.is_labeled:
        raise ContractError(f"Split '{dataset.split}' has unlabeled videos")

    adapter = build_strategy(strategy)
    before = params.content_hash()

    def run(video: FeatureSequence) -> Tuple[np.ndarray, AdaptationReport]:
        return adapt_and_predict(params, video, adapter)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, dataset.videos))
    else:
        results = [run(video) for video in dataset.videos]

    if params.content_hash() != before:
        raise ContractError("Base parameters changed during evaluation")

    predictions = [(scores, binarize_targets(video.targets, rule)) for (scores, _), video in zip(results, dataset.videos)]
    reports = [report for _, report in results]
    skipped = skipped_videos(predictions)
    if skipped:
        logger.warning(f"{skipped} video(s) of '{dataset.split}' have no highlight clip and are excluded from mAP")

    summary = MetricSummary(
        split=dataset.split,
        strategy=strategy.kind,
        map=mean_average_precision(predictions),
        top5_map=top5_map(predictions),
        hit_at_1=hit_at_1(predictions),
        mean_l_pri=math.fsum(r.l_pri for r in reports) / len(reports),
        n_videos=len(dataset),
        n_skipped=skipped,
    )
    logger.info(
        f"{strategy.kind} on '{dataset.split}': mAP={summary.map:.4f} top5={summary.top5_map:.4f} "
        f"HIT@1={summary.hit_at_1:.4f} over {summary.n_videos} videos",
        extra=summary.model_dump(),
    )
    return summary, reports


def write_reports(reports: Sequence[AdaptationReport], path: Union[str, Path]) -> Path:
    """Writes one JSON object per line, in the given order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for report in reports:
            handle.write(json.dumps(report.model_dump(mode="json"), sort_keys=True) + "\n")
    return path
