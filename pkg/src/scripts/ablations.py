"""
Multi-seed ablation sweeps on the synthetic benchmark.

Every study repeats its experiment for `ablation.seeds` consecutive seeds starting at the
run seed (new data, new initialisation and new batch order per seed) and reports the mean
and standard deviation of each row, plus the raw per-seed numbers.
"""

import logging
import math
import sys
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from src.core.adaptation import evaluate_split
from src.core.dataset import Dataset, corrupt_gaussian, drop_audio, drop_train_fraction
from src.core.exceptions import ConfigError
from src.core.model import ParamStore, init_params
from src.core.pipeline import RunDirectory
from src.core.schemas import MetricSummary, RunConfig, StrategyConfig, SynthConfig
from src.core.synthetic import SyntheticBenchmark, generate_synthetic
from src.core.training import train_joint, train_meta

logger = logging.getLogger(__name__)

STUDIES = ("updates", "noise", "drop-audio", "drop-train", "cross-dataset", "meta", "strategies")
ROW_FIELDS = [
    "study", "setting", "model", "strategy", "n_seeds",
    "map_mean", "map_std", "top5_map_mean", "top5_map_std", "hit_at_1_mean", "hit_at_1_std",
    "mean_l_pri", "millis_mean",
]
SEED_FIELDS = ["study", "setting", "model", "strategy", "seed", "map", "top5_map", "hit_at_1", "mean_l_pri", "millis"]


@dataclass
class Cell:
    """One (setting, model, strategy) row collecting a result per seed."""

    setting: str
    model: str
    strategy: str
    seeds: List[int] = field(default_factory=list)
    summaries: List[MetricSummary] = field(default_factory=list)
    millis: List[float] = field(default_factory=list)


class Sweep:
    def __init__(self, config: RunConfig, study: str) -> None:
        self.config = config
        self.study = study
        self.cells: Dict[Tuple[str, str, str], Cell] = {}

    def strategy(self, kind: str, **update) -> StrategyConfig:
        return StrategyConfig.model_validate({**self.config.adapt.model_dump(), "kind": kind, **update})

    def evaluate(self, seed: int, setting: str, model: str, params: ParamStore, dataset: Dataset,
                 strategy: StrategyConfig) -> MetricSummary:
        summary, reports = evaluate_split(params, dataset, strategy, self.config.eval.binarize, self.config.runtime.threads)
        key = (setting, model, strategy.kind)
        cell = self.cells.setdefault(key, Cell(*key))
        cell.seeds.append(seed)
        cell.summaries.append(summary)
        cell.millis.append(math.fsum(r.millis for r in reports) / len(reports))
        return summary

    def rows(self) -> Tuple[List[dict], List[dict]]:
        rows, per_seed = [], []
        for cell in self.cells.values():
            stats = {}
            for metric in ("map", "top5_map", "hit_at_1", "mean_l_pri"):
                values = np.array([getattr(s, metric) for s in cell.summaries])
                stats[metric] = (float(values.mean()), float(values.std(ddof=1)) if values.size > 1 else 0.0)
            rows.append({
                "study": self.study, "setting": cell.setting, "model": cell.model, "strategy": cell.strategy,
                "n_seeds": len(cell.seeds),
                "map_mean": stats["map"][0], "map_std": stats["map"][1],
                "top5_map_mean": stats["top5_map"][0], "top5_map_std": stats["top5_map"][1],
                "hit_at_1_mean": stats["hit_at_1"][0], "hit_at_1_std": stats["hit_at_1"][1],
                "mean_l_pri": stats["mean_l_pri"][0],
                "millis_mean": float(np.mean(cell.millis)),
            })
            for seed, summary, millis in zip(cell.seeds, cell.summaries, cell.millis):
                per_seed.append({
                    "study": self.study, "setting": cell.setting, "model": cell.model, "strategy": cell.strategy,
                    "seed": seed, "map": summary.map, "top5_map": summary.top5_map, "hit_at_1": summary.hit_at_1,
                    "mean_l_pri": summary.mean_l_pri, "millis": millis,
                })
        return rows, per_seed


def seeded_config(config: RunConfig, seed: int) -> RunConfig:
    """Copy of `config` whose data, initialisation and training all use `seed`."""
    seeded = config.model_copy(deep=True)
    seeded.synth.seed = seeded.model.seed = seeded.train.seed = seed
    return seeded


def _benchmark(synth: SynthConfig) -> SyntheticBenchmark:
    return SyntheticBenchmark(*(split.as_float32() for split in generate_synthetic(synth)))


def _joint(config: RunConfig, train: Dataset) -> ParamStore:
    params, _ = train_joint(init_params(config.model), train, config.train)
    return params


def _meta(config: RunConfig, joint: ParamStore, train: Dataset, inner_steps: Optional[int] = None) -> ParamStore:
    cfg = config.train if inner_steps is None else config.train.model_copy(update={"inner_steps": inner_steps})
    params, _ = train_meta(joint, train, cfg)
    return params


# --- Studies ---

def _study_updates(sweep: Sweep, cfg: RunConfig, seed: int, bench: SyntheticBenchmark) -> None:
    joint = _joint(cfg, bench.train)
    for k in sweep.config.ablation.updates:
        meta = _meta(cfg, joint, bench.train, inner_steps=k)
        sweep.evaluate(seed, f"K={k}", "meta", meta, bench.test_shifted, sweep.strategy("hallucination", steps=k))


def _study_noise(sweep: Sweep, cfg: RunConfig, seed: int, bench: SyntheticBenchmark) -> None:
    joint = _joint(cfg, bench.train)
    meta = _meta(cfg, joint, bench.train)
    for sigma in [0.0, *sweep.config.ablation.noise_sigmas]:
        test = corrupt_gaussian(bench.test_shifted, sigma, seed)
        setting = f"sigma={sigma:g}"
        sweep.evaluate(seed, setting, "joint", joint, test, sweep.strategy("none"))
        sweep.evaluate(seed, setting, "meta", meta, test, sweep.strategy("hallucination"))


def _study_drop_audio(sweep: Sweep, cfg: RunConfig, seed: int, bench: SyntheticBenchmark) -> None:
    joint = _joint(cfg, bench.train)
    meta = _meta(cfg, joint, bench.train)
    fraction = sweep.config.ablation.drop_audio_fraction
    test = drop_audio(bench.test_shifted, fraction, seed)
    setting = f"drop_audio={fraction:g}"
    sweep.evaluate(seed, setting, "joint", joint, test, sweep.strategy("none"))
    sweep.evaluate(seed, setting, "meta", meta, test, sweep.strategy("hallucination"))


def _study_drop_train(sweep: Sweep, cfg: RunConfig, seed: int, bench: SyntheticBenchmark) -> None:
    joint = _joint(cfg, bench.train)
    for fraction in sweep.config.ablation.drop_train_fractions:
        meta = _meta(cfg, joint, drop_train_fraction(bench.train, fraction, seed))
        sweep.evaluate(seed, f"drop_train={fraction:g}", "meta", meta, bench.test_shifted, sweep.strategy("hallucination"))


def family_b_config(cfg: RunConfig) -> SynthConfig:
    """Synth config of the target family: family A with the `ablation.family_b` overrides."""
    try:
        family_b = SynthConfig.model_validate({**cfg.synth.model_dump(), **cfg.ablation.family_b})
    except ValidationError as e:
        raise ConfigError(f"Invalid ablation.family_b overrides: {e.errors(include_url=False)}") from e
    if (family_b.d_v, family_b.d_a) != (cfg.synth.d_v, cfg.synth.d_a):
        raise ConfigError("ablation.family_b must keep the feature dims of the training family")
    return family_b


def _study_cross_dataset(sweep: Sweep, cfg: RunConfig, seed: int, bench: SyntheticBenchmark) -> None:
    target = _benchmark(family_b_config(cfg)).test_iid
    joint = _joint(cfg, bench.train)
    meta = _meta(cfg, joint, bench.train)
    sweep.evaluate(seed, "A->B", "joint", joint, target, sweep.strategy("none"))
    sweep.evaluate(seed, "A->B", "joint", joint, target, sweep.strategy("hallucination"))
    sweep.evaluate(seed, "A->B", "meta", meta, target, sweep.strategy("hallucination"))


def _study_meta(sweep: Sweep, cfg: RunConfig, seed: int, bench: SyntheticBenchmark) -> None:
    joint = _joint(cfg, bench.train)
    meta = _meta(cfg, joint, bench.train)
    sweep.evaluate(seed, "shifted", "joint", joint, bench.test_shifted, sweep.strategy("none"))
    sweep.evaluate(seed, "shifted", "joint", joint, bench.test_shifted, sweep.strategy("hallucination"))
    sweep.evaluate(seed, "shifted", "meta", meta, bench.test_shifted, sweep.strategy("hallucination"))


def _study_strategies(sweep: Sweep, cfg: RunConfig, seed: int, bench: SyntheticBenchmark) -> None:
    meta = _meta(cfg, _joint(cfg, bench.train), bench.train)
    for kind in ("none", "pseudo_label", "entropy", "hallucination"):
        sweep.evaluate(seed, "shifted", "meta", meta, bench.test_shifted, sweep.strategy(kind))


_RUNNERS: Dict[str, Callable[[Sweep, RunConfig, int, SyntheticBenchmark], None]] = {
    "updates": _study_updates,
    "noise": _study_noise,
    "drop-audio": _study_drop_audio,
    "drop-train": _study_drop_train,
    "cross-dataset": _study_cross_dataset,
    "meta": _study_meta,
    "strategies": _study_strategies,
}


def ordering_counts(sweep: Sweep) -> Dict[str, int]:
    """Per-seed counts of Joint < Joint+TTA, Joint+TTA < Meta+TTA and both (meta study)."""
    joint = sweep.cells[("shifted", "joint", "none")].summaries
    joint_tta = sweep.cells[("shifted", "joint", "hallucination")].summaries
    meta_tta = sweep.cells[("shifted", "meta", "hallucination")].summaries
    counts = defaultdict(int)
    for j, jt, mt in zip(joint, joint_tta, meta_tta):
        counts["joint<joint_tta"] += int(j.map < jt.map)
        counts["joint_tta<meta_tta"] += int(jt.map < mt.map)
        counts["both"] += int(j.map < jt.map < mt.map)
    counts["n_seeds"] = len(joint)
    return dict(counts)


def run_ablation(config: RunConfig, run: RunDirectory, study: str) -> List[dict]:
    """
    Runs one study over `ablation.seeds` seeds and writes `ablation_<study>.csv` (one row
    per setting) and `ablation_<study>_seeds.csv` (one row per setting and seed).

    Raises:
        ConfigError: On an unknown study.
    """
    if study not in _RUNNERS:
        raise ConfigError(f"Unknown study '{study}'; choose one of {', '.join(STUDIES)}")

    logger.info(f"Starting '{study}' ablation over {config.ablation.seeds} seed(s)...")
    sweep = Sweep(config, study)
    base_seed = config.runtime.seed or 0

    # 1. One full experiment per seed
    for offset in range(config.ablation.seeds):
        seed = base_seed + offset
        cfg = seeded_config(config, seed)
        _RUNNERS[study](sweep, cfg, seed, _benchmark(cfg.synth))
        logger.info(f"Seed {seed} done ({offset + 1}/{config.ablation.seeds})")

    # 2. Aggregate
    rows, per_seed = sweep.rows()
    name = f"ablation_{study.replace('-', '_')}"
    run.write_csv(f"{name}.csv", rows, ROW_FIELDS)
    run.write_csv(f"{name}_seeds.csv", per_seed, SEED_FIELDS)

    if study == "meta":
        counts = ordering_counts(sweep)
        run.write_csv("ablation_meta_ordering.csv", [counts], list(counts))
        logger.info(f"Ordering Joint < Joint+TTA < Meta+TTA held in {counts['both']}/{counts['n_seeds']} seeds")

    for row in rows:
        logger.info(
            f"[{row['setting']} | {row['model']} + {row['strategy']}] "
            f"mAP {row['map_mean']:.4f} ± {row['map_std']:.4f}",
            extra=row,
        )
    return rows


if __name__ == "__main__":
    from src.main import main

    sys.exit(main(["ablate", *sys.argv[1:]]))
