"""
The experiment pipelines behind the CLI subcommands.

Each pipeline reads a resolved RunConfig, writes its outputs into a run directory and
finishes that directory with `resolved_config.json` and `manifest.json`.
"""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

from src.core.adaptation import evaluate_split, write_reports
from src.core.avhf import read_avhf, write_avhf
from src.core.config import dump_run_config
from src.core.dataset import Dataset, dataset_signatures, split_halves
from src.core.exceptions import ConfigError
from src.core.metrics import fid_shift
from src.core.model import ParamStore, init_params, load_checkpoint, save_checkpoint
from src.core.schemas import EpochRecord, MetricSummary, RunConfig, RunManifest, StrategyConfig
from src.core.synthetic import SyntheticBenchmark, generate_synthetic
from src.core.training import train_joint, train_meta
from src.core.utils import calculate_file_hash

logger = logging.getLogger(__name__)

SPLIT_FILES = {"train": "train.avhf", "test_iid": "test_iid.avhf", "test_shifted": "test_shifted.avhf"}
METRIC_FIELDS = ["split", "strategy", "map", "top5_map", "hit_at_1", "mean_l_pri", "n_videos", "n_skipped"]
HISTORY_FIELDS = ["stage", "epoch", "l_pri", "l_aux", "l_joint"]


class RunDirectory:
    """
    Output directory of one run. Tracks every file written through it so the manifest can
    list them with their SHA-256.
    """

    def __init__(self, config: RunConfig, argv: Sequence[str] = ()) -> None:
        self.config = config
        self.argv = list(argv)
        self.root = Path(config.paths.out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: List[Path] = []

    def path(self, name: str) -> Path:
        return self.root / name

    def record(self, path: Path) -> Path:
        self.files.append(Path(path))
        return path

    def write_csv(self, name: str, rows: Sequence[Mapping[str, Any]], fieldnames: Sequence[str]) -> Path:
        path = self.path(name)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=list(fieldnames), extrasaction="ignore")
            writer.writeheader()
            writer.writerows(rows)
        return self.record(path)

    def finalize(self) -> RunManifest:
        self.record(dump_run_config(self.config, self.path("resolved_config.json")))
        manifest = RunManifest(
            artifact=self.config.app.name,
            version=self.config.app.version,
            command=self.config.command.name or "",
            argv=self.argv,
            seed=self.config.runtime.seed or 0,
            files={str(p.relative_to(self.root)): calculate_file_hash(p) for p in self.files},
        )
        self.path("manifest.json").write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"Run written to {self.root} ({len(self.files)} files)")
        return manifest


# --- Data resolution ---

def _synthetic(config: RunConfig) -> SyntheticBenchmark:
    bench = generate_synthetic(config.synth)
    return SyntheticBenchmark(*(split.as_float32() for split in bench))


def load_split(config: RunConfig, explicit: Optional[str], split: str) -> Dataset:
    """
    An explicit AVHF path wins, then `<data_dir>/<split>.avhf`, then the split generated
    in memory from the synth section (quantised exactly as gen-synth would write it).
    """
    if explicit:
        return read_avhf(explicit)
    if config.paths.data_dir:
        return read_avhf(Path(config.paths.data_dir) / SPLIT_FILES[split])
    logger.info(f"No data path configured; generating the synthetic '{split}' split in memory")
    return getattr(_synthetic(config), split)


def _check_dims(params: ParamStore, dataset: Dataset) -> None:
    if (params.config.d_v, params.config.d_a) != (dataset.d_v, dataset.d_a):
        raise ConfigError(
            f"Model expects d_v={params.config.d_v}, d_a={params.config.d_a} but split "
            f"'{dataset.split}' has d_v={dataset.d_v}, d_a={dataset.d_a}"
        )


def _load_params(path: Optional[str], what: str) -> ParamStore:
    if not path:
        raise ConfigError(f"{what} needs a checkpoint (paths.checkpoint / --checkpoint)")
    if not Path(path).exists():
        raise ConfigError(f"Checkpoint '{path}' does not exist")
    params, header = load_checkpoint(path)
    logger.info(f"Loaded {header.get('stage', params.stage)} checkpoint from {path}")
    return params


def summary_row(summary: MetricSummary, **extra: Any) -> Dict[str, Any]:
    return {**summary.model_dump(), **extra}


# --- Pipelines ---

def run_gen_synth(config: RunConfig, run: RunDirectory) -> SyntheticBenchmark:
    """Writes the three synthetic splits as AVHF files into the run directory."""
    bench = _synthetic(config)
    for split, filename in SPLIT_FILES.items():
        run.record(write_avhf(getattr(bench, split), run.path(filename)))
    return bench


def run_train(config: RunConfig, run: RunDirectory, stage: str) -> ParamStore:
    """
    Joint training from a fresh initialisation, or meta-auxiliary training from a joint
    checkpoint (`paths.init_checkpoint`).

    Raises:
        ConfigError: On an unknown stage, a missing joint checkpoint or mismatched dims.
    """
    train = load_split(config, config.paths.train_data, "train")

    if stage == "joint":
        params = init_params(config.model)
        _check_dims(params, train)
        trained, history = train_joint(params, train, config.train)
    elif stage == "meta":
        params = _load_params(config.paths.init_checkpoint, "Meta-auxiliary training")
        _check_dims(params, train)
        trained, history = train_meta(params, train, config.train)
    else:
        raise ConfigError(f"Unknown training stage '{stage}'")

    write_history(run, history)
    run.record(save_checkpoint(trained, run.path(f"{stage}.mtta"), {"seed": config.train.seed}))
    return trained


def write_history(run: RunDirectory, history: Sequence[EpochRecord]) -> Path:
    return run.write_csv("history.csv", [record.model_dump() for record in history], HISTORY_FIELDS)


def run_adapt_eval(config: RunConfig, run: RunDirectory, strategy: StrategyConfig) -> MetricSummary:
    """Adapts to and evaluates every video of the test split with one strategy."""
    params = _load_params(config.paths.checkpoint, "adapt-eval")
    test = load_split(config, config.paths.test_data, "test_shifted")
    _check_dims(params, test)

    summary, reports = evaluate_split(params, test, strategy, config.eval.binarize, config.runtime.threads)
    run.write_csv("metrics.csv", [summary_row(summary)], METRIC_FIELDS)
    run.record(write_reports(reports, run.path("adaptation.jsonl")))
    return summary


def run_shift_score(config: RunConfig, run: RunDirectory) -> List[Dict[str, Any]]:
    """
    FID between the two random halves of the training split, and between each half and
    the test split.
    """
    train = load_split(config, config.paths.train_data, "train")
    test = load_split(config, config.paths.test_data, "test_shifted")
    p1, p2 = split_halves(train, config.runtime.seed or 0)

    signatures = {ds.split: dataset_signatures(ds) for ds in (p1, p2, test)}
    rows = []
    for a, b in ((p1.split, p2.split), (p1.split, test.split), (p2.split, test.split)):
        score = fid_shift(signatures[a], signatures[b])
        rows.append({"split_a": a, "split_b": b, "fid": score.fid, "dims": score.dims})
        logger.info(f"FID({a}, {b}) = {score.fid:.6f}", extra={"split_a": a, "split_b": b, "fid": score.fid})

    run.write_csv("shift_score.csv", rows, ["split_a", "split_b", "fid", "dims"])
    return rows
