import argparse
import logging
from pathlib import Path

from dotenv import load_dotenv

from src.core.avhf import write_avhf
from src.core.config import load_config, resolve_run_config
from src.core.synthetic import generate_synthetic

# --- Configuration ---
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(levelname)s] Generator: %(message)s",
)
logger = logging.getLogger(__name__)

# Load environment variables (MTTA_SEED)
load_dotenv()


def main() -> None:
    parser = argparse.ArgumentParser(description="Write the synthetic audio-visual benchmark as AVHF files.")
    parser.add_argument("--config", default="config.yaml")
    parser.add_argument("--out", default="data/synthetic", help="Directory for the .avhf files")
    parser.add_argument("--seed", type=int)
    args = parser.parse_args()

    logger.info("--- Starting Synthetic Benchmark Generation ---")

    # 1. Resolve the synth section (seed precedence as in the CLI)
    config = resolve_run_config(load_config(args.config), seed=args.seed)

    # 2. Generate and quantise to the on-disk precision
    bench = generate_synthetic(config.synth)

    # 3. Write one file per split
    out_dir = Path(args.out)
    for name, dataset in bench._asdict().items():
        path = write_avhf(dataset.as_float32(), out_dir / f"{name}.avhf")
        logger.info(f" -> {name}: {len(dataset)} videos written to {path}")

    logger.info(f"--- Generation Complete (seed {config.synth.seed}) ---")
    logger.info(f"Run 'python -m src.main train --stage joint --data-dir {out_dir}' to train on these splits.")


if __name__ == "__main__":
    main()
