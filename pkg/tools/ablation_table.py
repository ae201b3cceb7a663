#!/usr/bin/env python3
"""
Desk-scale loss-component ablation

Steps:
  1) Generate one synthetic dataset per seed (meel.experiments.DESK_SYNTH:
     200 train x 5 captions, 20 val, 50 test, noise 0.3).
  2) Train each variant on each seed with meel.experiments.DESK_TRAIN
     (B=32, K=256, 15 epochs).
  3) Print per-run rows and the median validation RSum per variant as JSON
     on stdout; optionally write the per-run table as CSV.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

THIS_DIR = Path(__file__).resolve().parent
DEFAULT_ROOT = THIS_DIR.parent
PROJECT_ROOT = Path(os.getenv("MEEL_PROJECT_ROOT", str(DEFAULT_ROOT)))
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from meel.config import TrainConfig  # noqa: E402
from meel.errors import MeelError  # noqa: E402
from meel.experiments import (  # noqa: E402
    ABLATION_VARIANTS,
    DESK_SEEDS,
    DESK_SYNTH,
    DESK_TRAIN,
    run_ablation,
    summarize_ablation,
)
from meel.utils.logs import setup_logging  # noqa: E402

log = logging.getLogger("ablation_table")


def main() -> int:
    parser = argparse.ArgumentParser(description="Run the loss-component ablation table")
    parser.add_argument("--seeds", type=int, nargs="+", default=list(DESK_SEEDS))
    parser.add_argument(
        "--variants", nargs="+", choices=list(ABLATION_VARIANTS), default=list(ABLATION_VARIANTS)
    )
    parser.add_argument("--epochs", type=int, default=None, help="Override the 15-epoch budget")
    parser.add_argument("--csv", default=None, help="Also write per-run rows to this CSV")
    args = parser.parse_args()

    setup_logging()
    train_cfg = DESK_TRAIN
    if args.epochs is not None:
        train_cfg = TrainConfig.model_validate({**DESK_TRAIN.model_dump(), "epochs": args.epochs})

    log.info("Running %d variants x %d seeds", len(args.variants), len(args.seeds))
    try:
        df = run_ablation(DESK_SYNTH, train_cfg, args.seeds, args.variants)
    except MeelError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return 1

    summary = summarize_ablation(df)
    if args.csv:
        df.to_csv(args.csv, index=False)
        log.info("Wrote %d rows to %s", len(df), args.csv)

    print(
        json.dumps(
            {"runs": df.to_dict(orient="records"), "summary": summary.to_dict(orient="records")},
            indent=2,
        )
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
