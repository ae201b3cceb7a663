#!/usr/bin/env python3
"""
Memory-size sweep

Trains with the triplet and memory InfoNCE losses (center memory off) for
queue sizes K = multiple x B and prints validation/test RSum per K as JSON.
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
    DESK_SYNTH,
    DESK_TRAIN,
    run_memory_sweep,
    summarize_memory_sweep,
)
from meel.utils.logs import setup_logging  # noqa: E402

log = logging.getLogger("memory_size_sweep")


def main() -> int:
    parser = argparse.ArgumentParser(description="Sweep the cross-modal queue size")
    parser.add_argument("--multiples", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--epochs", type=int, default=15)
    args = parser.parse_args()

    setup_logging()
    try:
        base = TrainConfig.model_validate(
            {
                **DESK_TRAIN.model_dump(),
                "batch_size": args.batch_size,
                "queue_size": args.batch_size,
                "epochs": args.epochs,
            }
        )
        df = run_memory_sweep(DESK_SYNTH, base, args.multiples, args.seeds)
    except (MeelError, ValueError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return 2

    summary = summarize_memory_sweep(df)
    log.info("Swept %d queue sizes over %d seeds", len(args.multiples), len(args.seeds))
    print(
        json.dumps(
            {"runs": df.to_dict(orient="records"), "summary": summary.to_dict(orient="records")},
            indent=2,
        )
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
