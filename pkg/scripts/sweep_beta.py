#!/usr/bin/env python3
"""Sweep the confidence threshold and report how many finetune samples survive.

Runs build-finetune once per beta value against the same config, then reads
the kept/dropped counts out of each run's summary.
"""

import argparse
import json
import os

from kgrerank.cli import load_config, main as cli_main, stage_digest


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", required=True)
    parser.add_argument(
        "--betas", default="0,0.05,0.5,1.0", help="comma-separated beta values"
    )
    args = parser.parse_args()

    betas = [float(b) for b in args.betas.split(",")]
    print(f"{'beta':>8s} {'queries':>8s} {'kept':>8s} {'dropped':>8s}")
    for beta in betas:
        rc = cli_main(
            ["build-finetune", "--config", args.config, "--set", f"ranker.beta={beta}"]
        )
        if rc != 0:
            raise SystemExit(rc)
        cfg = load_config(args.config, [f"ranker.beta={beta}"])
        digest = stage_digest(cfg, "embedder", "ranker", "instruct")
        summary_path = os.path.join(cfg.workdir, f"finetune-{digest}", "summary.json")
        summary = json.load(open(summary_path))
        print(
            f"{beta:8.3f} {summary['queries']:8d} {summary['kept']:8d} {summary['dropped']:8d}"
        )


if __name__ == "__main__":
    main()
