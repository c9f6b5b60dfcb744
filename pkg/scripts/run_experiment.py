"""Run the shuffle protocol and write report files.

    python3 scripts/run_experiment.py --out results/default [--config cfg.ini]
"""
import argparse
import logging
import time

from neuroscore.harness import io
from neuroscore.harness.config import ExperimentConfig, load_config
from neuroscore.harness.experiment import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out", required=True)
    ap.add_argument("--shuffles", type=int, help="override n_shuffles")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.shuffles:
        cfg.n_shuffles = args.shuffles
    t0 = time.perf_counter()
    report = run_experiment(cfg)
    print(f"elapsed {time.perf_counter() - t0:.1f} s")
    io.write_report(args.out, report)
    print(io.table1_tsv(report))
    print(io.table2_tsv(report))


if __name__ == "__main__":
    main()
