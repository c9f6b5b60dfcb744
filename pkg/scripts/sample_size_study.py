"""Ranking and FID stability at two evaluation sample sizes.

Trains shuffle 0 of the default configuration, then scores fresh draws of
each category at n=50 and n=200 over 20 seeded runs.
"""
import argparse
import json

from neuroscore.harness.config import ExperimentConfig, load_config
from neuroscore.harness.experiment import run_experiment, sample_size_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--sizes", type=int, nargs=2, default=(50, 200))
    ap.add_argument("--json", help="write the full study here")
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg.n_shuffles = 1
    _, models = run_experiment(cfg, return_models=True)
    study = sample_size_study(models["with_eeg"], models["classifier"], cfg,
                              sizes=args.sizes, n_runs=args.runs)
    small, large = sorted(args.sizes)
    print(f"ranking agreement n={small} vs n={large}: {study['ranking_agreement']}/{args.runs}")
    for lab, ratio in study["fid_std_ratio"].items():
        print(f"{lab}: FID std n={small} {study['fid_std'][small][lab]:.4g}  "
              f"n={large} {study['fid_std'][large][lab]:.4g}  ratio {ratio:.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(study, fh, indent=1)


if __name__ == "__main__":
    main()
