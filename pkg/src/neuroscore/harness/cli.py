"""Command-line entry point: ``neuroscore <subcommand> ...``.

Exit codes: 0 success, 2 config error, 3 data-format error, 4 training
divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..erp import neuroscore_error
from ..nn.checkpoint import FormatError, load_params, save_params
from ..nn.train import (TrainingError, TrainingSet, predict_synthetic_neuroscore,
                        shuffle_eeg_within_category, train_baseline, train_two_stage)
from ..synthgen import gen_dataset, gen_reference
from . import io
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .experiment import derive_seed, ranking_flag, run_experiment

EXIT_CONFIG, EXIT_FORMAT, EXIT_DIVERGED = 2, 3, 4
REGIME_NAMES = {"with-eeg": "with_eeg", "random-eeg": "random_eeg", "no-eeg": "no_eeg"}

log = logging.getLogger("neuroscore")


def _config(path) -> ExperimentConfig:
    return ExperimentConfig() if path is None else load_config(path)


def _training_set(data_dir, amplitude_mode: str = "peak"):
    grouped, reference, manifest = io.read_dataset(data_dir)
    return TrainingSet.from_samples(grouped, amplitude_mode), reference, manifest


def cmd_gen_data(args) -> int:
    cfg = _config(args.config)
    io.write_dataset(args.out, gen_dataset(cfg.gen), gen_reference(cfg.gen), cfg.gen)
    print(f"wrote dataset to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args.config)
    data, _, _ = _training_set(args.data, cfg.amplitude_mode)
    tcfg = replace(cfg.train, weight_init_seed=args.seed)
    regime = REGIME_NAMES[args.regime]
    stages = Path(args.stages_dir) if args.stages_dir else None
    if regime == "with_eeg":
        res = train_two_stage(data, tcfg, stages)
    elif regime == "random_eeg":
        res = train_two_stage(shuffle_eeg_within_category(data, derive_seed(args.seed, 7)),
                              tcfg, stages)
    else:
        res = train_baseline(data, tcfg, stages)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_params(res.params, out)
    print(json.dumps({"regime": regime, "seed": args.seed, "final_loss1": res.final_loss1,
                      "final_loss2": res.final_loss2, "checkpoint": str(out)}))
    return 0


def cmd_evaluate(args) -> int:
    data, _, manifest = _training_set(args.data)
    params = load_params(args.ckpt)
    pred = predict_synthetic_neuroscore(params, data.by_category())
    labels = data.labels
    truth = {lab: float(np.mean(data.amplitudes[data.categories == ci]))
             for ci, lab in enumerate(labels)}
    quality = manifest["gen"]["category_quality_means"]
    result = {
        "synthetic_neuroscore": pred,
        "neuroscore": truth,
        "error": neuroscore_error([pred[k] for k in labels], [truth[k] for k in labels]),
        "ranking": ranking_flag([pred[k] for k in labels], quality, lower_is_better=False),
    }
    print(json.dumps(result, indent=1))
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = replace(cfg, output_dir=str(out))
    (out / "config.ini").write_text(dump_config(cfg))
    grouped, reference = gen_dataset(cfg.gen), gen_reference(cfg.gen)
    io.write_dataset(out / "data", grouped, reference, cfg.gen)
    # train from the stored payload so the run is reproducible from disk alone
    data, ref_samples, _ = _training_set(out / "data", cfg.amplitude_mode)
    ref = np.stack([s.image.pixels for s in ref_samples])
    t0 = time.perf_counter()
    report = run_experiment(cfg, data, ref)
    log.info("experiment finished in %.1f s", time.perf_counter() - t0)
    io.write_report(out, report)
    print(io.table1_tsv(report), end="")
    print(io.table2_tsv(report), end="")
    return 0


def cmd_report(args) -> int:
    report = io.read_report(args.inp)
    print(io.table1_tsv(report))
    print(io.table2_tsv(report), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neuroscore", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one regime on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--regime", required=True, choices=sorted(REGIME_NAMES))
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path (NSK1)")
    t.add_argument("--config", help="config file supplying the [train] section")
    t.add_argument("--stages-dir", help="also write per-stage checkpoints here")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="synthetic-Neuroscore of a checkpoint on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="full shuffle protocol with report")
    x.add_argument("--config")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="print the tables of a finished experiment")
    r.add_argument("--in", dest="inp", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except TrainingError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
