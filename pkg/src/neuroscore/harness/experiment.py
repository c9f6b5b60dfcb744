"""Shuffle-repeated comparison of the three training regimes.

For every shuffle the pooled dataset is split into train and test parts
(stratified by category). Each enabled regime is trained on the train part
with the same weight-init seed and scored on the test part by the summed
absolute difference between predicted and measured per-category Neuroscores.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
from typing import Optional

import numpy as np

from .. import metrics
from ..erp import neuroscore, neuroscore_error
from ..nn.classifier import Classifier, train_classifier
from ..nn.model import ModelParams
from ..nn.train import (TrainingError, TrainingSet, predict_synthetic_neuroscore,
                        shuffle_eeg_within_category, train_baseline, train_two_stage)
from ..numkit import one_way_anova
from ..synthgen import gen_category, gen_dataset, gen_reference
from .config import ExperimentConfig, config_dict

log = logging.getLogger(__name__)

TIE_TOL = 1e-12
REFERENCE_LABEL = "real"
TABLE2_METRICS = ("inv_synthetic_neuroscore", "inv_is", "mmd2", "fid")


# ---------------------------------------------------------------- splitting

def derive_seed(master: int, *path: int) -> int:
    ss = np.random.SeedSequence([master, *path])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def shuffle_seeds(master: int, shuffle: int) -> dict[str, int]:
    """Split, weight-init and EEG-permutation seeds for one shuffle index."""
    return {name: derive_seed(master, 101, shuffle, k)
            for k, name in enumerate(("split", "init", "eeg"))}


def test_counts(sizes, test_fraction: float) -> np.ndarray:
    """Per-group test sizes by largest remainder; they sum to round(N * f)."""
    sizes = np.asarray(sizes, dtype=np.int64)
    total = int(round(sizes.sum() * test_fraction))
    exact = sizes * test_fraction
    counts = np.floor(exact).astype(np.int64)
    rem = exact - counts
    # stable order so equal remainders resolve by group index
    for g in np.argsort(-rem, kind="stable")[: total - counts.sum()]:
        counts[g] += 1
    return np.minimum(counts, sizes)


def stratified_split(categories, test_fraction: float, seed: int):
    """Disjoint sorted (train_idx, test_idx) with per-category proportions."""
    categories = np.asarray(categories)
    groups = [np.flatnonzero(categories == c) for c in np.unique(categories)]
    counts = test_counts([g.size for g in groups], test_fraction)
    rng = np.random.default_rng(seed)
    test = []
    for g, k in zip(groups, counts):
        test.append(rng.permutation(g)[:k])
    test_idx = np.sort(np.concatenate(test))
    train_idx = np.setdiff1d(np.arange(categories.size), test_idx)
    return train_idx, test_idx


# ---------------------------------------------------------------- rankings

def ranking_flag(scores, quality, lower_is_better: bool = True) -> str:
    """'match', 'mismatch' or 'tie' for one metric's per-category scores.

    ``quality`` is the ground-truth quality of each category (higher is
    better). A metric matches when ordering categories by the metric
    reproduces the quality ordering exactly.
    """
    s = np.asarray(scores, dtype=np.float64)
    q = np.asarray(quality, dtype=np.float64)
    if s.size < 2 or s.size != q.size:
        raise ValueError("need at least 2 categories with one score each")
    diffs = np.abs(s[:, None] - s[None, :])[np.triu_indices(s.size, 1)]
    if np.any(diffs <= TIE_TOL):
        return "tie"
    key = s if lower_is_better else -s
    return "match" if np.array_equal(np.argsort(key), np.argsort(-q)) else "mismatch"


# ---------------------------------------------------------------- report

@dataclass
class MetricReport:
    labels: tuple
    quality_means: tuple
    regimes: tuple
    errors: dict                # regime -> list of per-shuffle errors (successes only)
    failures: dict              # regime -> list of failed shuffle indices
    summary: dict               # regime -> {"mean", "std", "n"}
    anova: dict                 # "a~b" or "all" -> AnovaResult fields
    shuffles: list              # per-shuffle predictions and truths
    table2: dict                # label -> metric -> value
    ranking: dict               # metric -> match / mismatch / tie
    ranking_agreement: dict     # with_eeg synthetic-Neuroscore ranking over shuffles
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Plain JSON-compatible structure (tuples become lists)."""
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        d = dict(d)
        for k in ("labels", "quality_means", "regimes"):
            d[k] = tuple(d[k])
        return cls(**d)


def ranking_consistency(report: MetricReport) -> dict[str, str]:
    """Per-metric agreement of the per-category scores with true quality."""
    out = {}
    for metric in TABLE2_METRICS:
        scores = [report.table2[lab][metric] for lab in report.labels]
        if any(v is None for v in scores):
            continue
        out[metric] = ranking_flag(scores, report.quality_means, lower_is_better=True)
    return out


# ---------------------------------------------------------------- runs

def _truth(data: TrainingSet) -> dict[str, float]:
    return {lab: neuroscore(data.amplitudes[data.categories == ci])
            for ci, lab in enumerate(data.labels)}


def _train_regime(regime: str, train: TrainingSet, cfg: ExperimentConfig, eeg_seed: int):
    if regime == "with_eeg":
        return train_two_stage(train, cfg.train)
    if regime == "random_eeg":
        return train_two_stage(shuffle_eeg_within_category(train, eeg_seed), cfg.train)
    return train_baseline(train, cfg.train)


def run_shuffle(data: TrainingSet, cfg: ExperimentConfig, shuffle: int,
                keep_models: bool = False) -> dict:
    """Train every enabled regime on one seeded split and score it."""
    seeds = shuffle_seeds(cfg.gen.master_seed, shuffle)
    train_idx, test_idx = stratified_split(data.categories, cfg.test_fraction, seeds["split"])
    train, test = data.subset(train_idx), data.subset(test_idx)
    tcfg = _with_seed(cfg, seeds["init"])
    truth = _truth(test)
    out = {"shuffle": shuffle, "seeds": seeds, "n_train": int(train_idx.size),
           "n_test": int(test_idx.size), "truth": truth, "regimes": {},
           "test_idx": test_idx.tolist()}
    models = {}
    for regime in cfg.regimes:
        try:
            res = _train_regime(regime, train, tcfg, seeds["eeg"])
        except TrainingError as exc:
            log.warning("shuffle %d regime %s diverged: %s", shuffle, regime, exc)
            out["regimes"][regime] = {"failed": True, "reason": str(exc)}
            continue
        pred = predict_synthetic_neuroscore(res.params, test.by_category())
        err = neuroscore_error([pred[lab] for lab in data.labels],
                               [truth[lab] for lab in data.labels])
        out["regimes"][regime] = {"failed": False, "error": err, "pred": pred,
                                  "final_loss2": res.final_loss2}
        models[regime] = res.params
    if keep_models:
        out["models"] = models
    return out


def _with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, train=replace(cfg.train, weight_init_seed=seed))


def _pair_key(a: str, b: str) -> str:
    return f"{a}~{b}"


def _anova_entry(groups) -> Optional[dict]:
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        return None
    return asdict(one_way_anova(groups))


def aggregate(shuffles: list, regimes) -> tuple[dict, dict, dict, dict]:
    errors = {r: [] for r in regimes}
    failures = {r: [] for r in regimes}
    for s in shuffles:
        for r in regimes:
            entry = s["regimes"][r]
            if entry["failed"]:
                failures[r].append(s["shuffle"])
            else:
                errors[r].append(entry["error"])
    summary = {}
    for r in regimes:
        e = np.asarray(errors[r], dtype=np.float64)
        summary[r] = {"mean": float(e.mean()) if e.size else None,
                      "std": float(e.std(ddof=1)) if e.size > 1 else None,
                      "n": int(e.size), "failures": len(failures[r])}
    anova = {}
    for a, b in combinations(regimes, 2):
        res = _anova_entry([errors[a], errors[b]])
        if res is not None:
            anova[_pair_key(a, b)] = res
    if len(regimes) > 2:
        res = _anova_entry([errors[r] for r in regimes])
        if res is not None:
            anova["all"] = res
    return errors, failures, summary, anova


def _ranking_agreement(shuffles: list, labels, quality) -> dict:
    flags = []
    for s in shuffles:
        entry = s["regimes"].get("with_eeg")
        if entry is None or entry["failed"]:
            continue
        flags.append(ranking_flag([entry["pred"][lab] for lab in labels], quality,
                                  lower_is_better=False))
    return {"matches": sum(f == "match" for f in flags), "runs": len(flags), "flags": flags}


# ---------------------------------------------------------------- table 2

def table2_scores(regressor: Optional[ModelParams], clf: Optional[Classifier], test: TrainingSet,
                  reference_images: np.ndarray) -> dict:
    """Per-category scores where lower means better, plus measured Neuroscore.

    Scores whose model is missing (diverged during training) are None.
    """
    truth = _truth(test)
    by_cat = test.by_category()
    synth = predict_synthetic_neuroscore(regressor, by_cat) if regressor is not None else None
    ref_feats = clf.features(reference_images) if clf is not None else None
    out = {}
    for lab, images in by_cat.items():
        row = dict.fromkeys(("inv_is", "is", "mmd2", "fid", "synthetic_neuroscore",
                             "inv_synthetic_neuroscore"))
        row["neuroscore_truth"] = truth[lab]
        if clf is not None:
            feats = clf.features(images)
            is_val = metrics.inception_score(clf.predict_proba(images))
            row.update({
                "inv_is": 1.0 / is_val,
                "is": is_val,
                "mmd2": metrics.mmd2_unbiased(feats, ref_feats),
                "fid": metrics.fid(metrics.FeatureSet.from_features(feats),
                                   metrics.FeatureSet.from_features(ref_feats)),
            })
        if synth is not None:
            row["synthetic_neuroscore"] = synth[lab]
            row["inv_synthetic_neuroscore"] = 1.0 / synth[lab]
        out[lab] = row
    return out


def reference_set(cfg: ExperimentConfig, n: Optional[int] = None,
                  master_seed: Optional[int] = None) -> np.ndarray:
    return np.stack([s.image.pixels for s in gen_reference(cfg.gen, n, master_seed)])


def fit_classifier(train: TrainingSet, reference: np.ndarray, cfg: ExperimentConfig,
                   seed: int) -> Classifier:
    """Classifier over the categories plus the reference ("real") class."""
    k = len(train.labels)
    images = np.concatenate([train.images, reference])
    y = np.concatenate([train.categories, np.full(reference.shape[0], k)])
    tcfg = replace(cfg.train, weight_init_seed=seed)
    return train_classifier(images, y, train.labels + (REFERENCE_LABEL,), tcfg,
                            epochs=cfg.classifier_epochs)


# ---------------------------------------------------------------- driver

def _shuffle_job(args):
    data, cfg, k, keep = args
    return run_shuffle(data, cfg, k, keep_models=keep)


def build_dataset(cfg: ExperimentConfig):
    """Pooled training set and the reference images for one config."""
    grouped = gen_dataset(cfg.gen)
    data = TrainingSet.from_samples(grouped, cfg.amplitude_mode)
    return grouped, data, reference_set(cfg)


def run_experiment(cfg: ExperimentConfig, data: Optional[TrainingSet] = None,
                   reference: Optional[np.ndarray] = None, return_models: bool = False):
    """Full shuffle protocol; returns a MetricReport (and models if asked).

    ``models`` holds shuffle 0's trained regressors (by regime) and the
    classifier used for the conventional metrics.
    """
    if data is None or reference is None:
        _, data, reference = build_dataset(cfg)
    jobs = [(data, cfg, k, k == 0) for k in range(cfg.n_shuffles)]
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            shuffles = list(pool.map(_shuffle_job, jobs))
    else:
        shuffles = [_shuffle_job(j) for j in jobs]
    models = shuffles[0].pop("models")

    errors, failures, summary, anova = aggregate(shuffles, cfg.regimes)
    quality = cfg.gen.category_quality_means

    # conventional metrics on shuffle 0's test split, reference split the same way
    seeds = shuffles[0]["seeds"]
    test = data.subset(np.asarray(shuffles[0]["test_idx"], dtype=np.int64))
    train = data.subset(np.setdiff1d(np.arange(len(data)), shuffles[0]["test_idx"]))
    ref_train, ref_test = stratified_split(np.zeros(reference.shape[0]), cfg.test_fraction,
                                           derive_seed(seeds["split"], 1))
    notes = {}
    try:
        clf = fit_classifier(train, reference[ref_train], cfg, seeds["init"])
    except TrainingError as exc:
        log.warning("classifier diverged: %s", exc)
        clf, notes["classifier_failure"] = None, str(exc)
    table2 = table2_scores(models.get("with_eeg"), clf, test, reference[ref_test])

    for s in shuffles:
        s.pop("test_idx")
    report = MetricReport(
        labels=data.labels, quality_means=quality, regimes=cfg.regimes,
        errors=errors, failures=failures, summary=summary, anova=anova,
        shuffles=shuffles, table2=table2, ranking={},
        ranking_agreement=_ranking_agreement(shuffles, data.labels, quality),
        metadata={
            "config": config_dict(cfg),
            "split": "stratified over images; a fresh seeded split per shuffle",
            "table2_split": "shuffle 0 test split; reference images split the same way",
            "error": "sum over categories of |predicted - measured| Neuroscore on the test split",
            "n_samples": len(data),
            "n_reference": int(reference.shape[0]),
            **notes,
        },
    )
    report.ranking = ranking_consistency(report)
    if return_models:
        models["classifier"] = clf
        return report, models
    return report


# ---------------------------------------------------------------- sample size

def sample_size_study(regressor: ModelParams, clf: Classifier, cfg: ExperimentConfig,
                      sizes=(50, 200), n_runs: int = 20, seed_offset: int = 5000) -> dict:
    """Stability of synthetic-Neuroscore ranking and FID across fresh draws.

    Each run draws new images per category and a new reference set from an
    independent master seed. Smaller sizes use the leading images of the
    largest draw, so sizes are nested within a run.
    """
    sizes = tuple(sorted(sizes))
    n_max = sizes[-1]
    labels = cfg.gen.category_labels
    quality = cfg.gen.category_quality_means
    rankings = {n: [] for n in sizes}
    synth = {n: [] for n in sizes}
    fids = {n: {lab: [] for lab in labels} for n in sizes}
    for r in range(n_runs):
        master = derive_seed(cfg.gen.master_seed, seed_offset, r)
        cats = {lab: np.stack([s.image.pixels for s in
                               gen_category(cfg.gen, ci, n_max, mean, lab, master_seed=master)])
                for ci, (lab, mean) in enumerate(zip(labels, quality))}
        ref = reference_set(cfg, n_max, master)
        for n in sizes:
            pred = predict_synthetic_neuroscore(regressor, {lab: x[:n] for lab, x in cats.items()})
            synth[n].append([pred[lab] for lab in labels])
            rankings[n].append(tuple(np.argsort([-pred[lab] for lab in labels]).tolist()))
            ref_fs = metrics.FeatureSet.from_features(clf.features(ref[:n]))
            for lab in labels:
                fs = metrics.FeatureSet.from_features(clf.features(cats[lab][:n]))
                fids[n][lab].append(metrics.fid(fs, ref_fs))
    small, large = sizes[0], sizes[-1]
    agree = sum(a == b for a, b in zip(rankings[small], rankings[large]))
    fid_std = {n: {lab: float(np.std(fids[n][lab], ddof=1)) for lab in labels} for n in sizes}
    return {
        "sizes": list(sizes), "n_runs": n_runs,
        "ranking_agreement": agree,
        "truth_agreement": {n: sum(rk == tuple(np.argsort(-np.asarray(quality)).tolist())
                                   for rk in rankings[n]) for n in sizes},
        "synthetic_neuroscore": synth,
        "fid": fids, "fid_std": fid_std,
        "fid_std_ratio": {lab: fid_std[small][lab] / fid_std[large][lab] for lab in labels},
    }
