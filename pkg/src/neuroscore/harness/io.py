"""On-disk formats: dataset directories and experiment reports.

A dataset directory holds ``manifest.json`` (counts, dims, sampling rate,
seeds) and ``payload.nsk`` (NSK1 tensors, one row per sample, categories in
manifest order with the reference set last). Reports are ``report.json``
plus tab-separated ``table1.tsv`` and ``table2.tsv``.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..erp import SourceTrial
from ..nn.checkpoint import FormatError, read_nsk, write_nsk
from ..synthgen import EPOCH_START_MS, GenConfig, Sample, StimulusImage
from .experiment import REFERENCE_LABEL, MetricReport

MANIFEST = "manifest.json"
PAYLOAD = "payload.nsk"
REPORT = "report.json"
DATASET_FORMAT = "neuroscore-dataset/1"
PAYLOAD_KEYS = ("images", "sources", "qualities", "categories", "seeds", "true_amplitudes")


def write_dataset(path, grouped: dict, reference: list, gen: GenConfig) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    groups = list(grouped.items()) + [(REFERENCE_LABEL, reference)]
    samples = [s for _, ss in groups for s in ss]
    if not samples:
        raise ValueError("dataset is empty")
    cats = np.concatenate([np.full(len(ss), ci) for ci, (_, ss) in enumerate(groups)])
    tensors = {
        "images": np.stack([s.image.pixels for s in samples]),
        "sources": np.stack([s.trial.samples for s in samples]),
        "qualities": np.array([s.image.quality for s in samples]),
        "categories": cats.astype(np.float64),
        "seeds": np.array([s.image.seed for s in samples], dtype=np.float64),
        "true_amplitudes": np.array([np.nan if s.trial.true_amplitude is None
                                     else s.trial.true_amplitude for s in samples]),
    }
    first = samples[0].trial
    manifest = {
        "format": DATASET_FORMAT,
        "labels": [lab for lab, _ in groups],
        "counts": {lab: len(ss) for lab, ss in groups},
        "n_samples": len(samples),
        "image_size": int(tensors["images"].shape[1]),
        "source_samples": int(tensors["sources"].shape[1]),
        "fs_hz": first.fs_hz,
        "epoch_start_ms": first.epoch_start_ms,
        "master_seed": gen.master_seed,
        "gen": asdict(gen),
    }
    write_nsk(path / PAYLOAD, tensors)
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _manifest_error(msg: str) -> FormatError:
    # manifest problems have no byte position inside the payload
    return FormatError(f"{MANIFEST}: {msg}", 0)


def read_manifest(path) -> dict:
    try:
        manifest = json.loads((Path(path) / MANIFEST).read_text())
    except OSError as exc:
        raise _manifest_error(f"cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{MANIFEST}: invalid JSON ({exc.msg})", exc.pos) from exc
    if not isinstance(manifest, dict) or manifest.get("format") != DATASET_FORMAT:
        raise _manifest_error("unrecognised format tag")
    return manifest


def read_dataset(path):
    """Return (grouped samples, reference samples, manifest)."""
    path = Path(path)
    manifest = read_manifest(path)
    try:
        t = read_nsk(path / PAYLOAD)
    except OSError as exc:
        raise FormatError(f"{PAYLOAD}: cannot read ({exc})", 0) from exc
    missing = [k for k in PAYLOAD_KEYS if k not in t]
    if missing:
        raise FormatError(f"{PAYLOAD}: missing tensors {missing}", 0)
    n = t["images"].shape[0]
    if any(t[k].shape[0] != n for k in PAYLOAD_KEYS):
        raise FormatError(f"{PAYLOAD}: tensors disagree on sample count", 0)
    labels = manifest["labels"]
    cats = t["categories"].astype(np.int64)
    counts = {lab: int(np.sum(cats == ci)) for ci, lab in enumerate(labels)}
    if n != manifest["n_samples"] or counts != manifest["counts"]:
        raise _manifest_error(f"sample counts {counts} do not match payload")
    if t["images"].shape[1:] != (manifest["image_size"],) * 2:
        raise _manifest_error("image_size does not match payload")

    grouped = {lab: [] for lab in labels}
    for i in range(n):
        lab = labels[cats[i]]
        amp = float(t["true_amplitudes"][i])
        seed = int(t["seeds"][i])
        grouped[lab].append(Sample(
            StimulusImage(t["images"][i], float(t["qualities"][i]), lab, seed),
            SourceTrial(t["sources"][i], manifest["fs_hz"], manifest["epoch_start_ms"],
                        None if np.isnan(amp) else amp)))
    reference = grouped.pop(REFERENCE_LABEL, [])
    return grouped, reference, manifest


def payload_bytes(path) -> bytes:
    return (Path(path) / PAYLOAD).read_bytes()


# ---------------------------------------------------------------- reports

def report_to_json(report: MetricReport) -> str:
    return json.dumps(report.to_dict(), indent=1, sort_keys=True)


def write_report(path, report: MetricReport) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / REPORT).write_text(report_to_json(report) + "\n")
    (path / "table1.tsv").write_text(table1_tsv(report))
    (path / "table2.tsv").write_text(table2_tsv(report))


def read_report(path) -> MetricReport:
    p = Path(path)
    if p.is_dir():
        p = p / REPORT
    try:
        d = json.loads(p.read_text())
    except OSError as exc:
        raise FormatError(f"{p.name}: cannot read ({exc})", 0) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p.name}: invalid JSON ({exc.msg})", exc.pos) from exc
    try:
        return MetricReport.from_dict(d)
    except TypeError as exc:
        raise FormatError(f"{p.name}: unexpected report fields ({exc})", 0) from exc


def _num(v) -> str:
    return "NA" if v is None else f"{v:.6g}"


def table1_tsv(report: MetricReport) -> str:
    rows = ["regime\tmean_error\tstd_error\tn_runs\tfailures"]
    for r in report.regimes:
        s = report.summary[r]
        rows.append(f"{r}\t{_num(s['mean'])}\t{_num(s['std'])}\t{s['n']}\t{s['failures']}")
    rows.append("")
    rows.append("comparison\tF\tp_value\tdf_between\tdf_within")
    for key, a in report.anova.items():
        rows.append(f"{key}\t{_num(a['f_stat'])}\t{a['p_value']:.4g}\t{a['df_between']}\t"
                    f"{a['df_within']}")
    return "\n".join(rows) + "\n"


def table2_tsv(report: MetricReport) -> str:
    cols = ("inv_is", "mmd2", "fid", "inv_synthetic_neuroscore", "synthetic_neuroscore",
            "neuroscore_truth")
    rows = ["category\tquality_mean\t" + "\t".join(cols)]
    for lab, q in zip(report.labels, report.quality_means):
        vals = "\t".join(_num(report.table2[lab][c]) for c in cols)
        rows.append(f"{lab}\t{q:g}\t{vals}")
    rows.append("")
    rows.append("metric\tranking_vs_quality")
    rows.extend(f"{m}\t{flag}" for m, flag in report.ranking.items())
    ra = report.ranking_agreement
    rows.append(f"synthetic_neuroscore_over_shuffles\t{ra['matches']}/{ra['runs']}")
    return "\n".join(rows) + "\n"
