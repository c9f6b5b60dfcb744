import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neuroscore.harness import io
from neuroscore.harness.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_FORMAT, main
from neuroscore.harness.config import (ConfigError, ExperimentConfig, dump_config,
                                       parse_config)
from neuroscore.harness.experiment import (MetricReport, ranking_consistency, ranking_flag,
                                           run_experiment, shuffle_seeds, stratified_split,
                                           test_counts as split_counts)
from neuroscore.nn.checkpoint import FormatError, encode
from neuroscore.nn.train import TrainConfig, TrainingSet
from neuroscore.synthgen import GenConfig, gen_dataset, gen_reference

TINY_INI = """
[experiment]
n_shuffles = 2
classifier_epochs = 2

[gen]
n_per_category = 20
image_size = 16

[train]
stage1_epochs = 2
stage2_epochs = 2
baseline_epochs = 2
batch_size = 8
conv1 = 2
conv2 = 3
fc1 = 8
fc2 = 6
"""


@pytest.fixture(scope="module")
def tiny_cfg():
    return parse_config(TINY_INI)


@pytest.fixture(scope="module")
def tiny_report(tiny_cfg):
    return run_experiment(tiny_cfg)


# ---- config

def test_config_defaults():
    cfg = ExperimentConfig()
    assert cfg.n_shuffles == 20 and cfg.test_fraction == 0.2
    assert cfg.regimes == ("with_eeg", "random_eeg", "no_eeg")


def test_config_roundtrip(tiny_cfg):
    again = parse_config(dump_config(tiny_cfg))
    assert again == tiny_cfg


def test_config_parses_tuples():
    cfg = parse_config("[gen]\ncategory_quality_means = 0.2, 0.5, 0.7\n"
                       "[experiment]\nregimes = no_eeg\n")
    assert cfg.gen.category_quality_means == (0.2, 0.5, 0.7)
    assert cfg.regimes == ("no_eeg",)


@pytest.mark.parametrize("text", [
    "[experiment]\nn_shuffles = 0\n",
    "[experiment]\ntest_fraction = 1.0\n",
    "[experiment]\nregimes = with_eeg, telepathy\n",
    "[gen]\nn_per_category = 3\n",
    "[train]\nmomentum = 2\n",
    "[train]\nsurprise = 1\n",
    "[unknown]\nx = 1\n",
    "[train]\nstage1_epochs = many\n",
    "not an ini file",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# ---- splits

def test_split_counts_largest_remainder():
    assert split_counts([200, 200, 200], 0.2).tolist() == [40, 40, 40]
    c = split_counts([7, 7, 7], 0.25)
    assert c.sum() == round(21 * 0.25) and c.tolist() == [2, 2, 1]


@given(st.lists(st.integers(1, 60), min_size=1, max_size=5), st.floats(0.05, 0.95),
       st.integers(0, 2**32 - 1))
def test_split_hygiene(sizes, frac, seed):
    cats = np.repeat(np.arange(len(sizes)), sizes)
    train, test = stratified_split(cats, frac, seed)
    assert not set(train) & set(test)
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(cats.size))
    assert abs(test.size - frac * cats.size) <= 1
    for c, n in enumerate(sizes):
        assert abs(np.sum(cats[test] == c) - frac * n) < 1 + 1e-9


def test_shuffle_seeds_distinct_and_stable():
    a = [tuple(shuffle_seeds(0, k).values()) for k in range(20)]
    assert len(set(a)) == 20 and a == [tuple(shuffle_seeds(0, k).values()) for k in range(20)]


# ---- rankings

def test_ranking_flags():
    q = (0.35, 0.55, 0.8)
    assert ranking_flag([3.0, 2.0, 1.0], q) == "match"
    assert ranking_flag([1.0, 2.0, 3.0], q) == "mismatch"
    assert ranking_flag([1.0, 1.0, 1.0], q) == "tie"
    assert ranking_flag([2.0, 1.0, 1.0 + 1e-13], q) == "tie"
    assert ranking_flag([0.1, 0.2, 0.3], q, lower_is_better=False) == "match"
    with pytest.raises(ValueError):
        ranking_flag([1.0], [0.5])


def test_ranking_consistency_uses_table(tiny_report):
    rep = MetricReport.from_dict(tiny_report.to_dict())
    for lab, v in zip(rep.labels, (3.0, 2.0, 1.0)):
        rep.table2[lab]["fid"] = v
    assert ranking_consistency(rep)["fid"] == "match"


# ---- experiment

def test_report_structure(tiny_report, tiny_cfg):
    r = tiny_report
    for regime in tiny_cfg.regimes:
        assert len(r.errors[regime]) + len(r.failures[regime]) == tiny_cfg.n_shuffles
        assert all(e >= 0 for e in r.errors[regime])
    assert set(r.anova) == {"with_eeg~random_eeg", "with_eeg~no_eeg", "random_eeg~no_eeg", "all"}
    assert set(r.ranking) == {"inv_synthetic_neuroscore", "inv_is", "mmd2", "fid"}
    for lab in r.labels:
        row = r.table2[lab]
        assert row["inv_is"] == pytest.approx(1 / row["is"])
        assert row["inv_synthetic_neuroscore"] == pytest.approx(1 / row["synthetic_neuroscore"])
    s0 = r.shuffles[0]
    assert s0["n_train"] + s0["n_test"] == 60


def test_error_is_recomputable_from_report(tiny_report):
    for s in tiny_report.shuffles:
        for entry in s["regimes"].values():
            pred = [entry["pred"][lab] for lab in tiny_report.labels]
            truth = [s["truth"][lab] for lab in tiny_report.labels]
            assert entry["error"] == pytest.approx(sum(abs(p - t) for p, t in zip(pred, truth)))


def test_single_regime_single_shuffle_has_no_anova(tiny_cfg):
    cfg = replace(tiny_cfg, n_shuffles=1, regimes=("no_eeg",))
    r = run_experiment(cfg)
    assert len(r.errors["no_eeg"]) == 1 and r.anova == {}
    assert r.summary["no_eeg"]["std"] is None


def test_divergence_is_recorded_not_fatal(tiny_cfg):
    cfg = replace(tiny_cfg, n_shuffles=2, regimes=("with_eeg", "no_eeg"),
                  train=replace(tiny_cfg.train, learning_rate=1e6, stage2_learning_rate=1e-4))
    r = run_experiment(cfg)
    for regime in cfg.regimes:
        assert r.failures[regime] == [0, 1] and r.summary[regime]["n"] == 0
        assert r.summary[regime]["failures"] == 2 and r.summary[regime]["mean"] is None
    assert r.anova == {} and r.ranking == {}
    assert "classifier_failure" in r.metadata
    assert all(r.table2[lab]["fid"] is None for lab in r.labels)


def test_regimes_share_split_and_init_seed(tiny_cfg):
    from neuroscore.harness import experiment as E
    seen = []
    orig = E._train_regime

    def spy(regime, train, cfg, eeg_seed):
        seen.append((regime, train.images.tobytes(), cfg.train.weight_init_seed))
        return orig(regime, train, cfg, eeg_seed)

    data = TrainingSet.from_samples(gen_dataset(tiny_cfg.gen))
    E._train_regime = spy
    try:
        E.run_shuffle(data, tiny_cfg, 0)
    finally:
        E._train_regime = orig
    assert len({(img, seed) for _, img, seed in seen}) == 1
    assert [r for r, _, _ in seen] == list(tiny_cfg.regimes)


# ---- dataset and report files

def test_dataset_roundtrip(tmp_path, tiny_cfg):
    grouped, ref = gen_dataset(tiny_cfg.gen), gen_reference(tiny_cfg.gen)
    io.write_dataset(tmp_path, grouped, ref, tiny_cfg.gen)
    g2, r2, manifest = io.read_dataset(tmp_path)
    assert list(g2) == list(grouped) and len(r2) == len(ref)
    for lab in grouped:
        for a, b in zip(grouped[lab], g2[lab]):
            assert a.image.pixels.tobytes() == b.image.pixels.tobytes()
            assert a.trial.samples.tobytes() == b.trial.samples.tobytes()
            assert (a.image.seed, a.image.quality, a.trial.true_amplitude) == \
                (b.image.seed, b.image.quality, b.trial.true_amplitude)
    # rewriting what was read gives the same payload bytes
    io.write_dataset(tmp_path / "again", g2, r2, tiny_cfg.gen)
    assert io.payload_bytes(tmp_path) == io.payload_bytes(tmp_path / "again")
    assert manifest["counts"] == {**{lab: 20 for lab in grouped}, "real": 20}


def test_manifest_counts_cross_checked(tmp_path, tiny_cfg):
    io.write_dataset(tmp_path, gen_dataset(tiny_cfg.gen), gen_reference(tiny_cfg.gen),
                     tiny_cfg.gen)
    m = json.loads((tmp_path / io.MANIFEST).read_text())
    m["counts"]["dcgan"] += 1
    (tmp_path / io.MANIFEST).write_text(json.dumps(m))
    with pytest.raises(FormatError, match="counts"):
        io.read_dataset(tmp_path)


def test_truncated_payload_is_format_error(tmp_path, tiny_cfg):
    io.write_dataset(tmp_path, gen_dataset(tiny_cfg.gen), gen_reference(tiny_cfg.gen),
                     tiny_cfg.gen)
    p = tmp_path / io.PAYLOAD
    p.write_bytes(p.read_bytes()[:1000])
    with pytest.raises(FormatError) as err:
        io.read_dataset(tmp_path)
    assert err.value.offset > 0


def test_payload_missing_tensor(tmp_path, tiny_cfg):
    io.write_dataset(tmp_path, gen_dataset(tiny_cfg.gen), gen_reference(tiny_cfg.gen),
                     tiny_cfg.gen)
    (tmp_path / io.PAYLOAD).write_bytes(encode({"images": np.zeros((1, 16, 16))}))
    with pytest.raises(FormatError, match="missing"):
        io.read_dataset(tmp_path)


def test_report_roundtrip_value_equal(tmp_path, tiny_report):
    io.write_report(tmp_path, tiny_report)
    back = io.read_report(tmp_path)
    assert back.to_dict() == tiny_report.to_dict()
    assert (tmp_path / "table1.tsv").read_text().startswith("regime\tmean_error")
    assert "fid" in (tmp_path / "table2.tsv").read_text()


def test_report_malformed(tmp_path):
    (tmp_path / "report.json").write_text("{not json")
    with pytest.raises(FormatError):
        io.read_report(tmp_path)


# ---- CLI

@pytest.fixture(scope="module")
def cli_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.ini").write_text(TINY_INI)
    assert main(["gen-data", "--config", str(d / "tiny.ini"), "--out", str(d / "data")]) == 0
    return d


@pytest.mark.parametrize("regime", ["with-eeg", "random-eeg", "no-eeg"])
def test_cli_train_and_evaluate(cli_data, regime, capsys):
    ckpt = cli_data / f"{regime}.nsk"
    rc = main(["train", "--data", str(cli_data / "data"), "--regime", regime, "--seed", "1",
               "--out", str(ckpt), "--config", str(cli_data / "tiny.ini")])
    assert rc == 0 and ckpt.exists()
    capsys.readouterr()
    assert main(["evaluate", "--data", str(cli_data / "data"), "--ckpt", str(ckpt)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out["synthetic_neuroscore"]) == {"dcgan", "began", "progan"}
    assert out["ranking"] in ("match", "mismatch", "tie")


def test_cli_experiment_and_report(cli_data, capsys):
    out = cli_data / "exp"
    assert main(["experiment", "--config", str(cli_data / "tiny.ini"), "--out", str(out)]) == 0
    for name in ("report.json", "table1.tsv", "table2.tsv", "config.ini", "data/payload.nsk"):
        assert (out / name).exists()
    capsys.readouterr()
    assert main(["report", "--in", str(out)]) == 0
    assert "with_eeg" in capsys.readouterr().out


def test_cli_exit_codes(cli_data, tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[gen]\nnonsense = 1\n")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["gen-data", "--config", str(tmp_path / "missing.ini"),
                 "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    (tmp_path / "junk.nsk").write_bytes(b"nope")
    assert main(["evaluate", "--data", str(cli_data / "data"),
                 "--ckpt", str(tmp_path / "junk.nsk")]) == EXIT_FORMAT
    assert main(["evaluate", "--data", str(tmp_path), "--ckpt", str(tmp_path / "junk.nsk")]) \
        == EXIT_FORMAT
    hot = tmp_path / "hot.ini"
    hot.write_text(TINY_INI.replace("batch_size = 8", "batch_size = 8\nlearning_rate = 1e6"))
    assert main(["train", "--data", str(cli_data / "data"), "--regime", "no-eeg",
                 "--out", str(tmp_path / "m.nsk"), "--config", str(hot)]) == EXIT_DIVERGED
