import csv
import json

import numpy as np
import pytest

from fed_dpgan.errors import ComparisonError, ConfigError, ExperimentError
from fed_dpgan.federated import load_state
from fed_dpgan.schemas import ExperimentReport, RoundRecord
from fed_dpgan.services.experiment import (
    config_hash,
    dump_config,
    output_dir,
    override,
    parse_config,
    run_experiment,
    sweep,
)
from fed_dpgan.services.reports import METRICS_COLUMNS, compare_runs, load_report, write_comparison

from conftest import TINY_CONFIG


def tiny(**changes):
    raw = json.loads(json.dumps(TINY_CONFIG))
    for key, value in changes.items():
        node = raw
        *parents, leaf = key.split("__")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return parse_config(json.dumps(raw))


# ─── configuration ───────────────────────────────────────────────────────────


def test_empty_document_gives_defaults():
    cfg = parse_config("")
    assert (cfg.clients, cfg.c_frac, cfg.batch_size, cfg.local_epochs, cfg.alpha) == (100, 0.1, 10, 5, 0.01)
    assert cfg.privacy.sigma_n == 1e-4
    assert cfg.rounds == 100
    assert parse_config("  \n") == cfg


@pytest.mark.parametrize(
    "document, key_path",
    [
        ({"c_frac": 1.5}, "c_frac"),
        ({"foo": 1}, "foo"),
        ({"privacy": {"bar": 2}}, "privacy.bar"),
        ({"privacy": {"delta": 2.0}}, "privacy.delta"),
        ({"rounds": "many"}, "rounds"),
    ],
)
def test_invalid_documents_name_the_key(document, key_path):
    with pytest.raises(ConfigError) as info:
        parse_config(json.dumps(document))
    assert info.value.key_path == key_path
    assert str(info.value).startswith(f"{key_path}: ")


@pytest.mark.parametrize("text", ["{", "[1, 2]", "3"])
def test_malformed_documents(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_population_must_fit_the_corpus():
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"clients": 10, "dataset": {"counts": [3, 3, 3]}}))


def test_config_round_trip(tiny_config):
    assert parse_config(dump_config(tiny_config)) == tiny_config


def test_config_hash(tiny_config):
    assert config_hash(tiny_config) == config_hash(parse_config(dump_config(tiny_config)))
    assert config_hash(tiny_config) != config_hash(override(tiny_config, "seed", 1))
    assert len(config_hash(tiny_config)) == 64
    assert config_hash(override(tiny_config, "output_path", "elsewhere")) == config_hash(tiny_config)


def test_default_run_directory_uses_output_root(tiny_config, env, tmp_path):
    env.setenv("FED_DPGAN_OUTPUT_ROOT", str(tmp_path))
    assert output_dir(tiny_config) == tmp_path / "federated-iid-noaug-seed0"
    assert output_dir(override(tiny_config, "output_path", "x")).name == "x"


def test_override_dotted_key(tiny_config):
    cfg = override(tiny_config, "privacy.sigma_n", 0.01)
    assert cfg.privacy.sigma_n == 0.01
    assert cfg.gan == tiny_config.gan
    with pytest.raises(ConfigError):
        override(tiny_config, "nope.sigma_n", 1)
    with pytest.raises(ConfigError):
        override(tiny_config, "c_frac", 2.0)


# ─── pipeline ────────────────────────────────────────────────────────────────


def test_centralized_baseline(tmp_path):
    cfg = tiny(mode="centralized")
    report = run_experiment(cfg, tmp_path)
    assert report.mode == "centralized"
    assert len(report.rounds) == cfg.rounds
    assert report.gan_rounds == [] and report.privacy is None
    assert 0.0 <= report.final_accuracy <= 1.0
    assert {p.name for p in tmp_path.iterdir()} == {"metrics.csv", "summary.json", "config.json", "global.bin"}


def test_federated_run_outputs(tmp_path):
    cfg = tiny()
    report = run_experiment(cfg, tmp_path)
    assert report.class_counts == [30, 20, 10]
    assert [r.round for r in report.rounds] == list(range(cfg.rounds))
    assert all(len(r.selected) == 2 for r in report.rounds)
    assert all(r.eval_accuracy is not None for r in report.rounds)

    with open(tmp_path / "metrics.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert tuple(rows[0].keys()) == METRICS_COLUMNS
    assert [row["stage"] for row in rows] == ["classifier"] * cfg.rounds
    assert float(rows[-1]["accuracy"]) == report.rounds[-1].eval_accuracy

    assert load_report(tmp_path) == report
    assert load_state(tmp_path / "global.bin").round == cfg.rounds


def test_runs_are_byte_identical(tmp_path):
    cfg = tiny(augmentation=True, partition__mode="noniid")
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ("metrics.csv", "summary.json", "gan_samples.csv", "global.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_augmented_noniid_run(tmp_path):
    cfg = tiny(augmentation=True, partition__mode="noniid")
    report = run_experiment(cfg, tmp_path)
    assert len(report.gan_rounds) == cfg.gan.rounds
    assert all(r.stage == "gan" for r in report.gan_rounds)
    assert report.privacy is not None
    assert report.privacy.sigma_n == cfg.privacy.sigma_n
    assert "aug" in report.label and "noniid" in report.label

    lines = (tmp_path / "gan_samples.csv").read_text().splitlines()
    assert lines[0] == "# d=16; classes=normal,pneumonia,covid"
    assert len(lines) == 101
    with open(tmp_path / "metrics.csv", newline="") as f:
        stages = [row["stage"] for row in csv.DictReader(f)]
    assert stages == ["gan"] * cfg.gan.rounds + ["classifier"] * cfg.rounds


def test_empty_out_dir_skips_writing(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    a = run_experiment(tiny(seed=1), "")
    b = run_experiment(tiny(seed=2), "")
    assert a.config_hash != b.config_hash
    assert a.label == "federated-iid-noaug-seed1"
    assert not any(tmp_path.iterdir())


def test_partition_failure_is_stage_labelled():
    cfg = tiny(clients=10, partition__mode="noniid", dataset__counts=[3, 3, 30])
    with pytest.raises(ExperimentError) as info:
        run_experiment(cfg, "")
    assert info.value.stage == "partition"


def test_missing_minority_class_fails_in_gan_stage():
    cfg = tiny(augmentation=True, dataset__counts=[30, 20, 0])
    with pytest.raises(ExperimentError) as info:
        run_experiment(cfg, "")
    assert info.value.stage == "gan"


def test_sweep_writes_one_directory_per_value(tmp_path):
    cfg = tiny(augmentation=True)
    reports = sweep(cfg, "privacy.sigma_n", [1e-4, 1e-2, 1.0], tmp_path)
    assert [r.sigma_n for r in reports] == [1e-4, 1e-2, 1.0]
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "privacy.sigma_n=0.0001",
        "privacy.sigma_n=0.01",
        "privacy.sigma_n=1.0",
    ]


# ─── comparison ──────────────────────────────────────────────────────────────


def report(label, accuracies, final):
    rounds = [
        RoundRecord(round=t, selected=[0], mean_client_loss=1.0, eval_accuracy=a, seed=0)
        for t, a in accuracies.items()
    ]
    return ExperimentReport(
        label=label, config_hash="x", seed=0, mode="federated", partition="iid",
        augmentation=False, sigma_n=1e-4, final_accuracy=final, class_counts=[1, 1, 1], rounds=rounds,
    )


def test_identical_reports_have_zero_deltas():
    r = report("iid", {0: 0.5, 1: 0.6}, 0.6)
    table = compare_runs([r, r])
    assert table.labels == ["iid", "iid#1"]
    assert all(delta == 0.0 for delta in table.deltas.values())


def test_rows_align_by_round(tmp_path):
    table = compare_runs([report("iid", {0: 0.5, 1: 0.7}, 0.7), report("noniid", {1: 0.6, 2: 0.65}, 0.65)])
    assert table.rows == [
        {"round": 0.0, "iid": 0.5, "noniid": None},
        {"round": 1.0, "iid": 0.7, "noniid": 0.6},
        {"round": 2.0, "iid": None, "noniid": 0.65},
    ]
    assert table.deltas["noniid"] == pytest.approx(-0.05)
    write_comparison(table, tmp_path / "cmp.csv")
    assert (tmp_path / "cmp.csv").read_text().splitlines()[0] == "round,iid,noniid"


def test_single_report_rejected():
    with pytest.raises(ComparisonError):
        compare_runs([report("a", {0: 0.5}, 0.5)])


def test_disjoint_reports_rejected():
    with pytest.raises(ComparisonError):
        compare_runs([report("a", {0: 0.5}, 0.5), report("b", {1: 0.5}, 0.5)])


# ─── qualitative reproductions ───────────────────────────────────────────────

SLOW_BASE = {
    "rounds": 30,
    "clients": 20,
    "c_frac": 0.25,
    "local_epochs": 2,
    "dataset": {"counts": [400, 250, 70], "dim": 64},
    "gan": {"rounds": 20, "fakes_per_client": 10},
}


def slow_config(seed, **sections):
    raw = json.loads(json.dumps(SLOW_BASE))
    raw["seed"] = seed
    for key, value in sections.items():
        if isinstance(value, dict):
            raw.setdefault(key, {}).update(value)
        else:
            raw[key] = value
    return parse_config(json.dumps(raw))


# one covid holder that joins about one round in ten, and enough training for the iid run to converge
SKEW = {
    "rounds": 60,
    "c_frac": 0.1,
    "local_epochs": 5,
    "alpha": 0.05,
    "dataset": {"noise": 0.4},
}


@pytest.mark.slow
def test_noniid_trails_iid():
    wins = 0
    for seed in range(5):
        iid = run_experiment(slow_config(seed, **SKEW, partition={"mode": "iid"}), "")
        noniid = run_experiment(
            slow_config(seed, **SKEW, partition={"mode": "noniid", "covid_holder_fraction": 0.05}), ""
        )
        wins += noniid.final_accuracy < iid.final_accuracy
    assert wins >= 4


@pytest.mark.slow
def test_augmentation_helps_under_noniid():
    wins = 0
    for seed in range(5):
        plain = run_experiment(slow_config(seed, partition={"mode": "noniid"}), "")
        augmented = run_experiment(slow_config(seed, partition={"mode": "noniid"}, augmentation=True), "")
        wins += augmented.final_accuracy > plain.final_accuracy
    assert wins >= 4


@pytest.mark.slow
def test_accuracy_does_not_rise_with_noise():
    means = []
    for sigma in (1e-4, 1e-2, 1.0):
        accuracies = [
            run_experiment(slow_config(seed, augmentation=True, privacy={"sigma_n": sigma}), "").final_accuracy
            for seed in range(3)
        ]
        means.append(float(np.mean(accuracies)))
    rises = [b - a for a, b in zip(means, means[1:]) if b > a]
    assert len(rises) <= 1 and all(r <= 0.005 for r in rises)
