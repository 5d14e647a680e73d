import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlse_osv import config as cfgmod
from mlse_osv.cli import run_command
from mlse_osv.config import RunConfig
from mlse_osv.container import load_feature_matrix
from mlse_osv.corpus import load_manifest
from mlse_osv.errors import ConfigurationError

SMALL = {
    "generator": {"n_users": 6, "n_genuine": 12, "n_skilled": 4},
    "pipeline": {"train": {"n_trials": 2}, "svm": {"epochs": 100}},
    "runs": 2,
}
FAST = {
    "generator": {"n_users": 5, "n_genuine": 11, "n_skilled": 2},
    "pipeline": {"train": {"n_trials": 2, "max_epochs": 3, "patience": 1, "batch_size": 16}, "svm": {"epochs": 30}},
    "runs": 2,
}


def _write_config(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def _run(*argv):
    return run_command([str(a) for a in argv])


# --- configuration ----------------------------------------------------------


def test_default_config_matches_training_defaults():
    cfg = RunConfig()
    train = cfg.pipeline.train
    assert (train.learning_rate, train.momentum, train.batch_size, train.patience, train.n_trials) == (0.01, 0.9, 48, 5, 6)
    assert (cfg.pipeline.protocol.feature, cfg.pipeline.protocol.svm_extra) == (6, 4)
    assert cfg.pipeline.svm.cost == 1.0 and cfg.pipeline.svm.forgery_multiplier == 10
    assert cfg.runs == 10 and cfg.reps == 5


def test_config_round_trip():
    text = cfgmod.dumps(RunConfig())
    assert cfgmod.dumps(cfgmod.loads(text)) == text
    custom = cfgmod.loads(json.dumps(SMALL))
    assert custom.generator.n_users == 6 and custom.pipeline.train.n_trials == 2
    assert cfgmod.loads(cfgmod.dumps(custom)) == custom


@settings(max_examples=40)
@given(seed=st.integers(0, 2**63), runs=st.integers(2, 50), lr=st.floats(1e-5, 1.0), combiner=st.sampled_from(["usmg", "mv"]))
def test_config_round_trip_property(seed, runs, lr, combiner):
    cfg = cfgmod.replace_path(RunConfig(seed=seed, runs=runs, combiner=combiner), "pipeline.train.learning_rate", lr)
    assert cfgmod.loads(cfgmod.dumps(cfg)) == cfg


def test_config_rejects_unknown_and_mistyped_keys():
    with pytest.raises(ConfigurationError, match="bogus"):
        cfgmod.loads('{"bogus": 1}')
    with pytest.raises(ConfigurationError, match="pipeline.train"):
        cfgmod.loads('{"pipeline": {"train": {"lr": 0.1}}}')
    with pytest.raises(ConfigurationError):
        cfgmod.loads('{"runs": "ten"}')
    with pytest.raises(ConfigurationError):
        cfgmod.loads("not json")
    with pytest.raises(ConfigurationError):
        cfgmod.replace_path(RunConfig(), "pipeline.nothing", 1)


# --- exit codes -------------------------------------------------------------


def test_unknown_subcommand_exits_2(capsys):
    assert _run("fly") == 2
    assert "usage" in capsys.readouterr().err


def test_missing_required_flag_exits_2(capsys):
    assert _run("verify", "--user", "0") == 2


def test_domain_error_exits_1(tmp_path, capsys):
    code = _run("train", "--corpus", tmp_path / "missing", "--out", tmp_path / "out")
    err = capsys.readouterr().err
    assert code == 1
    assert err.count("\n") == 1 and "error" in err


def test_bad_config_exits_1(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.json", {"nope": 1})
    assert _run("gen-data", "--config", cfg, "--out", tmp_path / "o") == 1
    assert "nope" in capsys.readouterr().err


# --- end to end -------------------------------------------------------------


@pytest.mark.slow
def test_pipeline_end_to_end(tmp_path, capsys):
    cfg = _write_config(tmp_path / "cfg.json", SMALL)
    corpus, snaps, models, feats = (tmp_path / d for d in ("corpus", "snaps", "models", "feats"))
    assert _run("gen-data", "--config", cfg, "--seed", 5, "--out", corpus) == 0
    assert _run("train", "--config", cfg, "--seed", 5, "--corpus", corpus, "--out", snaps) == 0
    assert sorted(p.name for p in snaps.glob("*.mlse")) == ["snapshot_0.mlse", "snapshot_1.mlse"]
    trials = (snaps / "trials.csv").read_text().splitlines()
    assert trials[0] == "trial,dominant,epochs,accuracy,checkpoint" and len(trials) == 3

    assert _run("extract", "--config", cfg, "--corpus", corpus, "--snapshots", snaps, "--out", feats) == 0
    records = load_manifest(corpus / "manifest.tsv")
    matrix = load_feature_matrix(feats / "features_s1.mlsf")
    assert matrix.shape == (len(records), 128)
    assert len((feats / "features_index.tsv").read_text().splitlines()) == len(records)

    assert _run("enroll", "--config", cfg, "--seed", 5, "--corpus", corpus, "--snapshots", snaps, "--out", models) == 0
    assert len(list(models.glob("user_*.mlsv"))) == 6
    capsys.readouterr()

    # a genuine enrollment signature of user 2 is accepted by its own model
    from mlse_osv.corpus import split_wd

    split = split_wd(records, cfgmod.load(cfg).pipeline.protocol, 5)
    image = corpus / split.svm_extra[2][0].path
    for combiner in ("usmg", "mv"):
        assert _run("verify", "--config", cfg, "--snapshots", snaps, "--models", models, "--user", 2, "--image", image, "--combiner", combiner, "--out", tmp_path / "v") == 0
        decision, score = capsys.readouterr().out.strip().split("\t")
        assert decision == "genuine", (combiner, score)
        assert float(score) >= 0 or combiner == "mv"

    assert _run("verify", "--config", cfg, "--snapshots", snaps, "--models", models, "--user", 99, "--image", image, "--out", tmp_path / "v") == 1
    manifest = json.loads((snaps / "run-manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["config"]["generator"]["n_users"] == 6


@pytest.mark.slow
def test_cli_runs_are_byte_identical(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", FAST)
    corpus = tmp_path / "corpus"
    assert _run("gen-data", "--config", cfg, "--out", corpus) == 0
    for d in ("a", "b"):
        assert _run("train", "--config", cfg, "--seed", 3, "--corpus", corpus, "--out", tmp_path / f"train_{d}") == 0
        assert _run("eval-wd", "--config", cfg, "--seed", 3, "--corpus", corpus, "--out", tmp_path / f"eval_{d}", "--sweep") == 0
    for t in range(2):
        name = f"snapshot_{t}.mlse"
        assert (tmp_path / "train_a" / name).read_bytes() == (tmp_path / "train_b" / name).read_bytes()
    report = (tmp_path / "eval_a" / "report.csv").read_bytes()
    assert report == (tmp_path / "eval_b" / "report.csv").read_bytes()
    assert report.decode().splitlines()[0] == "run,frr_sf,far_rf,far_sf,eer_sf,threshold"
    assert (tmp_path / "eval_a" / "sweep_run0.csv").exists()
    manifest = json.loads((tmp_path / "eval_a" / "run-manifest.json").read_text())
    assert cfgmod.from_dict(RunConfig, manifest["config"]).seed == 3
