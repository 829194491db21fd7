"""Unit tests for the command-line pipeline: config validation, checkpoint
bundles, exit codes, and an end-to-end smoke run on a tiny configuration."""
import csv
import json

import numpy as np
import pytest

from trendadapt.cli import (CHECKPOINT_BUNDLE_VERSION, ConfigError, default_config_dict,
                            load_checkpoint, load_config, main, save_checkpoint,
                            validate_config)


def _tiny_config(**train_overrides):
    cfg = default_config_dict()
    cfg["env"].update({"n_families": 2, "sequences_per_family": 3,
                       "held_out_per_family": 1, "sequence_length": 12})
    cfg["model"].update({"identity_features": True, "g_hidden": [8]})
    cfg["train"].update({"epochs": 60, "pretrain_epochs": 30, "sigma_aug": 0.0})
    cfg["train"].update(train_overrides)
    cfg["adapt"].update({"m": 5, "steps": 40})
    return cfg


def _write(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


# -- config validation ---------------------------------------------------

def test_default_config_round_trips():
    cfg = validate_config(default_config_dict())
    assert cfg.seed == 0
    assert cfg.model.g_hidden == (32, 32)
    assert cfg.train.epochs == 1000
    assert cfg.adapt.steps == 500


def test_unknown_top_level_key_rejected():
    cfg = default_config_dict()
    cfg["extra"] = 1
    with pytest.raises(ConfigError, match="'extra'"):
        validate_config(cfg)


def test_unknown_section_key_names_field_path():
    cfg = default_config_dict()
    cfg["model"]["banana"] = 1
    with pytest.raises(ConfigError, match="'model.banana'"):
        validate_config(cfg)


def test_format_version_required():
    cfg = default_config_dict()
    cfg["format_version"] = 2
    with pytest.raises(ConfigError, match="format_version"):
        validate_config(cfg)
    del cfg["format_version"]
    with pytest.raises(ConfigError, match="format_version"):
        validate_config(cfg)


def test_seed_must_be_integer():
    cfg = default_config_dict()
    cfg["seed"] = "zero"
    with pytest.raises(ConfigError, match="seed"):
        validate_config(cfg)


def test_invalid_section_value_reported():
    cfg = default_config_dict()
    cfg["train"]["epochs"] = 0
    with pytest.raises(ConfigError, match="'train'"):
        validate_config(cfg)


def test_tuple_fields_accept_json_lists():
    cfg = default_config_dict()
    cfg["env"]["a_range"] = [0.1, 0.9]
    assert validate_config(cfg).env.a_range == (0.1, 0.9)


def test_load_config_rejects_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="root"):
        load_config(p)


# -- checkpoint bundle ---------------------------------------------------

def test_checkpoint_bundle_round_trip(tiny_trained, tmp_path):
    cfg = validate_config(_tiny_config())
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, tiny_trained["store"], cfg, ["s1", "s2"])
    store, mcfg, mode, ids = load_checkpoint(path)
    assert mode == "cv" and ids == ["s1", "s2"]
    assert mcfg == tiny_trained["mcfg"]
    assert store.weight_hash() == tiny_trained["store"].weight_hash()


def test_checkpoint_version_enforced(tmp_path):
    path = tmp_path / "ckpt.json"
    path.write_text(json.dumps({"format_version": CHECKPOINT_BUNDLE_VERSION + 1}))
    with pytest.raises(ValueError, match="format_version"):
        load_checkpoint(path)


# -- exit codes ----------------------------------------------------------

def test_unknown_subcommand_exits_2(capsys):
    assert main(["frobnicate"]) == 2
    capsys.readouterr()


def test_config_error_exits_2(tmp_path, capsys):
    cfg = default_config_dict()
    cfg["seed"] = "x"
    rc = main(["gen", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "d.jsonl")])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path, capsys):
    cfg_path = _write(tmp_path, _tiny_config())
    rc = main(["train", "--config", cfg_path, "--data", str(tmp_path / "missing.jsonl"),
               "--out", str(tmp_path / "ckpt.json")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_adapt_unknown_sequence_exits_1(tmp_path, capsys):
    cfg_path = _write(tmp_path, _tiny_config())
    data = str(tmp_path / "d.jsonl")
    ckpt = str(tmp_path / "ckpt.json")
    assert main(["gen", "--config", cfg_path, "--out", data]) == 0
    assert main(["train", "--config", cfg_path, "--data", data, "--out", ckpt]) == 0
    rc = main(["adapt", "--config", cfg_path, "--checkpoint", ckpt, "--data", data,
               "--sequence", "nope", "--out", str(tmp_path / "a.json")])
    assert rc == 1
    capsys.readouterr()


# -- pipeline smoke test -------------------------------------------------

def test_full_pipeline_smoke(tmp_path):
    cfg_path = _write(tmp_path, _tiny_config())
    data = str(tmp_path / "d.jsonl")
    feats = str(tmp_path / "features.json")
    ckpt = str(tmp_path / "ckpt.json")
    adapt_out = str(tmp_path / "adapt.json")
    metrics_out = str(tmp_path / "metrics.json")
    latent_out = str(tmp_path / "latent.csv")

    assert main(["gen", "--config", cfg_path, "--out", data]) == 0
    assert main(["pretrain", "--config", cfg_path, "--data", data, "--out", feats]) == 0
    assert main(["train", "--config", cfg_path, "--data", data,
                 "--features", feats, "--out", ckpt]) == 0
    held_out = json.loads((tmp_path / "d.jsonl").read_text().split("\n")[0])
    seq_id = held_out["meta"]["held_out_ids"][0]
    assert main(["adapt", "--config", cfg_path, "--checkpoint", ckpt, "--data", data,
                 "--sequence", seq_id, "--out", adapt_out]) == 0
    assert main(["eval", "--config", cfg_path, "--checkpoint", ckpt, "--data", data,
                 "--adapt-result", adapt_out, "--out", metrics_out]) == 0
    assert main(["export-latent", "--checkpoint", ckpt, "--data", data,
                 "--out", latent_out]) == 0

    adapt_d = json.loads((tmp_path / "adapt.json").read_text())
    assert adapt_d["mode"] == "cv" and len(adapt_d["positions"]) == 5

    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert {"nll", "rmse", "coverage_95", "silhouette", "mean_turn_angle",
            "mean_eps_norm"} <= set(metrics)

    report = (tmp_path / "ckpt.json.report.jsonl").read_text().strip().split("\n")
    assert len(report) == 60   # one history row per epoch
    assert {"epoch", "total", "L_obs"} <= set(json.loads(report[0]))

    with open(latent_out) as fh:
        rows = list(csv.reader(fh))
    # 4 training sequences x 12 samples, plus the header
    assert len(rows) == 1 + 4 * 12
    assert rows[0][0] == "sequence_id"


def test_gen_byte_deterministic(tmp_path):
    cfg_path = _write(tmp_path, _tiny_config())
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["gen", "--config", cfg_path, "--out", str(a)]) == 0
    assert main(["gen", "--config", cfg_path, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_export_latent_free_mode_has_empty_velocities(tmp_path):
    cfg = _tiny_config(mode="free")
    cfg_path = _write(tmp_path, cfg)
    data = str(tmp_path / "d.jsonl")
    ckpt = str(tmp_path / "ckpt.json")
    latent_out = str(tmp_path / "latent.csv")
    assert main(["gen", "--config", cfg_path, "--out", data]) == 0
    assert main(["train", "--config", cfg_path, "--data", data, "--out", ckpt]) == 0
    assert main(["export-latent", "--checkpoint", ckpt, "--data", data,
                 "--out", latent_out]) == 0
    with open(latent_out) as fh:
        rows = list(csv.reader(fh))
    zdot_cols = [i for i, name in enumerate(rows[0]) if name.startswith("zdot")]
    assert zdot_cols
    for row in rows[1:]:
        assert all(row[i] == "" for i in zdot_cols)
