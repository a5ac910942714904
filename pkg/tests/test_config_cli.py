import json

import pytest

from filmseg.cli import main
from filmseg.config import ConfigError, resolve_config
from filmseg.evalkit import loads_reports

TINY = """# tiny end-to-end settings
data.n_train = 24
data.n_test_seen = 8
data.n_test_unseen = 8
pretrain.n_pairs = 32
pretrain.epochs = 1
pretrain.batch_size = 16
pretrain.warmup_steps = 1
train.epochs = 1
"""


# -- config resolution --
def test_defaults_and_precedence(tmp_path):
    assert resolve_config()["decoder.D"] == 64
    f = tmp_path / "c.cfg"
    f.write_text("decoder.D = 96\ntrain.epochs = 4  # inline comment\n")
    cfg = resolve_config(f, ["decoder.D=128"])
    assert cfg["decoder.D"] == 128 and cfg["train.epochs"] == 4 and cfg["train.batch_size"] == 16
    assert "decoder.D = 128" in cfg.snapshot_text().splitlines()
    assert resolve_config(tmp_path / "c.cfg").config_hash() != cfg.config_hash()


def test_unknown_and_mistyped_keys_are_named(tmp_path):
    with pytest.raises(ConfigError) as e:
        resolve_config(overrides=["decoder.depthh=3", "zzz.a=1"])
    assert e.value.keys == ["decoder.depthh", "zzz.a"] and "decoder.depthh" in str(e.value)
    with pytest.raises(ConfigError) as e:
        resolve_config(overrides=["train.base_lr=fast"])
    assert e.value.keys == ["train.base_lr"]
    with pytest.raises(ConfigError):
        resolve_config(overrides=["decoder.variant=late_fusion"])
    with pytest.raises(ConfigError):
        resolve_config(overrides=["train.min_lr=1"])
    with pytest.raises(ConfigError):
        resolve_config(tmp_path / "missing.cfg")


def test_snapshot_reparses_to_same_config(tmp_path):
    cfg = resolve_config(overrides=["encoder.taps=3,5,7,9", "train.freeze_encoder=false"])
    path = cfg.write_snapshot(tmp_path)
    again = resolve_config(path)
    assert again.to_dict() == cfg.to_dict() and again.config_hash() == cfg.config_hash()


# -- command line --
def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["nonsense"]) == 1
    assert main(["train", "--data", "x"]) == 1
    assert main(["train", "--data", "x", "--encoder", "y", "--freeze-encoder=maybe"]) == 1
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["error"] == "usage"


def test_config_errors_exit_2(tmp_path, capsys):
    rc = main(["train", "--data", "x", "--encoder", "y", "--set", "decoder.depthh=3", "--out", str(tmp_path)])
    assert rc == 2
    record = json.loads((tmp_path / "error.json").read_text())
    assert record["keys"] == ["decoder.depthh"] and "decoder.depthh" in record["message"]


def test_runtime_errors_exit_3(tmp_path):
    rc = main(["train", "--data", str(tmp_path / "nope"), "--encoder", "y", "--out", str(tmp_path / "o")])
    assert rc == 3
    assert json.loads((tmp_path / "o" / "error.json").read_text())["error"] == "missing-index"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    assert main(["gen-data", "--config", str(cfg), "--seed", "2", "--out", str(root / "data")]) == 0
    assert main(["pretrain", "--config", str(cfg), "--out", str(root / "enc")]) == 0
    return root, cfg


def test_train_eval_and_full_finetune_flag(workspace):
    root, cfg = workspace
    common = ["--config", str(cfg), "--data", str(root / "data"), "--encoder", str(root / "enc" / "encoder.safetensors"),
              "--seed", "2"]
    assert main(["train", *common, "--out", str(root / "frozen"), "--D", "32"]) == 0
    assert main(["train", *common, "--out", str(root / "ft"), "--freeze-encoder=false"]) == 0
    frozen = json.loads((root / "frozen" / "train_report.json").read_text())
    ft = json.loads((root / "ft" / "train_report.json").read_text())
    assert frozen["freeze_encoder"] and not ft["freeze_encoder"]
    assert ft["variant"].endswith("full_finetune")
    assert frozen["encoder_fingerprint_before"] == frozen["encoder_fingerprint_after"]
    assert "decoder.D = 32" in (root / "frozen" / "resolved_config.txt").read_text()
    assert "train.freeze_encoder = false" in (root / "ft" / "resolved_config.txt").read_text()
    manifest = json.loads((root / "frozen" / "manifest.json").read_text())
    assert {"config_hash", "dataset_hash", "seed"} <= set(manifest)

    assert main(["eval", *common, "--run", str(root / "frozen"), "--out", str(root / "ev")]) == 0
    assert main(["hybrid-eval", *common, "--run", str(root / "frozen"), "--out", str(root / "hy")]) == 0
    (rep,) = loads_reports((root / "ev" / "report.json").read_text())
    assert rep.identity.dataset_hash == manifest["dataset_hash"] and rep.identity.seed == 2
    tags = {r.identity.tag for r in loads_reports((root / "hy" / "report.json").read_text())}
    assert "detector" in tags and any(t.startswith("hybrid") for t in tags)
    assert main(["report", str(root / "ev" / "report.json"), str(root / "hy" / "report.json"),
                 "--out", str(root / "merged")]) == 0
    assert (root / "merged" / "table_attributes_test_unseen.tsv").exists()


def test_ablate_fusion_variant_shares_dataset(workspace):
    root, cfg = workspace
    out = root / "abl"
    rc = main(["ablate", "--config", str(cfg), "--axis", "fusion_variant", "--seed", "2",
               "--encoder", str(root / "enc" / "encoder.safetensors"), "--out", str(out)])
    assert rc == 0
    reports = loads_reports((out / "comparison" / "report.json").read_text())
    assert [r.identity.tag for r in reports] == ["hierarchical_film", "single_film", "cross_attention"]
    assert len({r.identity.dataset_hash for r in reports}) == 1
    for r in reports:
        assert (out / r.identity.tag / "report" / "report.json").exists()
