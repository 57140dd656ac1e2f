import hashlib
import json

import pytest
import yaml

from lslolab import checkpoint
from lslolab.cli import PIPELINE, main
from lslolab.config import from_dict, load_config
from lslolab.errors import ConfigError
from conftest import MICRO_CONFIG


def tree_digest(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


def run_all(config, out):
    for cmd in PIPELINE:
        assert main([*cmd, "--config", str(config), "--out", str(out)]) == 0, cmd


def test_unknown_key_names_path():
    doc = json.loads(json.dumps(MICRO_CONFIG))
    doc["phases"]["ft_all"]["lr"] = 1
    with pytest.raises(ConfigError, match=r"phases\.ft_all\.lr: unknown key"):
        from_dict(doc)


def test_bad_gps_names_path():
    doc = json.loads(json.dumps(MICRO_CONFIG))
    doc["phases"]["lslo_finetune"]["gps"]["T"] = 9
    with pytest.raises(ConfigError, match=r"phases\.lslo_finetune"):
        from_dict(doc)


def test_wrong_types_rejected():
    doc = json.loads(json.dumps(MICRO_CONFIG))
    doc["seed"] = "zero"
    with pytest.raises(ConfigError, match="seed"):
        from_dict(doc)


def test_hash_ignores_output_dir(micro_config):
    a = load_config(micro_config())
    b = load_config(micro_config(out="elsewhere"))
    c = load_config(micro_config(seed=1))
    assert a.content_hash() == b.content_hash() != c.content_hash()


def test_exit_codes(micro_config, tmp_path, capsys):
    cfg = micro_config()
    out = tmp_path / "run"
    assert main(["seed-pretrain", "--config", str(cfg), "--out", str(out)]) == 3
    assert capsys.readouterr().err.startswith("error[missing]")
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"corpus": {"languages": []}, "bogus": 1}))
    assert main(["gen-data", "--config", str(bad), "--out", str(out)]) == 2
    assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 2
    assert "error[conflict]" in capsys.readouterr().err
    assert main(["gen-data", "--config", str(cfg), "--out", str(out), "--force"]) == 0
    assert main(["gen-data", "--config", str(tmp_path / "absent.yaml"), "--out", str(out)]) == 2


def test_seed_mismatch_is_detected(micro_config, tmp_path):
    cfg = micro_config()
    out = tmp_path / "run"
    assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["seed-pretrain", "--config", str(cfg), "--out", str(out), "--seed", "5"]) == 2


def test_pipeline_outputs(micro_config, tmp_path):
    out = tmp_path / "run"
    run_all(micro_config(), out)
    files = tree_digest(out)
    for name in ("report.csv", "lslo_finetune/adapters.ckpt", "estimate_layerwise/scores.csv", "weight_learn/strategy.json"):
        assert name in files
    report = (out / "report.csv").read_text().splitlines()
    assert report[0].startswith("# config_hash=")
    assert any(line.startswith("Ft-all,") for line in report)
    header, tensors = checkpoint.load(out / "lslo_finetune" / "adapters.ckpt")
    assert header["format_version"] == 1 and tensors


def test_every_subcommand_is_deterministic(micro_config, tmp_path):
    cfg = micro_config()
    run_all(cfg, tmp_path / "a")
    run_all(cfg, tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_checkpoint_round_trip(tmp_path):
    import numpy as np

    tensors = {"w": np.arange(6, dtype=float).reshape(2, 3), "b": np.array([-0.0, 1e-300, np.pi])}
    checkpoint.save(tmp_path / "x.ckpt", tensors, {"d": 1}, {"note": "x"})
    header, back = checkpoint.load(tmp_path / "x.ckpt")
    assert header["model_config"] == {"d": 1} and header["metadata"] == {"note": "x"}
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes()
    with pytest.raises(ValueError):
        checkpoint.loads(b"garbage" * 4)
