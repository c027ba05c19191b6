import json

import pytest

from auglearn import ConfigError, load_run_config, run_config_to_dict
from auglearn.config import apply_override, parse_override, run_config_from_dict

GOOD = {
    "seed": 3,
    "train": {
        "mode": "auglearn",
        "inner_lr": 0.05,
        "epochs": 2,
        "hypergrad": {"k": 7},
    },
    "data": {
        "holdout": "d1",
        "generate": {
            "classes": 4,
            "samples_per_class": 2,
            "image_hw": [16, 16],
            "domains": [
                {"id": "d0", "rotation_deg": 0.0, "gains": [1, 1, 1], "background": 0.1, "texture": 0.0},
                {"id": "d1", "rotation_deg": 10.0, "gains": [0.5, 1, 1], "background": 0.2, "texture": 0.1},
            ],
        },
    },
    "attack": {"epsilons": [0.0, 0.01]},
}


def write(tmp_path, payload):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(payload))
    return p


def test_load_good_config(tmp_path):
    rc = load_run_config(write(tmp_path, GOOD))
    assert rc.seed == 3
    assert rc.train.mode == "auglearn"
    assert rc.train.seed == 3  # top-level seed propagates into training
    assert rc.train.hypergrad.k == 7
    assert rc.train.hypergrad.alpha == pytest.approx(0.05)  # defaults to inner_lr
    assert rc.data.holdout == "d1"
    assert rc.data.generate.domains[1].gains == (0.5, 1.0, 1.0)
    assert rc.attack.epsilons == (0.0, 0.01)


def test_unknown_keys_rejected(tmp_path):
    bad = json.loads(json.dumps(GOOD))
    bad["train"]["tipo"] = 1
    with pytest.raises(ConfigError, match="tipo"):
        load_run_config(write(tmp_path, bad))


def test_data_section_required():
    with pytest.raises(ConfigError, match="data"):
        run_config_from_dict({"seed": 0})


def test_bad_values_become_config_errors(tmp_path):
    bad = json.loads(json.dumps(GOOD))
    bad["train"]["inner_lr"] = -1.0
    with pytest.raises(ConfigError):
        load_run_config(write(tmp_path, bad))


def test_parse_override_json_and_string():
    assert parse_override("train.inner_lr=0.5") == (["train", "inner_lr"], 0.5)
    assert parse_override("train.mode=auglearn") == (["train", "mode"], "auglearn")
    assert parse_override("attack.epsilons=[0,0.1]") == (["attack", "epsilons"], [0, 0.1])
    assert parse_override("data.generate=null") == (["data", "generate"], None)
    with pytest.raises(ConfigError):
        parse_override("no-equals-sign")


def test_apply_override_creates_paths():
    raw = {}
    apply_override(raw, ["train", "hypergrad", "k"], 9)
    assert raw == {"train": {"hypergrad": {"k": 9}}}


def test_overrides_through_loader(tmp_path):
    rc = load_run_config(
        write(tmp_path, GOOD), overrides=["train.epochs=9", "seed=11", "data.holdout=d0"]
    )
    assert rc.train.epochs == 9
    assert rc.seed == 11 and rc.train.seed == 11
    assert rc.data.holdout == "d0"


def test_roundtrip_to_dict_reloadable(tmp_path):
    rc = load_run_config(write(tmp_path, GOOD))
    again = run_config_from_dict(run_config_to_dict(rc))
    assert again == rc


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.json")


def test_malformed_json_is_config_error(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(p)
