import json
import os

import pytest
import yaml

from bdlab import Config
from bdlab.config import Configurable


def test_defaults():
    config = Config()
    assert config.get("model") == "decoder"
    assert config.get("decoder.class_name") == "SLModel"
    assert config.get("train.lr") == 2e-4
    assert config.get("train.batch_size") * config.get("train.grad_accum") == 32
    assert config.get("import") == ["decoder"]


def test_get_default_follows_model():
    config = Config()
    assert config.get_default("model.d_model") == config.get("decoder.d_model")
    with pytest.raises(KeyError):
        config.get_default("train.nothing")


def test_set():
    config = Config()
    config.set("train.lr", 1)
    assert config.get("train.lr") == 1.0 and isinstance(config.get("train.lr"), float)
    config.set("train.batch_size", "16")
    assert config.get("train.batch_size") == 16
    with pytest.raises(ValueError):
        config.set("train.batch_size", "many")
    with pytest.raises(KeyError):
        config.set("train.nothing", 1)
    with pytest.raises(KeyError):
        config.set("nothing.at_all", 1)
    config.set("train.nothing", 1, create=True)
    assert config.get("train.nothing") == 1


def test_overwrite_modes():
    config = Config()
    assert config.set("train.seed", 1, overwrite=Config.Overwrite.No) == 42
    with pytest.raises(ValueError):
        config.set("train.seed", 1, overwrite=Config.Overwrite.Error)


def test_load(tmp_path):
    filename = str(tmp_path / "experiment.yaml")
    with open(filename, "w") as file:
        yaml.dump({"finetune": {"strategy": "repeat", "r": 1}}, file)
    config = Config()
    config.load(filename)
    assert config.get("finetune.strategy") == "repeat"
    assert config.get("finetune.r") == 1
    assert config.get("train.lr") == 2e-4


def test_load_json(tmp_path):
    filename = str(tmp_path / "experiment.json")
    with open(filename, "w") as file:
        json.dump({"decoder": {"n_layers": 32}}, file)
    config = Config()
    config.load(filename)
    assert config.get("decoder.n_layers") == 32


def test_load_errors(tmp_path):
    filename = str(tmp_path / "broken.yaml")
    with open(filename, "w") as file:
        file.write("- just\n- a list\n")
    with pytest.raises(ValueError):
        Config().load(filename)
    with open(filename, "w") as file:
        file.write("train: {unknown: 1}\n")
    with pytest.raises(KeyError):
        Config().load(filename)


def test_json_is_canonical():
    a, b = Config(), Config()
    assert a.to_json() == b.to_json()
    b.set("finetune.seeds", [1, 2])
    assert a.to_json() != b.to_json()


def test_flatten():
    flat = Config.flatten({"a": {"b": 1, "c": {"d": 2}}, "e": {}})
    assert flat == {"a.b": 1, "a.c.d": 2, "e": {}}


def test_clone():
    config = Config(folder="out")
    clone = config.clone("sub")
    clone.set("train.seed", 1)
    assert config.get("train.seed") == 42
    assert clone.folder == os.path.join("out", "sub")


def test_checks():
    config = Config()
    assert config.check("finetune.strategy", ["masked", "repeat"]) == "masked"
    with pytest.raises(ValueError):
        config.check("finetune.strategy", ["repeat"])
    assert config.check_range("train.grad_accum", 1, 8) == 4
    with pytest.raises(ValueError):
        config.check_range("train.grad_accum", 1, 4, max_inclusive=False)


def test_folder_log_and_trace(tmp_path):
    config = Config(folder=str(tmp_path / "out"))
    config.set("verbose", False)
    assert config.init_folder()
    assert not config.init_folder()
    assert os.path.exists(str(tmp_path / "out" / "config.yaml"))

    config.log_prefix = "[job] "
    config.log("first\nsecond")
    lines = open(config.logfile()).read().splitlines()
    assert len(lines) == 2 and lines[1].endswith("[job] second")

    entry = config.trace(event="something", value=1.5)
    traced = yaml.safe_load(open(config.tracefile()).readline())
    assert traced["event"] == "something" and traced["value"] == 1.5
    assert traced["entry_id"] == entry["entry_id"]


def test_checkpoint_roundtrip(tmp_path):
    config = Config()
    config.set("finetune.r", 3)
    checkpoint = config.save_to({"folder": str(tmp_path)})
    restored = Config.create_from(checkpoint)
    assert restored.get("finetune.r") == 3
    assert restored.folder == str(tmp_path)


def test_configurable():
    config = Config()
    component = Configurable(config, "finetune")
    assert component.get_option("strategy") == "masked"
    assert component.check_option("strategy", ["masked", "repeat"]) == "masked"
    component.set_option("r", 2)
    assert config.get("finetune.r") == 2
    model = Configurable(config, "model")
    assert model.get_option("n_layers") == config.get("decoder.n_layers")
