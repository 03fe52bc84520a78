import pytest
import yaml

from hsonet.config import (
    BackboneConfig,
    ConfigError,
    EOLossConfig,
    SynthConfig,
    TrainConfig,
    dump_config,
    from_dict,
    load_config,
)


def test_defaults_are_valid():
    assert TrainConfig().problems() == []
    assert SynthConfig().problems() == []
    assert TrainConfig().validate().batch_size == 8


def test_dump_load_round_trip(tmp_path):
    train = TrainConfig(steps=7, lr=1e-3, loss=EOLossConfig(gamma=1.5, schedule="linear", literal_hardness=True),
                        model=BackboneConfig(widths=(8, 8, 16, 16)))
    synth = SynthConfig(size=128, hard_case_rate=0.1)
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(dump_config(train, synth)))
    t2, s2 = load_config(path)
    assert t2 == train and s2 == synth


def test_every_dataclass_field_is_a_config_key():
    doc = dump_config(TrainConfig(), SynthConfig())
    assert set(doc["loss"]) == set(EOLossConfig.__dataclass_fields__)
    assert set(doc["model"]) == set(BackboneConfig.__dataclass_fields__)
    assert set(doc["train"]) == set(TrainConfig.__dataclass_fields__) - {"loss", "model"}


def test_all_problems_reported():
    bad = TrainConfig(steps=-1, batch_size=0, lr=-1.0, loss=EOLossConfig(gamma=-1, schedule="step", eps=0.1),
                      model=BackboneConfig(pyramid_dim=0))
    with pytest.raises(ConfigError) as err:
        bad.validate()
    msgs = " ".join(err.value.problems)
    for key in ("train.steps", "train.batch_size", "train.lr", "loss.gamma", "loss.schedule", "loss.eps",
                "model.pyramid_dim"):
        assert key in msgs
    assert len(err.value.problems) == 7


def test_unknown_keys_and_sections():
    with pytest.raises(ConfigError) as err:
        from_dict({"train": {"stepz": 1}, "optim": {}, "loss": {"gamma": 1, "foo": 2}})
    assert len(err.value.problems) == 3


def test_non_mapping_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(p)
