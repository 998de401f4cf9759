import pytest

from skytrace.config import RunConfig, load_config, parse_c3d_stages, parse_config_text, parse_conv_specs
from skytrace.errors import ConfigError
from skytrace.model import C3dStage, ConvSpec


def test_defaults_validate_and_roundtrip():
    cfg = load_config()
    assert cfg == RunConfig()
    assert parse_config_text("\n".join(cfg.to_lines())) == cfg


def test_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# desk run\nseed=4\ntrain.epochs=30\ntrain.batch_size = 32\nmodel.dropout_rate=0.1\n")
    cfg = load_config(p, {"train.epochs": 7, "mc.samples": None})
    assert cfg.seed == 4 and cfg.train.epochs == 7 and cfg.train.batch_size == 32
    assert cfg.model.dropout_rate == 0.1 and cfg.mc.samples == 50
    assert cfg.train_config().seed == 4 and cfg.synth_config().seed == 4


def test_layer_specs():
    assert parse_conv_specs("8:3x3:relu, 4:2x1") == (ConvSpec(8, (3, 3), "relu"), ConvSpec(4, (2, 1), "relu"))
    assert parse_c3d_stages("8:3x3x3:pool:relu,16:1x1x1:nopool:tanh") == (
        C3dStage(8, (3, 3, 3), True, "relu"),
        C3dStage(16, (1, 1, 1), False, "tanh"),
    )


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("train.epochs=0", "train.epochs"),
        ("train.epochs=many", "train.epochs"),
        ("nosuch.key=1", "unknown config key"),
        ("train.nosuch=1", "unknown config key"),
        ("just words", "key=value"),
        ("model.cnn=8:3x3:swish", "activation"),
        ("model.c3d=8:3x3", "3 dims"),
        ("preprocess.window=50", "window"),
        ("model.dropout_rate=1.0", "dropout"),
        ("synth.gap_probability=0.7", "gap_probability"),
    ],
)
def test_invalid_settings(tmp_path, text, fragment):
    p = tmp_path / "bad.cfg"
    p.write_text(text + "\n")
    with pytest.raises(ConfigError, match=fragment):
        load_config(p)


def test_unreadable_config_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")
