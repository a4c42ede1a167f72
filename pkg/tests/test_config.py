import pytest

from deformseg.config import (AblationConfig, DataConfig, RunConfig,
                              load_config, parse_config, write_config)
from deformseg.errors import ConfigError

MINIMAL = """
[model]
variant = nano

[data]
image_size = 32
num_classes = 3
train_count = 8
test_count = 4
seed = 7

[train]
lr = 2e-3
steps = 5
batch = 2
lambda = 0.6
seed = 11
"""


class TestParsing:
    def test_minimal_config(self):
        cfg = parse_config(MINIMAL)
        assert cfg.model.variant == "nano"
        assert cfg.model.embed_dims == (16, 32, 64, 128)
        assert cfg.data.image_size == 32
        assert cfg.train.lr == 2e-3
        assert cfg.train.lam == 0.6
        assert cfg.train.seed == 11

    def test_defaults_without_sections(self):
        cfg = parse_config("[model]\nvariant = nano\n")
        assert cfg.data == DataConfig()
        assert cfg.ablation == AblationConfig()

    def test_explicit_keys_override_preset(self):
        cfg = parse_config(MINIMAL + "\n[model]\n") if False else parse_config(
            MINIMAL.replace("variant = nano",
                            "variant = nano\nneighborhood = 5\ndeep_supervision = true"))
        assert cfg.model.neighborhood == 5
        assert cfg.model.deep_supervision is True
        assert cfg.model.embed_dims == (16, 32, 64, 128)

    def test_list_values(self):
        text = MINIMAL.replace(
            "variant = nano",
            "variant = custom\nembed_dims = 16, 32, 64, 128\nheads = 1, 2, 4, 8")
        cfg = parse_config(text)
        assert cfg.model.embed_dims == (16, 32, 64, 128)

    def test_comments_and_blank_lines_ignored(self):
        cfg = parse_config("# top\n\n[model]\nvariant = nano  # inline\n")
        assert cfg.model.variant == "nano"


class TestErrors:
    def test_unknown_key_names_line_and_key(self):
        bad = "[model]\nvariant = nano\nwat = 3\n"
        with pytest.raises(ConfigError, match=r"line 3: unknown key 'wat'"):
            parse_config(bad)

    def test_unknown_section_names_line(self):
        with pytest.raises(ConfigError, match=r"line 1: unknown section"):
            parse_config("[nope]\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("[train]\nlr = 1e-3\nlr = 2e-3\n")

    def test_key_outside_section_rejected(self):
        with pytest.raises(ConfigError, match="outside"):
            parse_config("lr = 1e-3\n")

    def test_class_count_mismatch_rejected(self):
        bad = MINIMAL.replace("variant = nano", "variant = nano\nnum_classes = 4")
        with pytest.raises(ConfigError, match="num_classes"):
            parse_config(bad)

    def test_lambda_out_of_range_rejected(self):
        with pytest.raises(ConfigError, match="lambda"):
            parse_config(MINIMAL.replace("lambda = 0.6", "lambda = 1.4"))


class TestRoundTrip:
    def test_canonical_form_reparses_equal(self):
        cfg = parse_config(MINIMAL)
        text = write_config(cfg)
        assert parse_config(text) == cfg

    def test_round_trip_from_defaults(self):
        cfg = RunConfig()
        assert parse_config(write_config(cfg)) == cfg

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(MINIMAL, encoding="utf-8")
        assert load_config(path) == parse_config(MINIMAL)
