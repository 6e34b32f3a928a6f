import pytest

from protojoint import config
from protojoint.checkpoint import BinaryCheckpointBackend, JsonCheckpointBackend
from protojoint.exceptions import ConfigError


@pytest.fixture
def config_file(tmp_path):
    def factory(text: str) -> str:
        path = tmp_path / "train.cfg"
        path.write_text(text)
        return str(path)

    return factory


class TestParseConfig:
    def test_empty_file_gives_defaults(self, config_file):
        result = config.parse_config(config_file(""))

        assert result.tau == 0.1
        assert result.window == 1
        assert result.d_h == 32
        assert result.epochs == 30
        assert result.mode == "ww"
        assert (result.lambda_, result.gamma, result.delta) == (1.0, 0.5, 0.5)

    def test_no_file(self):
        assert config.parse_config() == config.default_config()

    def test_zero_tau(self, config_file):
        with pytest.raises(ConfigError, match="tau must be positive"):
            config.parse_config(config_file("tau=0"))

    def test_flag_beats_file(self, config_file):
        result = config.parse_config(config_file("gamma=0.7\n"), {"gamma": 0.3})
        assert result.gamma == 0.3

    def test_none_flags_are_ignored(self, config_file):
        result = config.parse_config(config_file("gamma=0.7\n"), {"gamma": None})
        assert result.gamma == 0.7

    def test_comments_and_blank_lines(self, config_file):
        result = config.parse_config(config_file("# weights\n\nlambda = 0.25  # slot loss\n"))
        assert result.lambda_ == 0.25

    def test_unknown_key(self, config_file):
        with pytest.raises(ConfigError, match="unknown key 'alpha' at line 1"):
            config.parse_config(config_file("alpha=1"))

    def test_unknown_flag(self):
        with pytest.raises(ConfigError, match="unknown key 'alpha'"):
            config.parse_config(overrides={"alpha": 1})

    def test_missing_equals(self, config_file):
        with pytest.raises(ConfigError, match="expected key=value at line 2"):
            config.parse_config(config_file("tau=0.2\nepochs\n"))

    def test_unparsable_value(self, config_file):
        with pytest.raises(ConfigError, match="cannot parse epochs"):
            config.parse_config(config_file("epochs=many"))

    def test_bool_values(self, config_file):
        assert config.parse_config(config_file("scl_normalize=yes")).scl_normalize is True

    def test_allowed_values(self):
        with pytest.raises(ConfigError, match="mode must be one of"):
            config.parse_config(overrides={"mode": "xx"})

    def test_dropout_must_stay_below_one(self):
        with pytest.raises(ConfigError, match="dropout must be < 1"):
            config.parse_config(overrides={"dropout": 1.0})


class TestModeRules:
    def test_oo_zeroes_defaulted_weights(self):
        result = config.default_config(mode="oo")
        assert (result.gamma, result.delta) == (0.0, 0.0)
        assert not result.uses_ic_scl
        assert not result.uses_sf_scl

    def test_wo_zeroes_delta_only(self):
        result = config.default_config(mode="wo")
        assert (result.gamma, result.delta) == (0.5, 0.0)
        assert result.uses_ic_scl
        assert not result.uses_sf_scl

    def test_oo_with_positive_gamma(self, config_file):
        with pytest.raises(ConfigError, match="mode=oo disables gamma"):
            config.parse_config(config_file("mode=oo\ngamma=0.3"))

    def test_explicit_zero_is_accepted(self):
        assert config.default_config(mode="wo", delta=0.0).delta == 0.0


class TestTrainConfig:
    def test_text_round_trip(self, config_file):
        original = config.default_config(mode="wo", tau=0.25, scl_normalize=True, checkpoint_format="binary")
        assert config.parse_config(config_file(original.to_text())) == original

    def test_replace_validates(self):
        with pytest.raises(ConfigError):
            config.default_config().replace(tau=-1.0)

    def test_replace_lambda(self):
        assert config.default_config().replace(**{"lambda": 0.3}).lambda_ == 0.3

    def test_hidden_size(self):
        assert config.default_config(d_h=5).d == 10

    def test_declarations_have_descriptions(self):
        assert all(option.description for option in config.get_declarations().values())


class TestCheckpointBackend:
    def test_default_is_json(self):
        assert isinstance(config.get_checkpoint_backend(), JsonCheckpointBackend)

    def test_binary(self):
        assert isinstance(config.get_checkpoint_backend("Binary"), BinaryCheckpointBackend)

    def test_unknown_falls_back(self, caplog):
        assert isinstance(config.get_checkpoint_backend("xml"), JsonCheckpointBackend)
        assert "falling back" in caplog.text
