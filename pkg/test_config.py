import json

import pytest

from config import BanditConfig, DenoiseConfig, PropsConfig, RegressConfig, load_run_config, parse_override
from errors import ConfigError


class TestParseOverride:

    def test_json_value(self):
        assert parse_override('layer_sizes=[4, 1]') == ('layer_sizes', [4, 1])

    def test_plain_string(self):
        assert parse_override('dataset=boston.csv') == ('dataset', 'boston.csv')

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_override('epochs')


class TestLoadRunConfig:

    def test_defaults(self):
        rc = load_run_config('regress')
        assert rc == RegressConfig()
        assert rc.layer_sizes == (256,) * 12
        assert rc.epochs == 40

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / 'run.json'
        path.write_text(json.dumps({'epochs': 3, 'learning_rate': 0.003}))
        rc = load_run_config('regress', str(path), {'epochs': 5})
        assert rc.epochs == 5
        assert rc.learning_rate == 0.003

    def test_coercion(self):
        rc = load_run_config('bandit', overrides={'horizon': '100', 'seeds': 3, 'layer_sizes': [8, 1]})
        assert rc.horizon == 100
        assert rc.seeds == (3,)
        assert rc.layer_sizes == (8, 1)

    def test_optional_bounds(self):
        rc = load_run_config('regress', overrides={'mu_max': 4})
        assert rc.mu_max == 4.0
        assert rc.mu_min is None

    def test_boolean(self):
        assert load_run_config('denoise', overrides={'bias_experts': 'false'}).bias_experts is False

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match='colour'):
            load_run_config('regress', overrides={'colour': 'red'})

    def test_field_level_message(self):
        with pytest.raises(ConfigError, match='learning_rate'):
            load_run_config('regress', overrides={'learning_rate': 2.0})

    def test_bad_integer(self):
        with pytest.raises(ConfigError, match='epochs'):
            load_run_config('regress', overrides={'epochs': 1.5})

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{not json')
        with pytest.raises(ConfigError):
            load_run_config('regress', str(path))

    def test_unknown_command(self):
        with pytest.raises(ConfigError):
            load_run_config('train')

    def test_each_command_has_config(self):
        assert isinstance(load_run_config('bandit'), BanditConfig)
        assert isinstance(load_run_config('denoise'), DenoiseConfig)
        assert isinstance(load_run_config('props'), PropsConfig)

    def test_denoise_presets_by_dataset(self):
        roll = DenoiseConfig()
        images = DenoiseConfig(dataset='train-images-idx3-ubyte.gz')
        assert (roll.layer_sizes, roll.learning_rate, roll.base_variance) == ((32, 32, 32, 1), 0.002, 0.04)
        assert (images.layer_sizes, images.learning_rate, images.base_variance) == ((50, 50, 50, 1), 0.05, 0.3)
        assert DenoiseConfig(learning_rate=0.01).learning_rate == 0.01
