import pytest

from plugnet.config import OUTPUT_DIR_ENV, ScenarioConfig, build_config, load_config_file, parse_config_text
from plugnet.exceptions import ConfigError


class TestDefaults:
    def test_default_values(self):
        config = build_config({'seed': 3}, env={})
        assert config.scenario == "benign"
        assert config.patched is False
        assert config.vendor_oui == bytes.fromhex("ec1a59")
        assert config.output_dir == "output"
        assert config.entropy_threshold == 7.0 and config.entropy_min_len == 16

    def test_seed_is_required(self):
        with pytest.raises(ConfigError):
            build_config({'scenario': "benign"}, env={})

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError):
            build_config({'scenario': "teleport", 'seed': 1}, env={})

    def test_negative_seed(self):
        with pytest.raises(ConfigError):
            build_config({'seed': -1}, env={})


class TestPrecedence:
    def test_flags_beat_file_beat_env(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("seed = 5\noutput_dir = from-file\nsync_period = 20\n")
        env = {OUTPUT_DIR_ENV: "from-env"}
        assert build_config({}, str(path), env).output_dir == "from-file"
        assert build_config({'output_dir': "from-flag"}, str(path), env).output_dir == "from-flag"
        config = build_config({'seed': 9, 'sync_period': None}, str(path), env)
        assert config.seed == 9 and config.sync_period == 20

    def test_env_applies_without_file(self):
        assert build_config({'seed': 1}, env={OUTPUT_DIR_ENV: "elsewhere"}).output_dir == "elsewhere"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config_file(str(tmp_path / "absent.conf"))


class TestFileFormat:
    def test_types_and_comments(self):
        values = parse_config_text(
            "# sweep settings\n"
            "scenario = hijack\n"
            "seed = 12   # trailing comment\n"
            "patched = yes\n"
            "vendor-oui = ec:1a:59\n"
            "entropy_threshold = 6.5\n"
        )
        assert values == {
            'scenario': "hijack",
            'seed': 12,
            'patched': True,
            'vendor_oui': bytes.fromhex("ec1a59"),
            'entropy_threshold': 6.5,
        }

    def test_unknown_key_names_the_line(self):
        with pytest.raises(ConfigError) as exc:
            parse_config_text("seed = 1\n\ncolour = blue\n", "run.conf")
        assert "run.conf:3" in str(exc.value)

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_config_text("seed 1\n")

    @pytest.mark.parametrize("line", ["seed = many", "patched = maybe", "vendor_oui = zz", "sync_period = 1.5"])
    def test_bad_values(self, line):
        with pytest.raises(ConfigError):
            parse_config_text(line)

    def test_short_vendor_prefix_rejected(self):
        with pytest.raises(ConfigError):
            build_config({'seed': 1, 'vendor_oui': bytes.fromhex("ec1a")}, env={})


class TestEffectiveSettings:
    @pytest.mark.parametrize("scenario,expected", [
        ("benign", False),
        ("sharing-attack", False),
        ("hijack", False),
        ("sharing-attack-patched", True),
        ("recovery", True),
    ])
    def test_patched_by_scenario(self, scenario, expected):
        assert ScenarioConfig(scenario=scenario, seed=1).effective_patched is expected

    def test_patched_flag_wins(self):
        assert ScenarioConfig(scenario="sharing-attack", seed=1, patched=True).effective_patched

    def test_report_form_masks_passphrase(self):
        data = build_config({'seed': 1, 'scenario': "recovery"}, env={}).to_dict()
        assert data['vendor_oui'] == "ec:1a:59"
        assert data['home_passphrase'] == "*" * len("correct horse battery")
        assert data['patched'] is True
