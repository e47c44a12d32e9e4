"""
Configuration Module for plugnet

Scenario configuration with a flat ``key = value`` file format.
Precedence: command-line flags > config file > PLUGNET_OUTPUT_DIR
(output_dir only) > defaults.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass
from typing import Dict, Mapping, Optional

from .attacks import DEFAULT_VENDOR_OUI
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

SCENARIOS = ("benign", "sharing-attack", "sharing-attack-patched", "hijack", "local-control", "recovery")
OUTPUT_DIR_ENV = "PLUGNET_OUTPUT_DIR"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class ScenarioConfig:
    scenario: str = "benign"
    seed: Optional[int] = None
    patched: bool = False
    vendor_oui: bytes = DEFAULT_VENDOR_OUI
    output_dir: str = "output"
    entropy_threshold: float = 7.0
    entropy_min_len: int = 16
    sync_period: int = 10
    auth_window: int = 300
    temp_key_ttl: int = 60
    epoch: int = 1_600_000_000
    home_ssid: str = "HomeNet"
    home_passphrase: str = "correct horse battery"

    def validate(self) -> "ScenarioConfig":
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if self.seed is None:
            raise ConfigError("a seed is required")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if len(self.vendor_oui) != 3:
            raise ConfigError("vendor_oui must be 3 bytes")
        if self.entropy_min_len < 0:
            raise ConfigError("entropy_min_len must not be negative")
        for name in ("sync_period", "auth_window", "temp_key_ttl", "epoch"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not self.home_ssid:
            raise ConfigError("home_ssid must not be empty")
        return self

    @property
    def effective_patched(self) -> bool:
        return self.patched or self.scenario in ("sharing-attack-patched", "recovery")

    def to_dict(self) -> Dict:
        data = dataclasses.asdict(self)
        data['vendor_oui'] = ':'.join(f"{b:02x}" for b in self.vendor_oui)
        data['home_passphrase'] = '*' * len(self.home_passphrase)
        data['patched'] = self.effective_patched
        return data


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    value = raw.strip()
    try:
        if kind is bool:
            lowered = value.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if kind is int or key == 'seed':
            return int(value)
        if kind is float:
            return float(value)
        if kind is bytes:
            return bytes.fromhex(value.replace(':', '').replace('-', ''))
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from e
    return value


def parse_config_text(text: str, source: str = "<config>") -> Dict:
    values = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition('=')
        key = key.strip().replace('-', '_')
        if not sep:
            raise ConfigError(f"{source}:{line_no}: expected key = value")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{line_no}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def load_config_file(path: str) -> Dict:
    """
    Read a flat ``key = value`` file; ``#`` starts a comment.

    Args:
        path (str): Config file path

    Returns:
        Dict: Typed values for the keys present
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    values = parse_config_text(text, path)
    logger.info(f"Loaded {len(values)} setting(s) from {path}")
    return values


def build_config(flags: Optional[Mapping] = None, config_file: Optional[str] = None,
                 env: Optional[Mapping[str, str]] = None) -> ScenarioConfig:
    """
    Merge defaults, environment, config file and flags (None flags are ignored).

    Returns:
        ScenarioConfig: Validated configuration
    """
    env = os.environ if env is None else env
    values: Dict = {}
    if env.get(OUTPUT_DIR_ENV):
        values['output_dir'] = env[OUTPUT_DIR_ENV]
    if config_file:
        values.update(load_config_file(config_file))
    for key, value in (flags or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown setting {key!r}")
        if value is not None:
            values[key] = value
    return ScenarioConfig(**values).validate()
