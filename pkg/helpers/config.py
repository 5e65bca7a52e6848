"""Ini configuration: create defaults, upgrade old files, validate into settings blocks."""
import configparser
import json
import os
from dataclasses import MISSING, dataclass, field, fields, replace

from helpers.acoustics import DspSettings
from helpers.augment import AugmentSettings
from helpers.errors import ConfigError, VganError
from helpers.gmm import GmmSettings
from helpers.ingest import LipIndexMap
from helpers.papi import PapiSettings
from helpers.synth import SynthSettings
from helpers.training import TrainConfig
from helpers.vgan import VganConfig


@dataclass(frozen=True)
class GeneralSettings:
    """Run-wide settings."""

    debug: bool = False
    logrotate: int = 7
    timezone: str = "Europe/Amsterdam"
    notifications: bool = False
    notify_urls: tuple = ("notify-url1",)
    jobs: int = 1
    seed: int = 42

    def __post_init__(self):
        if self.logrotate < 0 or self.jobs < 1:
            raise ConfigError("logrotate must be >= 0 and jobs >= 1")


@dataclass(frozen=True)
class PathSettings:
    """Tier names and output subdirectories."""

    syllable_tier: str = "syllables"
    vowel_tier: str = "vowels"
    features_dir: str = "features"
    models_dir: str = "models"
    reports_dir: str = "reports"


SECTIONS = {
    "settings": GeneralSettings,
    "paths": PathSettings,
    "dsp": DspSettings,
    "papi": PapiSettings,
    "lips": LipIndexMap,
    "augment": AugmentSettings,
    "gmm": GmmSettings,
    "vgan": VganConfig,
    "train": TrainConfig,
    "synth": SynthSettings,
}

# Taken from [settings] instead
EXCLUDED = {"train": ("seed",)}


@dataclass(frozen=True)
class GlobalConfig:
    """Every settings block of one run."""

    settings: GeneralSettings = field(default_factory=GeneralSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    dsp: DspSettings = field(default_factory=DspSettings)
    papi: PapiSettings = field(default_factory=PapiSettings)
    lips: LipIndexMap = field(default_factory=LipIndexMap)
    augment: AugmentSettings = field(default_factory=AugmentSettings)
    gmm: GmmSettings = field(default_factory=GmmSettings)
    vgan: VganConfig = field(default_factory=VganConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSettings = field(default_factory=SynthSettings)


def _key(name):
    return name.replace("_", "-")


def _section_fields(section):
    excluded = EXCLUDED.get(section, ())
    return [f for f in fields(SECTIONS[section]) if f.name not in excluded]


def _default(f):
    return f.default if f.default is not MISSING else f.default_factory()


def _render(value):
    """Ini text of a default value."""

    if isinstance(value, tuple):
        return json.dumps(value)
    if value is None:
        return ""
    return str(value)


def _convert(default, raw, where):
    """Parse ini text by the type of the field default."""

    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(f"'{raw}' is not a boolean")
            return configparser.ConfigParser.BOOLEAN_STATES[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            value = json.loads(raw)
            if not isinstance(value, list):
                raise ValueError("expected a JSON list")
            return tuple(value)
        if default is None:
            return raw or None
        return raw
    except (ValueError, json.JSONDecodeError) as err:
        raise ConfigError(f"{where}: {err}") from None


def default_config():
    """ConfigParser holding every section with default values."""

    cfg = configparser.ConfigParser(interpolation=None)
    for section in SECTIONS:
        cfg[section] = {_key(f.name): _render(_default(f)) for f in _section_fields(section)}
    return cfg


def write_config(cfg, path):
    """Write an ini file."""

    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
    with open(path, "w", encoding="utf-8") as cfgfile:
        cfg.write(cfgfile)


def upgrade_config(thelogger, cfg, path):
    """Add sections and keys missing from an existing config file."""

    added = []
    defaults = default_config()
    for section in defaults.sections():
        if not cfg.has_section(section):
            cfg.add_section(section)
        for key, value in defaults.items(section):
            if not cfg.has_option(section, key):
                cfg.set(section, key, value)
                added.append(f"{section}.{key}")

    if added:
        write_config(cfg, path)
        if thelogger:
            thelogger.info(f"Upgraded the configuration file '{path}' with {', '.join(added)}")
    return cfg


def parse_config(cfg):
    """Validate a ConfigParser into a GlobalConfig."""

    unknown = sorted(set(cfg.sections()) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section [{unknown[0]}]")

    blocks = {}
    for section, cls in SECTIONS.items():
        known = {_key(f.name): f for f in _section_fields(section)}
        values = {}
        if cfg.has_section(section):
            for key, raw in cfg.items(section):
                if key not in known:
                    raise ConfigError(f"unknown config key '{key}' in section [{section}]")
                f = known[key]
                values[f.name] = _convert(_default(f), raw, f"[{section}] {key}")
        try:
            blocks[section] = cls(**values)
        except VganError as err:
            raise ConfigError(f"[{section}] {err}") from None
        except (TypeError, ValueError) as err:
            raise ConfigError(f"[{section}] invalid value: {err}") from None

    blocks["train"] = replace(blocks["train"], seed=blocks["settings"].seed)
    return GlobalConfig(**blocks)


def load_config(path, thelogger=None):
    """Load a config file, creating it with defaults when missing; returns (config, created)."""

    cfg = configparser.ConfigParser(interpolation=None)
    created = False
    try:
        found = cfg.read(path, encoding="utf-8")
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config file '{path}': {err}") from None

    if not found:
        cfg = default_config()
        write_config(cfg, path)
        created = True
    else:
        cfg = upgrade_config(thelogger, cfg, path)

    return parse_config(cfg), created
