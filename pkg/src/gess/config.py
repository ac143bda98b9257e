"""Run configuration: an INI-style file of ``key = value`` lines under ``[section]`` headers.

Unknown sections or keys are errors. :func:`dump` writes every effective value,
defaults included, so ``load(dump(cfg)) == cfg``.
"""
import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from gess.depth_stability import StabilityConstants


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    params: str = ""  # directory with manifest.json; empty -> seeded random weights
    out: str = "out"


@dataclass
class UtcfConfig:
    channels: int = 128
    reduction: int = 4
    mu: float = 0.1

    def validate(self):
        if self.channels < 1:
            raise ConfigError("utcf.channels must be >= 1")
        if not 1 <= self.reduction <= self.channels:
            raise ConfigError("utcf.reduction must lie in 1..channels")
        if not 0.0 <= self.mu <= 1.0:
            raise ConfigError("utcf.mu must lie in [0, 1]")


@dataclass
class SdakConfig:
    alpha: float = 1.0
    beta: float = 1.0
    nms_radius: int = 4
    top_k: int = 10000
    score_threshold: float = 0.0
    border_margin: int = 4

    def validate(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("sdak.alpha and sdak.beta must be >= 0")
        if self.nms_radius < 1 or self.top_k < 1:
            raise ConfigError("sdak.nms_radius and sdak.top_k must be >= 1")
        if self.score_threshold < 0 or self.border_margin < 0:
            raise ConfigError("sdak.score_threshold and sdak.border_margin must be >= 0")


@dataclass
class StabilityConfig:
    alpha_delta: float = 2.0
    alpha_l: float = 1.0
    gamma: float = 3.0
    epsilon: float = 0.2

    def validate(self):
        try:
            self.constants()
        except ValueError as exc:
            raise ConfigError(f"stability: {exc}") from None

    def constants(self):
        return StabilityConstants(self.alpha_delta, self.alpha_l, self.gamma, self.epsilon)


@dataclass
class EvalConfig:
    matcher: str = "mutual"
    thresholds: tuple = tuple(range(1, 11))

    def validate(self):
        if self.matcher not in ("mutual", "oneway"):
            raise ConfigError(f"eval.matcher must be 'mutual' or 'oneway', got {self.matcher!r}")
        if not self.thresholds or any(t <= 0 for t in self.thresholds):
            raise ConfigError("eval.thresholds must be positive")


@dataclass
class RunSection:
    seed: int = 0
    jobs: int = 1

    def validate(self):
        if self.jobs < 1:
            raise ConfigError("run.jobs must be >= 1")


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    utcf: UtcfConfig = field(default_factory=UtcfConfig)
    sdak: SdakConfig = field(default_factory=SdakConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunSection = field(default_factory=RunSection)

    def validate(self):
        for f in fields(self):
            section = getattr(self, f.name)
            if hasattr(section, "validate"):
                section.validate()
        return self

    def digest(self):
        """Short hash of every setting that can change results (the output directory is excluded)."""
        settings = replace(self, paths=replace(self.paths, out=""))
        return hashlib.sha256(dump(settings).encode()).hexdigest()[:16]


def _parse(value, default):
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(float(v) if "." in v else int(v) for v in (p.strip() for p in value.split(",")) if v)
    return value.strip()


def _format(value):
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def loads(text):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    cfg = RunConfig()
    sections = {f.name: f for f in fields(cfg)}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown config section [{name}]")
        section = getattr(cfg, name)
        known = {f.name: f for f in fields(section)}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown config key {name}.{key}")
            try:
                setattr(section, key, _parse(raw, getattr(section, key)))
            except ValueError:
                raise ConfigError(f"bad value for {name}.{key}: {raw!r}") from None
    return cfg.validate()


def load(path=None):
    if path is None:
        return RunConfig().validate()
    return loads(Path(path).read_text())


def dump(cfg: RunConfig):
    lines = []
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        lines.append(f"[{f.name}]")
        for sf in fields(section):
            lines.append(f"{sf.name} = {_format(getattr(section, sf.name))}")
        lines.append("")
    return "\n".join(lines)
