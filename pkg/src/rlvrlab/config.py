"""Experiment configuration: one TOML file with a versioned schema.

Every field has a default, so an empty file (or none at all) yields the
default profile: G=8, eps=0.2, beta=0.001, T=496, 64 prompts per batch,
temperature 1.0 and 16 evaluation samples.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigurationError
from .grpo import UpdateConfig
from .rewards import RewardSource

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_SCHEMA = "rlvrlab/experiment"
CONFIG_VERSION = 1


@dataclass(frozen=True)
class TaskSection:
    family: str = "parity"
    levels: int = 5
    pool_size: int = 512
    heldout_size: int = 64
    generator_seed: int | None = None  # None: the run seed


@dataclass(frozen=True)
class PolicySection:
    mode: str = "shared"
    max_len: int = 8
    init_scale: float = 0.0

    def __post_init__(self):
        if self.mode not in ("shared", "tabular"):
            raise ConfigurationError("policy.mode must be 'shared' or 'tabular'")


@dataclass(frozen=True)
class RewardSection:
    kind: str = "verifier"
    gamma: float = 0.0
    vote_samples: int = 16
    advantage_subset: int = 8
    probe_samples: int = 96

    def source(self) -> RewardSource:
        return RewardSource(self.kind, self.gamma, self.vote_samples, self.advantage_subset)


@dataclass(frozen=True)
class DataSection:
    n: int = 8
    probe_samples: int = 16


@dataclass(frozen=True)
class EvalSection:
    interval: int = 16
    samples: int = 16
    trainset: bool = True


@dataclass(frozen=True)
class JudgeSection:
    backend: str = "mock"
    prompts: int = 8
    samples: int = 16
    faithfulness_subset: str = "correct"
    faithful_diversity_subset: str = "all"
    full_pairwise: bool = False
    audit_log: str | None = None
    similarity_template: str | None = None
    faithfulness_template: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    task: TaskSection = field(default_factory=TaskSection)
    policy: PolicySection = field(default_factory=PolicySection)
    update: UpdateConfig = field(default_factory=UpdateConfig)
    reward: RewardSection = field(default_factory=RewardSection)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)
    judge: JudgeSection = field(default_factory=JudgeSection)

    @property
    def generator_seed(self) -> int:
        return self.seed if self.task.generator_seed is None else self.task.generator_seed

    def to_dict(self) -> dict:
        return {"schema": CONFIG_SCHEMA, "version": CONFIG_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        schema = data.pop("schema", CONFIG_SCHEMA)
        version = data.pop("version", CONFIG_VERSION)
        if schema != CONFIG_SCHEMA:
            raise ConfigurationError(f"config schema {schema!r} is not {CONFIG_SCHEMA!r}")
        if version != CONFIG_VERSION:
            raise ConfigurationError(f"config version {version} unsupported (expected {CONFIG_VERSION})")
        kw = {}
        for f in fields(cls):
            if f.name not in data:
                continue
            value = data.pop(f.name)
            if f.name == "seed":
                kw["seed"] = int(value)
            else:
                kw[f.name] = _section(_SECTIONS[f.name], value, f.name)
        if data:
            raise ConfigurationError(f"unknown config keys: {sorted(data)}")
        return cls(**kw)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Apply CLI overrides given as ``section__field=value``; ``None`` values are skipped."""
        cfg = self
        for key, value in kw.items():
            if value is None:
                continue
            if key == "seed":
                cfg = replace(cfg, seed=int(value))
                continue
            section, name = key.split("__")
            cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{name: value})})
        return cfg


_SECTIONS = {
    "task": TaskSection,
    "policy": PolicySection,
    "update": UpdateConfig,
    "reward": RewardSection,
    "data": DataSection,
    "eval": EvalSection,
    "judge": JudgeSection,
}


def _section(cls, value, name):
    if not isinstance(value, dict):
        raise ConfigurationError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = set(value) - known
    if unknown:
        raise ConfigurationError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**value)
    except TypeError as exc:
        raise ConfigurationError(f"[{name}]: {exc}") from exc


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)
