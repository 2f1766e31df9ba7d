"""Experiment configuration: one YAML file, one dataclass per section.

Every key has a default, so an empty file (plus ``name``) is a valid config.
Unknown keys are rejected.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .scenario import parse_scenario


@dataclass
class CorpusSection:
    size: int = 4000


@dataclass
class SplitsSection:
    n_member: int = 300
    n_shadow: int = 300


@dataclass
class ModelSection:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.5


@dataclass
class MfeSection:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    feature_dim: int = 32
    train_text: bool = False


@dataclass
class AttackSection:
    mode: str = "both"
    mb_classifier: str = "margin"
    mb_metric: str = "rouge_l"
    svm_c: float = 100.0
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.01


@dataclass
class DefenseSection:
    """Applied to the target model only."""
    l2: float = 0.0
    augment: bool = False
    dp: bool = False
    clip_norm: float = 1.0
    noise_multiplier: float = 1.0

    @property
    def active(self):
        return self.l2 > 0 or self.augment or self.dp


@dataclass
class EvalSection:
    plots: bool = True
    tsne_perplexity: float = 30.0
    tsne_iters: int = 1000
    utility_samples: int = 200


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    scenario: str = "FRFR"
    seed: int = 0
    cache_dir: str = ""
    corpus: CorpusSection = field(default_factory=CorpusSection)
    splits: SplitsSection = field(default_factory=SplitsSection)
    target: ModelSection = field(default_factory=ModelSection)
    shadow: ModelSection = field(default_factory=ModelSection)
    mfe: MfeSection = field(default_factory=MfeSection)
    attack: AttackSection = field(default_factory=AttackSection)
    defense: DefenseSection = field(default_factory=DefenseSection)
    eval: EvalSection = field(default_factory=EvalSection)

    @property
    def spec(self):
        return parse_scenario(self.scenario, self.attack.mode)

    def validate(self):
        if self.attack.mode not in ("mb", "fb", "both"):
            raise ConfigError(f"attack.mode must be mb, fb or both, not {self.attack.mode!r}")
        self.spec  # raises ParseError
        if self.attack.mb_classifier not in ("margin", "threshold"):
            raise ConfigError("attack.mb_classifier must be margin or threshold")
        if self.corpus.size < 2 * self.splits.n_member + 2 * self.splits.n_shadow:
            raise ConfigError("corpus.size is too small for the requested splits")
        return self


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError("unknown config key(s): " + ", ".join(f"{where}{k}" for k in unknown))
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[name] = _build(sub, value, f"{where}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def from_dict(data):
    return _build(ExperimentConfig, data, "").validate()


def load_config(path, seed=None):
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = from_dict(data or {})
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


def to_dict(cfg):
    return dataclasses.asdict(cfg)


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=True))
