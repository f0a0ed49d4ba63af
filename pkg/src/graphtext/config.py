"""Run configuration: one INI-style file with a section per component.

Every key has a default; unknown sections and keys are rejected.  Example::

    [pretrain]
    epochs = 3
    lr = 2e-5
    loss_terms = L1,L2,L3

    [prompt]
    prompt_len = 4
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .contrastive import parse_loss_terms
from .graph_encoder import GraphEncoderConfig
from .pretrain import PretrainConfig
from .prompt import PromptConfig
from .tasks import SynthConfig
from .text_encoder import TextEncoderConfig


class ConfigError(ValueError):
    pass


@dataclass
class CorpusConfig:
    max_len: int = 128
    min_freq: int = 2
    embedding_dim: int = 128
    seed: int = 0


@dataclass
class GraphSection:
    hidden_dim: int = 128


@dataclass
class TaskConfig:
    ways: int = 5
    shots: int = 5
    tasks: int = 20
    query_cap: int = 200
    seed: int = 1
    template: str = ""
    init: str = "context"


# keys derived from other sections or from the corpus
_DERIVED = {"text_encoder": {"vocab_size", "max_len"}, "pretrain": {"checkpoint"}}


@dataclass
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    text_encoder: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    graph_encoder: GraphSection = field(default_factory=GraphSection)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    tasks: TaskConfig = field(default_factory=TaskConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def text_config(self, vocab_size: int) -> TextEncoderConfig:
        cfg = TextEncoderConfig(**{**self.text_encoder.__dict__, "vocab_size": vocab_size,
                                   "max_len": self.corpus.max_len})
        cfg.validate()
        return cfg

    def graph_config(self, feature_dim: int) -> GraphEncoderConfig:
        return GraphEncoderConfig(feature_dim, self.graph_encoder.hidden_dim, self.text_encoder.output_dim)

    def validate(self) -> None:
        try:
            TextEncoderConfig(**{**self.text_encoder.__dict__, "vocab_size": 2}).validate()
            self.pretrain.validate()
            self.prompt.validate()
            self.synth.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.corpus.max_len < 1 or self.corpus.min_freq < 1 or self.corpus.embedding_dim < 1:
            raise ConfigError("corpus max_len, min_freq and embedding_dim must be positive")
        if self.graph_encoder.hidden_dim < 1:
            raise ConfigError("graph_encoder hidden_dim must be positive")
        if self.tasks.ways < 1 or self.tasks.tasks < 1:
            raise ConfigError("tasks ways and tasks must be positive")


def _coerce(section: str, key: str, default, value: str):
    try:
        if key == "loss_terms":
            return parse_loss_terms(value)
        if isinstance(default, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def load_config(path=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            if not hasattr(cfg, section):
                raise ConfigError(f"{path}: unknown section [{section}]")
            target = getattr(cfg, section)
            allowed = {f.name for f in fields(target)} - _DERIVED.get(section, set())
            for key, value in parser.items(section):
                if key not in allowed:
                    raise ConfigError(f"{path}: unknown key '{key}' in [{section}]")
                setattr(target, key, _coerce(section, key, getattr(target, key), value))
    cfg.validate()
    return cfg
