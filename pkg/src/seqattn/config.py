"""Experiment configuration, read from JSON with strict key checking.

Schema::

    {
      "task":  {kind, vocab, min_len, max_len, rate, noise, seed, primary_dim, secondary_dim, ending_tail},
      "model": {embed_dim, enc_hidden, enc_layers, reduction, dec_hidden, dec_layers, scorer, attn_dim,
                order, filter_widths, filter_channels, ctx_dim, location_width, location_channels,
                mlp_bias, f_activation, g_activation, frames_per_step, prenet_dim},
      "lr", "beta1", "beta2", "eps", "clip_norm", "batch_size", "epochs", "train_size",
      "dev_size", "seed", "precision", "output_dir", "dev_beam", "stop_threshold", "keep_all_checkpoints"
    }

Task-dependent model fields (vocabularies, frame widths, input/output kinds) are
filled in from the task and may not be set by hand.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .model import ModelConfig
from .tasks import SyntheticTaskSpec
from .tensor import ConfigurationError

# ModelConfig fields derived from the task
DERIVED_MODEL_FIELDS = ("input_kind", "input_vocab", "input_dim", "output_kind", "output_vocab",
                        "primary_dim", "secondary_dim", "dtype")


@dataclass
class TrainConfig:
    task: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None
    batch_size: int = 32
    epochs: int = 10
    train_size: int = 2000
    dev_size: int = 100
    seed: int = 0
    precision: str = "float64"
    output_dir: str = "runs/default"
    dev_beam: int = 1
    stop_threshold: float = 0.5
    keep_all_checkpoints: bool = False

    def resolved_model(self):
        """ModelConfig with the task-dependent fields filled in."""
        t = self.task
        m = dataclasses.replace(self.model, dtype=self.precision)
        if t.kind in ("copy", "reverse"):
            m = dataclasses.replace(m, input_kind="symbols", input_vocab=t.model_vocab,
                                    output_kind="symbols", output_vocab=t.model_vocab)
        elif t.kind == "frames-to-symbols":
            m = dataclasses.replace(m, input_kind="frames", input_dim=t.input_dim,
                                    output_kind="symbols", output_vocab=t.model_vocab)
        else:
            m = dataclasses.replace(m, input_kind="symbols", input_vocab=t.model_vocab, output_kind="frames",
                                    primary_dim=t.primary_dim, secondary_dim=t.secondary_dim)
        return m

    def validate(self):
        self.task.validate()
        self.resolved_model().validate()
        if self.batch_size < 1 or self.epochs < 0 or self.train_size < 1 or self.dev_size < 0:
            raise ConfigurationError("batch_size, train_size must be >= 1 and epochs, dev_size >= 0")
        if self.precision not in ("float64", "float32"):
            raise ConfigurationError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.dev_beam < 1:
            raise ConfigurationError(f"dev_beam must be >= 1, got {self.dev_beam}")
        if self.task.kind in ("copy", "reverse") and self.task.min_len < self.model.reduction:
            raise ConfigurationError(f"min_len {self.task.min_len} is shorter than the reduction {self.model.reduction}")
        if self.task.kind == "frames-to-symbols" and self.task.min_len * self.task.rate < self.model.reduction:
            raise ConfigurationError("shortest frame input is shorter than the reduction factor")
        return self

    def to_dict(self):
        d = {
            "task": self.task.to_dict(),
            "model": {k: v for k, v in self.model.to_dict().items() if k not in DERIVED_MODEL_FIELDS},
        }
        for f in dataclasses.fields(self):
            if f.name not in ("task", "model"):
                d[f.name] = getattr(self, f.name)
        return d


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    if cls is ModelConfig:
        bad = sorted(set(data) & set(DERIVED_MODEL_FIELDS))
        if bad:
            raise ConfigurationError(f"{where}: {bad} are derived from the task and cannot be set")
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {unknown}")
    return data


def config_from_dict(data):
    _strict(TrainConfig, data, "config")
    data = dict(data)
    task = SyntheticTaskSpec(**_strict(SyntheticTaskSpec, data.pop("task", {}), "config.task"))
    model = ModelConfig(**_strict(ModelConfig, data.pop("model", {}), "config.model"))
    cfg = TrainConfig(task=task, model=model, **data)
    return cfg.validate()


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def task_from_dict(data):
    return SyntheticTaskSpec(**_strict(SyntheticTaskSpec, data, "task")).validate()
