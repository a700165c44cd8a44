"""Pipeline configuration: flat key=value text with [sections], overridable
by command-line flags (flag wins). One seed drives every stage; stage-local
seeds are derived by stable hashing so a single number reproduces a run.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields


class ValidationError(ValueError):
    """Configuration or input validation failure (CLI exit code 2)."""


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {text!r}")


@dataclass
class PipelineConfig:
    # paths
    corpus_dir: str = ""
    work_dir: str = "work"
    alphabet: str = ""  # empty -> shipped default inventory
    confusion_table: str = ""  # empty -> shipped default table

    # features
    sample_rate: int = 16000
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    num_filters: int = 80
    norm_vars: bool = True

    # model
    variant: str = "attention"
    conv_channels: tuple[int, int] = (32, 32)
    rnn_layers: int = 4
    rnn_hidden: int = 384
    embed_dim: int = 512
    sentence_hidden: int = 384
    dropout: float = 0.2

    # train
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 4
    clip_norm: float = 5.0

    # augment
    strategy: str = "none"
    rate: float = 0.0
    augment_once: bool = False

    # lm
    order: int = 2
    smoothing: str = "witten_bell"

    # decode
    beam: int = 8
    lm_weight: float = 0.5
    insertion_bonus: float = 0.0
    use_lm: bool = True

    # run
    seed: int = 0
    threads: int = 1

    _sections: dict = field(
        default_factory=lambda: {
            "paths": ("corpus_dir", "work_dir", "alphabet", "confusion_table"),
            "features": (
                "sample_rate",
                "frame_length_ms",
                "frame_shift_ms",
                "num_filters",
                "norm_vars",
            ),
            "model": (
                "variant",
                "conv_channels",
                "rnn_layers",
                "rnn_hidden",
                "embed_dim",
                "sentence_hidden",
                "dropout",
            ),
            "train": ("lr", "epochs", "batch_size", "clip_norm"),
            "augment": ("strategy", "rate", "augment_once"),
            "lm": ("order", "smoothing"),
            "decode": ("beam", "lm_weight", "insertion_bonus", "use_lm"),
            "run": ("seed", "threads"),
        },
        repr=False,
    )

    def _set(self, key: str, raw: str) -> None:
        spec = {f.name: f for f in fields(self)}
        if key not in spec or key.startswith("_"):
            raise ValidationError(f"unknown config key {key!r}")
        current = getattr(self, key)
        if isinstance(current, bool):
            value = _bool(raw)
        elif isinstance(current, int):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        elif isinstance(current, tuple):
            value = tuple(int(x) for x in raw.replace(",", " ").split())
        else:
            value = raw.strip()
        setattr(self, key, value)

    def apply_override(self, item: str) -> None:
        """Apply one "section.key=value" (or "key=value") override."""
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip().split(".")[-1]
        self._set(key, raw)

    def validate(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise ValidationError(f"augment rate {self.rate} outside [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout {self.dropout} outside [0, 1)")
        if self.beam < 1:
            raise ValidationError(f"beam width {self.beam} must be >= 1")
        if self.threads < 1:
            raise ValidationError(f"threads {self.threads} must be >= 1")
        if self.variant not in ("attention", "baseline_ctc"):
            raise ValidationError(f"unknown model variant {self.variant!r}")
        if self.strategy not in ("none", "random", "vowel_consonant", "confusion_pair"):
            raise ValidationError(f"unknown augmentation strategy {self.strategy!r}")

    def dump(self) -> str:
        """Fully resolved configuration, defaults materialized."""
        out = io.StringIO()
        for section, keys in self._sections.items():
            out.write(f"[{section}]\n")
            for key in keys:
                value = getattr(self, key)
                if isinstance(value, bool):
                    text = "true" if value else "false"
                elif isinstance(value, tuple):
                    text = ",".join(str(v) for v in value)
                else:
                    text = str(value)
                out.write(f"{key} = {text}\n")
            out.write("\n")
        return out.getvalue().rstrip("\n") + "\n"


def load_config(path: str | None, overrides=()) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        if not os.path.isfile(path):
            raise ValidationError(f"config file {path!r} not found")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ValidationError(f"cannot parse {path!r}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg._set(key, raw)
    for item in overrides or ():
        cfg.apply_override(item)
    cfg.validate()
    return cfg
