"""From-scratch neural acoustic model: layer primitives (`layers`), model
assembly and checkpoints (`model`), and the training loop (`train`)."""

from .model import ModelConfig, ModelParams, count_params  # noqa: F401
