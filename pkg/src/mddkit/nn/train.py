"""Training loop: Adam with gradient-norm clipping over summed per-utterance
CTC losses, per-epoch validation PER via greedy decoding, best-checkpoint
retention, and a line-oriented "epoch loss val_per" log.

Fully deterministic under a fixed seed: utterance order, dropout masks and
augmentation draws all derive from it, and augmentation is re-drawn each
epoch (freeze with augment_once) using per-utterance derived seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import ctc, metrics
from ..augment import AugmentPolicy, augment, derived_seed
from .model import ModelParams, apply_state, batch_loss_and_grad, forward, save_checkpoint


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    """Adam with global gradient-norm clipping."""

    def __init__(self, params: ModelParams, lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, clip_norm=5.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.values.items()}

    def step(self, params: ModelParams, grads: dict) -> None:
        if self.clip_norm and self.clip_norm > 0:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = {k: g * scale for k, g in grads.items()}
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        for key, value in params.values.items():
            g = grads[key]
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * (g * g)
            m_hat = self.m[key] / correction1
            v_hat = self.v[key] / correction2
            value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainItem:
    """One training example: features plus sentence input and CTC target.

    The sentence input is the canonical sequence (optionally augmented per
    epoch); the target is the actual (annotated) sequence — the model
    transcribes what was said while conditioned on what should have been.
    """

    utterance_id: str
    features: np.ndarray  # (T, input_dim), already stacked + normalized
    canonical: list[int]
    target: list[int]


@dataclass
class Hyper:
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 4
    seed: int = 0
    clip_norm: float = 5.0
    augment_policy: AugmentPolicy | None = None
    augment_once: bool = False
    confusion_table: dict | None = None


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_per: float | None


@dataclass
class TrainResult:
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_per: float | None = None


def validate_per(params: ModelParams, items: list[TrainItem]) -> float | None:
    """Greedy-decode PER against the target sequences."""
    errors = 0
    total = 0
    for item in items:
        trace = forward(params, item.features, item.canonical, mode="eval")
        hyp = ctc.greedy_decode(trace.logp, params.config.blank_id)
        errors += metrics.edit_distance(item.target, hyp)
        total += len(item.target)
    return errors / total if total else None


def train(
    params: ModelParams,
    train_items: list[TrainItem],
    val_items: list[TrainItem],
    hyper: Hyper,
    alphabet=None,
    checkpoint_path=None,
    log_path=None,
    on_epoch=None,
) -> TrainResult:
    """Run the optimization; returns per-epoch logs and keeps the best
    validation checkpoint (falling back to train loss when no validation
    set is given). NaN losses abort with a diagnostic."""
    if not train_items:
        raise ValueError("empty training set")
    if hyper.augment_policy is not None and hyper.augment_policy.strategy == "confusion_pair":
        if hyper.confusion_table is None:
            raise ValueError("confusion_pair augmentation needs a confusion table")

    optimizer = Adam(params, lr=hyper.lr, clip_norm=hyper.clip_norm)
    order_rng = np.random.default_rng(hyper.seed)
    dropout_rng = np.random.default_rng(derived_seed(hyper.seed, "dropout"))
    result = TrainResult()
    best_score = np.inf
    log_lines = []

    for epoch in range(1, hyper.epochs + 1):
        indices = order_rng.permutation(len(train_items))
        epoch_loss = 0.0
        n_scored = 0
        for start in range(0, len(indices), hyper.batch_size):
            batch = [train_items[i] for i in indices[start : start + hyper.batch_size]]
            sentences = []
            for item in batch:
                sentence = item.canonical
                if hyper.augment_policy is not None and hyper.augment_policy.rate > 0:
                    aug_epoch = 0 if hyper.augment_once else epoch
                    rng = np.random.default_rng(
                        derived_seed(hyper.augment_policy.seed, item.utterance_id, aug_epoch)
                    )
                    sentence = augment(
                        sentence, hyper.augment_policy, alphabet,
                        table=hyper.confusion_table, rng=rng,
                    )
                sentences.append(sentence)
            losses, grads, _traces, caches = batch_loss_and_grad(
                params,
                [item.features for item in batch],
                sentences,
                [item.target for item in batch],
                mode="train",
                rng=dropout_rng,
            )
            for item, loss in zip(batch, losses):
                if np.isnan(loss):
                    raise TrainingDiverged(
                        f"NaN loss at epoch {epoch}, utterance {item.utterance_id}"
                    )
                if not np.isinf(loss):
                    epoch_loss += loss
                    n_scored += 1
            if any(np.isfinite(loss) for loss in losses):
                apply_state(params, caches.new_state)
                optimizer.step(params, grads)

        mean_loss = epoch_loss / max(n_scored, 1)
        val_per = validate_per(params, val_items) if val_items else None
        result.log.append(EpochLog(epoch, mean_loss, val_per))
        score = val_per if val_per is not None else mean_loss
        line = f"{epoch} {mean_loss:.6f} {'' if val_per is None else format(val_per, '.6f')}".rstrip()
        log_lines.append(line)
        if score < best_score:
            best_score = score
            result.best_epoch = epoch
            result.best_val_per = val_per
            if checkpoint_path is not None:
                save_checkpoint(params, checkpoint_path)
        if on_epoch is not None:
            on_epoch(result.log[-1])

    if checkpoint_path is not None and result.best_epoch is None:
        save_checkpoint(params, checkpoint_path)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
            for line in log_lines:
                fh.write(line + "\n")
    return result
