"""The acoustic model: a CNN + bidirectional-LSTM audio encoder producing
per-frame queries, a phoneme-embedding + bidirectional-LSTM sentence encoder
producing keys and values, a scaled-dot-product attention decoder yielding
per-frame context vectors, and a batch-normalized linear head over
[context; query] scoring phonemes + blank per frame.

The baseline variant drops the sentence encoder and attention entirely and
projects the query straight to the output (a plain CNN-RNN-CTC model).

Training works on batches of whole utterances: recurrent and convolutional
passes run per utterance (no padding anywhere), while every batch-norm
computes its statistics jointly over all frames of the batch, exactly as a
padded-batch implementation would over valid frames. Duplicating an
utterance within a batch leaves those statistics unchanged, so its gradient
contribution doubles exactly. All parameters live in a flat name-addressed
store; gradients mirror it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import ctc
from . import layers

CHECKPOINT_MAGIC = b"MDDM1"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 42
    variant: str = "attention"  # attention | baseline_ctc
    input_dim: int = 243
    conv_channels: tuple[int, int] = (32, 32)
    conv_strides: tuple[tuple[int, int], ...] = ((1, 2), (2, 2))
    rnn_layers: int = 4
    rnn_hidden: int = 384
    embed_dim: int = 512
    sentence_hidden: int = 384
    dropout: float = 0.2

    def __post_init__(self):
        if self.variant not in ("attention", "baseline_ctc"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "attention" and self.rnn_hidden != self.sentence_hidden:
            # scaled dot-product attention needs matching key/query widths
            raise ValueError("attention variant requires rnn_hidden == sentence_hidden")

    @property
    def freq_after_convs(self) -> int:
        f = self.input_dim
        for _, sf in self.conv_strides:
            f = (f - 1) // sf + 1
        return f

    def frames_after_convs(self, T: int) -> int:
        for st, _ in self.conv_strides:
            T = (T - 1) // st + 1
        return T

    @property
    def rnn_input_dim(self) -> int:
        return self.conv_channels[-1] * self.freq_after_convs

    @property
    def query_dim(self) -> int:
        return 2 * self.rnn_hidden

    @property
    def value_dim(self) -> int:
        return 2 * self.sentence_hidden

    @property
    def head_dim(self) -> int:
        if self.variant == "attention":
            return self.query_dim + self.value_dim
        return self.query_dim

    @property
    def output_dim(self) -> int:
        return self.vocab_size + 1

    @property
    def blank_id(self) -> int:
        return self.vocab_size

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["conv_strides"] = [list(s) for s in self.conv_strides]
        doc["conv_channels"] = list(self.conv_channels)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        doc["conv_strides"] = tuple(tuple(s) for s in doc["conv_strides"])
        doc["conv_channels"] = tuple(doc["conv_channels"])
        return cls(**doc)


def param_shapes(config: ModelConfig):
    """Yield (name, shape, init kind) for every trainable parameter, in a
    fixed order. Kinds: glorot / conv_glorot / zeros / ones / embed."""
    c1, c2 = config.conv_channels
    yield "conv0.weight", (c1, 1, 3, 3), "conv_glorot"
    yield "conv0.bias", (c1,), "zeros"
    yield "conv0.bn.gamma", (c1,), "ones"
    yield "conv0.bn.beta", (c1,), "zeros"
    yield "conv1.weight", (c2, c1, 3, 3), "conv_glorot"
    yield "conv1.bias", (c2,), "zeros"
    yield "conv1.bn.gamma", (c2,), "ones"
    yield "conv1.bn.beta", (c2,), "zeros"

    h = config.rnn_hidden
    d_in = config.rnn_input_dim
    for layer in range(config.rnn_layers):
        prefix = f"audio_rnn{layer}"
        if layer > 0:
            yield f"{prefix}.bn.gamma", (2 * h,), "ones"
            yield f"{prefix}.bn.beta", (2 * h,), "zeros"
        for direction in ("fwd", "bwd"):
            yield f"{prefix}.{direction}.w_ih", (4 * h, d_in), "glorot"
            yield f"{prefix}.{direction}.w_hh", (4 * h, h), "glorot"
        d_in = 2 * h

    if config.variant == "attention":
        hs = config.sentence_hidden
        yield "embed.weight", (config.vocab_size, config.embed_dim), "embed"
        for direction in ("fwd", "bwd"):
            yield f"sent_rnn.{direction}.w_ih", (4 * hs, config.embed_dim), "glorot"
            yield f"sent_rnn.{direction}.w_hh", (4 * hs, hs), "glorot"
            yield f"sent_rnn.{direction}.b_ih", (4 * hs,), "zeros"
            yield f"sent_rnn.{direction}.b_hh", (4 * hs,), "zeros"
        yield "key_proj.weight", (config.value_dim, config.value_dim), "glorot"

    yield "out.bn.gamma", (config.head_dim,), "ones"
    yield "out.bn.beta", (config.head_dim,), "zeros"
    yield "out.weight", (config.output_dim, config.head_dim), "glorot"


def state_shapes(config: ModelConfig):
    """Non-trainable batch-norm running statistics."""
    c1, c2 = config.conv_channels
    yield "conv0.bn.mean", (c1,), "zeros"
    yield "conv0.bn.var", (c1,), "ones"
    yield "conv1.bn.mean", (c2,), "zeros"
    yield "conv1.bn.var", (c2,), "ones"
    for layer in range(1, config.rnn_layers):
        yield f"audio_rnn{layer}.bn.mean", (2 * config.rnn_hidden,), "zeros"
        yield f"audio_rnn{layer}.bn.var", (2 * config.rnn_hidden,), "ones"
    yield "out.bn.mean", (config.head_dim,), "zeros"
    yield "out.bn.var", (config.head_dim,), "ones"


def count_params(config: ModelConfig) -> int:
    """Total trainable scalar count for a configuration."""
    return sum(int(np.prod(shape)) for _, shape, _ in param_shapes(config))


class ModelParams:
    """Flat name-addressed parameter store with deterministic seeded init."""

    def __init__(self, config: ModelConfig, values: dict, state: dict):
        self.config = config
        self.values = values
        self.state = state

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        values: dict[str, np.ndarray] = {}
        for name, shape, kind in param_shapes(config):
            if kind == "zeros":
                values[name] = np.zeros(shape)
            elif kind == "ones":
                values[name] = np.ones(shape)
            elif kind == "embed":
                values[name] = rng.normal(0.0, 0.1, size=shape)
            elif kind == "conv_glorot":
                fan_in = shape[1] * shape[2] * shape[3]
                fan_out = shape[0] * shape[2] * shape[3]
                values[name] = layers.glorot_uniform(rng, shape, fan_in, fan_out)
            else:
                values[name] = layers.glorot_uniform(rng, shape, shape[1], shape[0])
        state = {
            name: (np.zeros(shape) if kind == "zeros" else np.ones(shape))
            for name, shape, kind in state_shapes(config)
        }
        return cls(config, values, state)

    def zero_grads(self) -> dict:
        return {name: np.zeros_like(v) for name, v in self.values.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: v.copy() for k, v in self.values.items()},
            {k: v.copy() for k, v in self.state.items()},
        )


@dataclass
class ForwardTrace:
    """Named activations of one utterance's forward pass."""

    h_q: np.ndarray
    logits: np.ndarray
    logp: np.ndarray
    h_v: np.ndarray | None = None
    h_k: np.ndarray | None = None
    attn: np.ndarray | None = None
    cv: np.ndarray | None = None
    batch: "BatchCaches | None" = None


@dataclass
class BatchCaches:
    """Backprop caches of one batched forward pass."""

    per_utt: list[dict] = field(default_factory=list)
    joint: dict = field(default_factory=dict)
    new_state: dict = field(default_factory=dict)


def _split(joined: np.ndarray, lengths: list[int]) -> list[np.ndarray]:
    out = []
    offset = 0
    for n in lengths:
        out.append(joined[offset : offset + n])
        offset += n
    return out


def _bn_joint(params, batch: BatchCaches, name: str, xs: list[np.ndarray], train: bool):
    """Batch-norm over the concatenated frames of every batch member."""
    lengths = [x.shape[0] for x in xs]
    joined = np.concatenate(xs, axis=0)
    out, cache, (new_mean, new_var) = layers.batch_norm_forward(
        joined,
        params.values[f"{name}.gamma"],
        params.values[f"{name}.beta"],
        params.state[f"{name}.mean"],
        params.state[f"{name}.var"],
        train,
    )
    batch.joint[name] = (cache, lengths)
    batch.new_state[f"{name}.mean"] = new_mean
    batch.new_state[f"{name}.var"] = new_var
    return _split(out, lengths)


def _bn_joint_backward(params, batch: BatchCaches, name: str, dxs: list[np.ndarray], grads):
    cache, lengths = batch.joint[name]
    djoined = np.concatenate(dxs, axis=0)
    dx, dgamma, dbeta = layers.batch_norm_backward(cache, djoined)
    grads[f"{name}.gamma"] += dgamma
    grads[f"{name}.beta"] += dbeta
    return _split(dx, lengths)


def _conv_to_frames(x: np.ndarray) -> np.ndarray:
    """(C, T, F) -> per-sample rows (T*F, C) for channel batch-norm."""
    c = x.shape[0]
    return x.transpose(1, 2, 0).reshape(-1, c)


def _frames_to_conv(rows: np.ndarray, shape) -> np.ndarray:
    c, t, f = shape
    return rows.reshape(t, f, c).transpose(2, 0, 1)


def forward_batch(
    params: ModelParams,
    feats: list[np.ndarray],
    sentences=None,
    mode: str = "eval",
    rng=None,
):
    """Run a batch of utterances through the model.

    Returns (traces, caches): one ForwardTrace per utterance and the shared
    backprop caches. Eval mode uses running batch-norm statistics, so it is
    deterministic and identical whether utterances are batched or not.
    """
    cfg = params.config
    train = mode == "train"
    B = len(feats)
    if cfg.variant == "attention":
        if sentences is None or len(sentences) != B or any(s is None for s in sentences):
            raise ValueError("attention variant requires one sentence per utterance")
    else:
        sentences = [None] * B

    batch = BatchCaches(per_utt=[{} for _ in range(B)])
    xs = []
    for u, feat in enumerate(feats):
        feat = np.asarray(feat, dtype=np.float64)
        if feat.ndim != 2 or feat.shape[1] != cfg.input_dim:
            raise ValueError(f"expected (T, {cfg.input_dim}) features, got {feat.shape}")
        if not np.all(np.isfinite(feat)):
            raise ValueError("non-finite values in input features")
        xs.append(feat[None, :, :])  # (1, T, F)

    for k in range(len(cfg.conv_channels)):
        rows = []
        for u in range(B):
            x, batch.per_utt[u][f"conv{k}"] = layers.conv2d_forward(
                xs[u],
                params.values[f"conv{k}.weight"],
                params.values[f"conv{k}.bias"],
                cfg.conv_strides[k],
            )
            batch.per_utt[u][f"conv{k}.shape"] = x.shape
            rows.append(_conv_to_frames(x))
        rows = _bn_joint(params, batch, f"conv{k}.bn", rows, train)
        for u in range(B):
            x = _frames_to_conv(rows[u], batch.per_utt[u][f"conv{k}.shape"])
            x, batch.per_utt[u][f"conv{k}.relu"] = layers.relu_forward(x)
            x, batch.per_utt[u][f"conv{k}.drop"] = layers.dropout_forward(
                x, cfg.dropout, train, rng
            )
            xs[u] = x

    hs = []
    for u in range(B):
        c, t_out, f_out = xs[u].shape
        batch.per_utt[u]["conv_out_shape"] = (c, t_out, f_out)
        hs.append(xs[u].transpose(1, 0, 2).reshape(t_out, c * f_out))

    for layer in range(cfg.rnn_layers):
        prefix = f"audio_rnn{layer}"
        if layer > 0:
            hs = _bn_joint(params, batch, f"{prefix}.bn", hs, train)
        fwd = (params.values[f"{prefix}.fwd.w_ih"], params.values[f"{prefix}.fwd.w_hh"])
        bwd = (params.values[f"{prefix}.bwd.w_ih"], params.values[f"{prefix}.bwd.w_hh"])
        for u in range(B):
            h, batch.per_utt[u][prefix] = layers.bilstm_forward(hs[u], fwd, bwd)
            h, batch.per_utt[u][f"{prefix}.drop"] = layers.dropout_forward(
                h, cfg.dropout, train, rng
            )
            hs[u] = h

    zs = []
    partial = []
    for u in range(B):
        h_q = hs[u]
        if cfg.variant == "attention":
            h_v, h_k, sent_caches = sentence_encode(params, sentences[u], mode)
            batch.per_utt[u]["sentence"] = sent_caches
            attn, cv, batch.per_utt[u]["attend"] = attend(h_q, h_k, h_v)
            zs.append(np.concatenate([cv, h_q], axis=1))
        else:
            h_v = h_k = attn = cv = None
            zs.append(h_q)
        partial.append((h_q, h_v, h_k, attn, cv))

    zs = _bn_joint(params, batch, "out.bn", zs, train)
    traces = []
    for u in range(B):
        logits, batch.per_utt[u]["out"] = layers.linear_forward(
            zs[u], params.values["out.weight"]
        )
        h_q, h_v, h_k, attn, cv = partial[u]
        traces.append(
            ForwardTrace(
                h_q=h_q, logits=logits, logp=ctc.log_softmax(logits),
                h_v=h_v, h_k=h_k, attn=attn, cv=cv,
            )
        )
    return traces, batch


def backward_batch(
    params: ModelParams,
    batch: BatchCaches,
    dlogits: list[np.ndarray | None],
    grads: dict,
) -> None:
    """Accumulate parameter gradients for a batched forward into `grads`.

    A None entry skips that utterance (infeasible CTC target)."""
    cfg = params.config
    B = len(batch.per_utt)
    dzs = []
    for u in range(B):
        caches = batch.per_utt[u]
        d = dlogits[u]
        if d is None:
            x_cached = caches["out"][0]
            dzs.append(np.zeros_like(x_cached))
            continue
        dz, dw_out, _ = layers.linear_backward(caches["out"], d)
        grads["out.weight"] += dw_out
        dzs.append(dz)
    dzs = _bn_joint_backward(params, batch, "out.bn", dzs, grads)

    dhs = []
    for u in range(B):
        caches = batch.per_utt[u]
        dz = dzs[u]
        if cfg.variant == "attention":
            dcv = dz[:, : cfg.value_dim]
            dh_q = dz[:, cfg.value_dim :].copy()
            dq_attn, dh_k, dh_v = _attend_backward(caches["attend"], None, dcv)
            dh_q += dq_attn
            _sentence_backward(params, caches["sentence"], dh_v, dh_k, grads)
        else:
            dh_q = dz
        dhs.append(dh_q)

    for layer in range(cfg.rnn_layers - 1, -1, -1):
        prefix = f"audio_rnn{layer}"
        for u in range(B):
            caches = batch.per_utt[u]
            dh = layers.dropout_backward(caches[f"{prefix}.drop"], dhs[u])
            dh, dfwd, dbwd = layers.bilstm_backward(caches[prefix], dh, with_bias=False)
            grads[f"{prefix}.fwd.w_ih"] += dfwd[0]
            grads[f"{prefix}.fwd.w_hh"] += dfwd[1]
            grads[f"{prefix}.bwd.w_ih"] += dbwd[0]
            grads[f"{prefix}.bwd.w_hh"] += dbwd[1]
            dhs[u] = dh
        if layer > 0:
            dhs = _bn_joint_backward(params, batch, f"{prefix}.bn", dhs, grads)

    dxs = []
    for u in range(B):
        c, t_out, f_out = batch.per_utt[u]["conv_out_shape"]
        dxs.append(dhs[u].reshape(t_out, c, f_out).transpose(1, 0, 2))

    for k in range(len(cfg.conv_channels) - 1, -1, -1):
        rows = []
        for u in range(B):
            caches = batch.per_utt[u]
            dx = layers.dropout_backward(caches[f"conv{k}.drop"], dxs[u])
            dx = layers.relu_backward(caches[f"conv{k}.relu"], dx)
            rows.append(_conv_to_frames(dx))
        rows = _bn_joint_backward(params, batch, f"conv{k}.bn", rows, grads)
        for u in range(B):
            caches = batch.per_utt[u]
            dx = _frames_to_conv(rows[u], caches[f"conv{k}.shape"])
            dx, dweight, dbias = layers.conv2d_backward(caches[f"conv{k}"], dx)
            grads[f"conv{k}.weight"] += dweight
            grads[f"conv{k}.bias"] += dbias
            dxs[u] = dx


def sentence_encode(params: ModelParams, ids, mode: str = "eval"):
    """Phoneme ids (N,) -> value (N, value_dim) and key (N, value_dim)."""
    cfg = params.config
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("sentence encoder needs a non-empty phoneme sequence")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError("sentence ids out of range")
    caches: dict = {}
    emb, caches["embed"] = layers.embedding_forward(ids, params.values["embed.weight"])
    fwd = tuple(params.values[f"sent_rnn.fwd.{k}"] for k in ("w_ih", "w_hh", "b_ih", "b_hh"))
    bwd = tuple(params.values[f"sent_rnn.bwd.{k}"] for k in ("w_ih", "w_hh", "b_ih", "b_hh"))
    h_v, caches["sent_rnn"] = layers.bilstm_forward(emb, fwd, bwd)
    h_k, caches["key_proj"] = layers.linear_forward(h_v, params.values["key_proj.weight"])
    return h_v, h_k, caches


def _sentence_backward(params: ModelParams, caches: dict, dh_v, dh_k, grads: dict):
    dv_from_key, dw_key, _ = layers.linear_backward(caches["key_proj"], dh_k)
    grads["key_proj.weight"] += dw_key
    dh_v = dh_v + dv_from_key
    demb, dfwd, dbwd = layers.bilstm_backward(caches["sent_rnn"], dh_v, with_bias=True)
    for direction, dws in (("fwd", dfwd), ("bwd", dbwd)):
        for key, dw in zip(("w_ih", "w_hh", "b_ih", "b_hh"), dws):
            grads[f"sent_rnn.{direction}.{key}"] += dw
    grads["embed.weight"] += layers.embedding_backward(caches["embed"], demb)


def context_vectors(attn: np.ndarray, h_v: np.ndarray) -> np.ndarray:
    """Per-frame weighted average of values: cv[t] = sum_n attn[t, n] h_v[n]."""
    return attn @ h_v


def attend(h_q: np.ndarray, h_k: np.ndarray, h_v: np.ndarray):
    """Scaled dot-product attention over sentence positions.

    score[t, n] = (h_k[n] . h_q[t]) / sqrt(key_dim); rows of the returned
    weight matrix are softmax-normalized over n.
    """
    scale = 1.0 / np.sqrt(h_k.shape[1])
    scores = (h_q @ h_k.T) * scale
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    attn = exp / exp.sum(axis=1, keepdims=True)
    cv = context_vectors(attn, h_v)
    cache = (attn, h_q, h_k, h_v, scale)
    return attn, cv, cache


def _attend_backward(cache, dattn_out, dcv):
    attn, h_q, h_k, h_v, scale = cache
    dattn = dcv @ h_v.T
    if dattn_out is not None:
        dattn = dattn + dattn_out
    dh_v = attn.T @ dcv
    dscores = attn * (dattn - (dattn * attn).sum(axis=1, keepdims=True))
    dh_q = dscores @ h_k * scale
    dh_k = dscores.T @ h_q * scale
    return dh_q, dh_k, dh_v


def audio_encode(params: ModelParams, feat: np.ndarray, mode: str = "eval", rng=None):
    """Stacked features (T, input_dim) -> per-frame queries (T', query_dim).

    Exposed for inspection and tests; forward_batch runs the same layers."""
    cfg = params.config
    train = mode == "train"
    batch = BatchCaches(per_utt=[{}])
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim != 2 or feat.shape[1] != cfg.input_dim:
        raise ValueError(f"expected (T, {cfg.input_dim}) features, got {feat.shape}")
    if not np.all(np.isfinite(feat)):
        raise ValueError("non-finite values in input features")
    x = feat[None, :, :]
    for k in range(len(cfg.conv_channels)):
        x, batch.per_utt[0][f"conv{k}"] = layers.conv2d_forward(
            x, params.values[f"conv{k}.weight"], params.values[f"conv{k}.bias"],
            cfg.conv_strides[k],
        )
        shape = x.shape
        rows = _bn_joint(params, batch, f"conv{k}.bn", [_conv_to_frames(x)], train)
        x = _frames_to_conv(rows[0], shape)
        x, _ = layers.relu_forward(x)
        x, _ = layers.dropout_forward(x, cfg.dropout, train, rng)
    c, t_out, f_out = x.shape
    h = x.transpose(1, 0, 2).reshape(t_out, c * f_out)
    for layer in range(cfg.rnn_layers):
        prefix = f"audio_rnn{layer}"
        if layer > 0:
            h = _bn_joint(params, batch, f"{prefix}.bn", [h], train)[0]
        fwd = (params.values[f"{prefix}.fwd.w_ih"], params.values[f"{prefix}.fwd.w_hh"])
        bwd = (params.values[f"{prefix}.bwd.w_ih"], params.values[f"{prefix}.bwd.w_hh"])
        h, _ = layers.bilstm_forward(h, fwd, bwd)
        h, _ = layers.dropout_forward(h, cfg.dropout, train, rng)
    return h


def apply_state(params: ModelParams, new_state: dict) -> None:
    """Fold the batch-norm running statistics of a training forward in."""
    for name, value in new_state.items():
        params.state[name] = value


def forward(
    params: ModelParams,
    feat: np.ndarray,
    sentence=None,
    mode: str = "eval",
    rng=None,
) -> ForwardTrace:
    """Single-utterance forward pass (a batch of one)."""
    sentences = [sentence] if params.config.variant == "attention" else None
    traces, batch = forward_batch(params, [feat], sentences, mode, rng)
    trace = traces[0]
    trace.batch = batch
    return trace


def loss_and_grad(
    params: ModelParams,
    feat: np.ndarray,
    sentence,
    target,
    mode: str = "train",
    rng=None,
    grads: dict | None = None,
):
    """CTC loss of `target` plus exact parameter gradients for one utterance.

    Returns (loss, grads, trace). An infeasible target (longer than the
    downsampled frame count can emit) yields loss=inf with untouched grads;
    the caller skips the utterance.
    """
    losses, grads, traces, batch = batch_loss_and_grad(
        params, [feat], [sentence], [target], mode=mode, rng=rng, grads=grads
    )
    traces[0].batch = batch
    return losses[0], grads, traces[0]


def batch_loss_and_grad(
    params: ModelParams,
    feats: list,
    sentences: list,
    targets: list,
    mode: str = "train",
    rng=None,
    grads: dict | None = None,
):
    """Summed CTC loss and gradients over a batch of utterances.

    Batch-norm statistics are computed jointly over the batch; per-utterance
    losses come back individually (inf marks an infeasible target, which
    contributes nothing to the gradient). The updated running statistics sit
    in the returned BatchCaches until applied with apply_state().
    """
    cfg = params.config
    if grads is None:
        grads = params.zero_grads()
    traces, batch = forward_batch(
        params, feats, sentences if cfg.variant == "attention" else None, mode, rng
    )
    losses = []
    dlogits: list[np.ndarray | None] = []
    for trace, target in zip(traces, targets):
        result = ctc.ctc_loss(trace.logits, target, cfg.blank_id)
        losses.append(result.loss)
        dlogits.append(result.grad if result.feasible else None)
    if any(d is not None for d in dlogits):
        backward_batch(params, batch, dlogits, grads)
    return losses, grads, traces, batch


# ---------------------------------------------------------------------------
# checkpoints: magic "MDDM1", JSON config echo, named float64 blobs

def save_checkpoint(params: ModelParams, path) -> None:
    config_blob = json.dumps(params.config.to_json(), sort_keys=True).encode("utf-8")
    blobs = [(name, params.values[name]) for name in sorted(params.values)]
    blobs += [("state:" + name, params.state[name]) for name in sorted(params.state)]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(blobs)))
        for name, arr in blobs:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        (config_len,) = struct.unpack("<I", fh.read(4))
        config = ModelConfig.from_json(json.loads(fh.read(config_len).decode("utf-8")))
        (n_blobs,) = struct.unpack("<I", fh.read(4))
        values: dict[str, np.ndarray] = {}
        state: dict[str, np.ndarray] = {}
        for _ in range(n_blobs):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).copy()
            if name.startswith("state:"):
                state[name[len("state:"):]] = arr
            else:
                values[name] = arr
    expected = {name for name, _, _ in param_shapes(config)}
    if set(values) != expected:
        raise ValueError(f"{path}: checkpoint parameters do not match its config")
    return ModelParams(config, values, state)
