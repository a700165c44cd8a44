import numpy as np
import pytest

from mddkit import ctc
from mddkit.nn.model import (
    ModelConfig,
    ModelParams,
    apply_state,
    attend,
    audio_encode,
    batch_loss_and_grad,
    context_vectors,
    count_params,
    forward,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    sentence_encode,
)

TINY = ModelConfig(
    vocab_size=4,
    conv_channels=(2, 2),
    rnn_layers=2,
    rnn_hidden=8,
    embed_dim=6,
    sentence_hidden=8,
    dropout=0.0,
    input_dim=24,
)


@pytest.fixture
def tiny_params():
    return ModelParams.init(TINY, seed=1)


# ---------------------------------------------------------------------------
# configuration arithmetic

def test_paper_parameter_count_exact():
    assert count_params(ModelConfig()) == 21_246_432


def test_first_audio_lstm_size():
    cfg = ModelConfig()
    # bias-free bidirectional LSTM over the flattened conv output
    assert cfg.rnn_input_dim == 1952
    assert 2 * 4 * 384 * (1952 + 384) == 7_176_192


def test_embedding_size():
    assert 42 * 512 == 21_504


def test_frequency_downsampling_chain():
    cfg = ModelConfig()
    assert cfg.input_dim == 243
    assert cfg.freq_after_convs == 61  # 243 -> 122 -> 61
    assert cfg.rnn_input_dim == 32 * 61


@pytest.mark.parametrize("T,expected", [(1, 1), (2, 1), (3, 2), (100, 50), (101, 51)])
def test_time_downsampling_formula(T, expected):
    cfg = ModelConfig()
    assert cfg.frames_after_convs(T) == (T - 1) // 2 + 1 == expected


def test_attention_variant_needs_matching_widths():
    with pytest.raises(ValueError, match="rnn_hidden"):
        ModelConfig(rnn_hidden=384, sentence_hidden=256)


def test_baseline_variant_has_fewer_params():
    full = count_params(ModelConfig())
    base = count_params(ModelConfig(variant="baseline_ctc", sentence_hidden=384))
    assert base < full


# ---------------------------------------------------------------------------
# encoders and attention

def test_audio_encode_shapes(tiny_params, rng):
    for T in (1, 7, 20):
        h = audio_encode(tiny_params, rng.normal(size=(T, 24)), mode="eval")
        assert h.shape == (TINY.frames_after_convs(T), TINY.query_dim)


def test_audio_encode_zero_input_finite(tiny_params):
    h = audio_encode(tiny_params, np.zeros((6, 24)), mode="eval")
    assert np.all(np.isfinite(h))


def test_audio_encode_rejects_nonfinite(tiny_params):
    bad = np.zeros((4, 24))
    bad[1, 3] = np.nan
    with pytest.raises(ValueError, match="finite"):
        audio_encode(tiny_params, bad)


def test_sentence_encode_shapes(tiny_params):
    h_v, h_k, _ = sentence_encode(tiny_params, [0])
    assert h_v.shape == (1, TINY.value_dim)
    assert h_k.shape == (1, TINY.value_dim)


def test_sentence_encode_key_is_linear_of_value(tiny_params):
    h_v, h_k, _ = sentence_encode(tiny_params, [0, 1, 3])
    w = tiny_params.values["key_proj.weight"]
    assert np.allclose(h_k, h_v @ w.T)


def test_sentence_encode_order_sensitive(tiny_params):
    a, _, _ = sentence_encode(tiny_params, [0, 1])
    b, _, _ = sentence_encode(tiny_params, [1, 0])
    assert not np.allclose(a, b)


def test_sentence_encode_rejects_empty(tiny_params):
    with pytest.raises(ValueError, match="non-empty"):
        sentence_encode(tiny_params, [])


def test_attend_paper_weighted_sum_example():
    """Worked example: weights [0.3, 0.2, 0.2, 0.3] over basis-vector values
    combine to exactly 0.3 h1 + 0.2 h2 + 0.2 h3 + 0.3 h4."""
    weights = np.array([[0.3, 0.2, 0.2, 0.3]])
    h = np.eye(4)
    cv = context_vectors(weights, h)
    expected = 0.3 * h[0] + 0.2 * h[1] + 0.2 * h[2] + 0.3 * h[3]
    assert np.array_equal(cv[0], expected)
    assert np.array_equal(cv[0], weights[0])


def test_attend_softmax_recovers_forced_weights():
    target = np.array([0.3, 0.2, 0.2, 0.3])
    h_k = np.eye(4)
    dim = 4
    # logits chosen so softmax reproduces the target weights
    h_q = (np.log(target) * np.sqrt(dim))[None, :]
    attn, cv, _ = attend(h_q, h_k, np.eye(4))
    assert np.allclose(attn[0], target, atol=1e-12)
    assert np.allclose(cv[0], target, atol=1e-12)


def test_attend_uniform_when_scores_equal(rng):
    h_q = np.zeros((3, 8))
    h_k = rng.normal(size=(5, 8))
    attn, cv, _ = attend(h_q, h_k, rng.normal(size=(5, 8)))
    assert np.allclose(attn, 1.0 / 5.0)


def test_attend_single_position(tiny_params, rng):
    h_q = rng.normal(size=(4, 6))
    h_v = rng.normal(size=(1, 6))
    attn, cv, _ = attend(h_q, rng.normal(size=(1, 6)), h_v)
    assert np.allclose(attn, 1.0)
    assert np.allclose(cv, np.repeat(h_v, 4, axis=0))


def test_attention_rows_sum_to_one(tiny_params, rng):
    trace = forward(tiny_params, rng.normal(size=(9, 24)), [0, 2, 1], mode="eval")
    assert np.abs(trace.attn.sum(axis=1) - 1).max() < 1e-6
    assert np.all(trace.attn >= 0)


# ---------------------------------------------------------------------------
# forward

def test_forward_output_shape_and_normalization(tiny_params, rng):
    trace = forward(tiny_params, rng.normal(size=(10, 24)), [0, 1], mode="eval")
    T_prime = TINY.frames_after_convs(10)
    assert trace.logp.shape == (T_prime, TINY.output_dim)
    log_norm = np.log(np.exp(trace.logp).sum(axis=1))
    assert np.abs(log_norm).max() < 1e-5


def test_forward_variants_differ(rng):
    feat = rng.normal(size=(8, 24))
    att = ModelParams.init(TINY, seed=3)
    base_cfg = ModelConfig(**{**TINY.__dict__, "variant": "baseline_ctc"})
    base = ModelParams.init(base_cfg, seed=3)
    t_att = forward(att, feat, [0, 1], mode="eval")
    t_base = forward(base, feat, mode="eval")
    assert t_att.logp.shape == t_base.logp.shape
    assert not np.allclose(t_att.logp, t_base.logp)


def test_forward_attention_requires_sentence(tiny_params, rng):
    with pytest.raises(ValueError, match="sentence"):
        forward(tiny_params, rng.normal(size=(6, 24)), None, mode="eval")


def test_eval_mode_deterministic(tiny_params, rng):
    feat = rng.normal(size=(12, 24))
    a = forward(tiny_params, feat, [1, 2], mode="eval")
    b = forward(tiny_params, feat, [1, 2], mode="eval")
    assert np.array_equal(a.logp, b.logp)


# ---------------------------------------------------------------------------
# loss and gradients

def test_full_model_gradient_check(rng):
    """Central finite differences over random coordinates of every parameter,
    both variants, train mode (batch statistics)."""
    for variant in ("attention", "baseline_ctc"):
        cfg = ModelConfig(**{**TINY.__dict__, "variant": variant})
        params = ModelParams.init(cfg, seed=1)
        feat = rng.normal(size=(8, 24))
        sentence = [0, 1, 2]
        target = [1, 2]

        def total():
            loss, _, _ = loss_and_grad(params, feat, sentence, target, mode="train")
            return loss

        loss0, grads, _ = loss_and_grad(params, feat, sentence, target, mode="train")
        assert np.isfinite(loss0) and loss0 >= 0
        eps = 1e-4
        for name, value in params.values.items():
            flat = value.ravel()
            g = grads[name].ravel()
            for i in rng.integers(flat.size, size=min(3, flat.size)):
                orig = flat[i]
                flat[i] = orig + eps
                up = total()
                flat[i] = orig - eps
                down = total()
                flat[i] = orig
                fd = (up - down) / (2 * eps)
                assert abs(fd - g[i]) <= 1e-7 + 1e-3 * max(abs(fd), abs(g[i])), (
                    variant, name, i,
                )


def test_duplicated_utterance_doubles_gradient(tiny_params, rng):
    feat = rng.normal(size=(9, 24))
    sentence = [0, 3]
    target = [2]
    _, single, _, _ = batch_loss_and_grad(tiny_params, [feat], [sentence], [target])
    _, double, _, _ = batch_loss_and_grad(
        tiny_params, [feat, feat], [sentence, sentence], [target, target]
    )
    for name in single:
        assert np.allclose(double[name], 2 * single[name], atol=1e-12), name


def test_infeasible_target_skipped(tiny_params, rng):
    feat = rng.normal(size=(2, 24))  # T'=1 cannot emit 3 phonemes
    loss, grads, _ = loss_and_grad(tiny_params, feat, [0, 1, 2], [0, 1, 2])
    assert np.isinf(loss)
    assert all(np.all(g == 0) for g in grads.values())


def test_overfit_single_utterance_separates_targets(rng):
    """Train to convergence on one utterance; the true target must then score
    strictly better than a deliberately wrong one."""
    from mddkit.nn.train import Adam

    params = ModelParams.init(TINY, seed=5)
    feat = rng.normal(size=(12, 24))
    sentence = [0, 1, 2]
    truth = [0, 1, 2]
    wrong = [3, 3]
    optimizer = Adam(params, lr=5e-3)
    for _ in range(150):
        loss, grads, trace = loss_and_grad(params, feat, sentence, truth, mode="train")
        apply_state(params, trace.batch.new_state)
        optimizer.step(params, grads)
    final_true, _, _ = loss_and_grad(params, feat, sentence, truth, mode="train")
    final_wrong, _, _ = loss_and_grad(params, feat, sentence, wrong, mode="train")
    assert final_true < 0.1
    assert final_wrong > final_true


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_roundtrip(tiny_params, tmp_path, rng):
    feat = rng.normal(size=(10, 24))
    before = forward(tiny_params, feat, [0, 1], mode="eval")
    path = tmp_path / "model.ckpt"
    save_checkpoint(tiny_params, path)
    loaded = load_checkpoint(path)
    assert loaded.config == TINY
    after = forward(loaded, feat, [0, 1], mode="eval")
    assert np.array_equal(before.logp, after.logp)


def test_checkpoint_deterministic_bytes(tiny_params, tmp_path):
    save_checkpoint(tiny_params, tmp_path / "a.ckpt")
    save_checkpoint(tiny_params, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_magic_validated(tmp_path):
    (tmp_path / "bogus.ckpt").write_bytes(b"WRONGMAGICxxxx")
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "bogus.ckpt")


def test_init_deterministic():
    a = ModelParams.init(TINY, seed=9)
    b = ModelParams.init(TINY, seed=9)
    for name in a.values:
        assert np.array_equal(a.values[name], b.values[name])
    c = ModelParams.init(TINY, seed=10)
    assert any(not np.array_equal(a.values[n], c.values[n]) for n in a.values)
