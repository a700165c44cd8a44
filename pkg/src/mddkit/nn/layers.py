"""Neural layer primitives in float64 numpy with exact analytic backward
passes: conv2d, batch norm, (bidirectional) LSTM, embedding, linear,
dropout, ReLU. Every backward here is verified against central finite
differences in the test suite.

Layout conventions: conv activations are (channels, time, freq);
everything downstream is (time, features). Forward functions return
(output, cache); backward functions consume (cache, upstream grad) and
return input/parameter gradients.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# conv2d, kernel 3x3, padding 1

def conv2d_forward(x, weight, bias, stride):
    """x: (C_in, T, F); weight: (C_out, C_in, 3, 3); stride: (st, sf).

    Output time length is floor((T-1)/st)+1 (same-padding geometry), and
    likewise for frequency.
    """
    c_in, T, F = x.shape
    c_out, _, kh, kw = weight.shape
    st, sf = stride
    t_out = (T - 1) // st + 1
    f_out = (F - 1) // sf + 1

    xp = np.zeros((c_in, T + 2, F + 2))
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((c_in, kh, kw, t_out, f_out))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + st * (t_out - 1) + 1 : st, j : j + sf * (f_out - 1) + 1 : sf]
    cols2 = cols.reshape(c_in * kh * kw, t_out * f_out)
    out = weight.reshape(c_out, -1) @ cols2 + bias[:, None]
    cache = (cols2, xp.shape, x.shape, weight, stride)
    return out.reshape(c_out, t_out, f_out), cache


def conv2d_backward(cache, dout):
    cols2, xp_shape, x_shape, weight, stride = cache
    c_out = dout.shape[0]
    st, sf = stride
    c_in, kh, kw = weight.shape[1:]
    t_out, f_out = dout.shape[1:]
    dflat = dout.reshape(c_out, -1)

    dweight = (dflat @ cols2.T).reshape(weight.shape)
    dbias = dflat.sum(axis=1)
    dcols = (weight.reshape(c_out, -1).T @ dflat).reshape(c_in, kh, kw, t_out, f_out)

    dxp = np.zeros(xp_shape)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + st * (t_out - 1) + 1 : st, j : j + sf * (f_out - 1) + 1 : sf] += dcols[
                :, i, j
            ]
    dx = dxp[:, 1 : 1 + x_shape[1], 1 : 1 + x_shape[2]]
    return dx, dweight, dbias


# ---------------------------------------------------------------------------
# batch normalization over (N samples, C channels)

def batch_norm_forward(x, gamma, beta, running_mean, running_var, train):
    """Returns (out, cache, updated running stats). Train mode normalizes by
    batch statistics (biased variance) and folds the batch into the running
    estimates with momentum 0.1; eval mode uses the running statistics."""
    if train:
        n = x.shape[0]
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mu) * inv_std
        unbiased = var * (n / (n - 1)) if n > 1 else var
        new_mean = (1 - BN_MOMENTUM) * running_mean + BN_MOMENTUM * mu
        new_var = (1 - BN_MOMENTUM) * running_var + BN_MOMENTUM * unbiased
        cache = ("train", xhat, inv_std, gamma)
        return gamma * xhat + beta, cache, (new_mean, new_var)
    inv_std = 1.0 / np.sqrt(running_var + BN_EPS)
    xhat = (x - running_mean) * inv_std
    cache = ("eval", xhat, inv_std, gamma)
    return gamma * xhat + beta, cache, (running_mean, running_var)


def batch_norm_backward(cache, dout):
    mode, xhat, inv_std, gamma = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if mode == "eval":
        return dxhat * inv_std, dgamma, dbeta
    n = xhat.shape[0]
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# LSTM (PyTorch gate order i, f, g, o; optional twin biases)

def lstm_forward(x, w_ih, w_hh, b_ih=None, b_hh=None):
    """x: (T, D_in) -> hidden states (T, H); zero initial state."""
    T = x.shape[0]
    H = w_hh.shape[1]
    pre = x @ w_ih.T
    if b_ih is not None:
        pre = pre + b_ih
    if b_hh is not None:
        pre = pre + b_hh
    i_all = np.empty((T, H))
    f_all = np.empty((T, H))
    g_all = np.empty((T, H))
    o_all = np.empty((T, H))
    c_all = np.empty((T, H))
    tanh_c = np.empty((T, H))
    h_prev_all = np.empty((T, H))
    c_prev_all = np.empty((T, H))
    h = np.zeros(H)
    c = np.zeros(H)
    out = np.empty((T, H))
    for t in range(T):
        h_prev_all[t] = h
        c_prev_all[t] = c
        z = pre[t] + h @ w_hh.T
        i_all[t] = sigmoid(z[:H])
        f_all[t] = sigmoid(z[H : 2 * H])
        g_all[t] = np.tanh(z[2 * H : 3 * H])
        o_all[t] = sigmoid(z[3 * H :])
        c = f_all[t] * c + i_all[t] * g_all[t]
        tanh_c[t] = np.tanh(c)
        h = o_all[t] * tanh_c[t]
        c_all[t] = c
        out[t] = h
    cache = (x, w_ih, w_hh, i_all, f_all, g_all, o_all, tanh_c, h_prev_all, c_prev_all)
    return out, cache


def lstm_backward(cache, dout, with_bias):
    x, w_ih, w_hh, i_all, f_all, g_all, o_all, tanh_c, h_prev_all, c_prev_all = cache
    T, H = dout.shape
    dz_all = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        dh = dout[t] + dh_next
        i, f, g, o, tc = i_all[t], f_all[t], g_all[t], o_all[t], tanh_c[t]
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev_all[t]
        dc_next = dc * f
        dz = dz_all[t]
        dz[:H] = di * i * (1.0 - i)
        dz[H : 2 * H] = df * f * (1.0 - f)
        dz[2 * H : 3 * H] = dg * (1.0 - g * g)
        dz[3 * H :] = do * o * (1.0 - o)
        dh_next = dz @ w_hh
    dx = dz_all @ w_ih
    dw_ih = dz_all.T @ x
    dw_hh = dz_all.T @ h_prev_all
    if with_bias:
        db = dz_all.sum(axis=0)
        return dx, dw_ih, dw_hh, db, db.copy()
    return dx, dw_ih, dw_hh, None, None


def bilstm_forward(x, fwd_weights, bwd_weights):
    """Concatenated forward/backward hidden states: (T, 2H)."""
    out_f, cache_f = lstm_forward(x, *fwd_weights)
    out_b, cache_b = lstm_forward(x[::-1], *bwd_weights)
    out = np.concatenate([out_f, out_b[::-1]], axis=1)
    return out, (cache_f, cache_b)


def bilstm_backward(cache, dout, with_bias):
    cache_f, cache_b = cache
    H = dout.shape[1] // 2
    dx_f, dw_ih_f, dw_hh_f, db_ih_f, db_hh_f = lstm_backward(cache_f, dout[:, :H], with_bias)
    dx_b, dw_ih_b, dw_hh_b, db_ih_b, db_hh_b = lstm_backward(
        cache_b, dout[::-1, H:], with_bias
    )
    dx = dx_f + dx_b[::-1]
    fwd = (dw_ih_f, dw_hh_f, db_ih_f, db_hh_f)
    bwd = (dw_ih_b, dw_hh_b, db_ih_b, db_hh_b)
    return dx, fwd, bwd


# ---------------------------------------------------------------------------
# embedding / linear / dropout / relu

def embedding_forward(ids, weight):
    ids = np.asarray(ids, dtype=np.int64)
    return weight[ids], (ids, weight.shape)


def embedding_backward(cache, dout):
    ids, shape = cache
    dweight = np.zeros(shape)
    np.add.at(dweight, ids, dout)
    return dweight


def linear_forward(x, weight, bias=None):
    out = x @ weight.T
    if bias is not None:
        out = out + bias
    return out, (x, weight, bias is not None)


def linear_backward(cache, dout):
    x, weight, has_bias = cache
    dx = dout @ weight
    dweight = dout.T @ x
    dbias = dout.sum(axis=0) if has_bias else None
    return dx, dweight, dbias


def dropout_forward(x, rate, train, rng: np.random.Generator | None):
    """Inverted-scaling dropout; identity in eval mode or at rate 0."""
    if not train or rate <= 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(cache, dout):
    return dout if cache is None else dout * cache


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(cache, dout):
    return dout * cache
