"""CTC semantics: path collapse, exact forward-backward loss and gradient,
greedy decoding, and prefix beam search with optional n-gram LM fusion.

All probability arithmetic is in log space (stable logaddexp); the loss
gradient is taken with respect to raw logits, folding the softmax Jacobian
in, which is the form the training loop consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NEG_INF = -np.inf
LN10 = math.log(10.0)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def collapse(path, blank_id: int) -> list[int]:
    """Merge adjacent equal non-blank symbols, then drop blanks."""
    out: list[int] = []
    prev = None
    for sym in path:
        if sym != prev:
            if sym != blank_id:
                out.append(sym)
            prev = sym
    return out


def min_frames_for(target) -> int:
    """Fewest frames that can emit the target: |target| plus one separating
    blank per adjacent repeat."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


@dataclass
class CtcLossResult:
    loss: float
    grad: np.ndarray  # d loss / d logits, same shape as the input
    feasible: bool = True


def _extended_target(target, blank_id):
    ext = [blank_id]
    for sym in target:
        ext.append(sym)
        ext.append(blank_id)
    return np.asarray(ext, dtype=np.int64)


def ctc_loss(logits: np.ndarray, target, blank_id: int) -> CtcLossResult:
    """Exact CTC negative log-likelihood of `target` under raw `logits`.

    logits: (T, V+1) unnormalized scores; target: phoneme ids (< blank_id).
    A target needing more frames than available gets +inf loss, zero
    gradient, and feasible=False.
    """
    logits = np.asarray(logits, dtype=np.float64)
    T = logits.shape[0]
    target = [int(t) for t in target]
    if any(not 0 <= t < blank_id for t in target):
        raise ValueError("target contains blank or out-of-range ids")

    if T == 0:
        loss = 0.0 if not target else np.inf
        return CtcLossResult(loss, np.zeros_like(logits), feasible=not target)
    if min_frames_for(target) > T:
        return CtcLossResult(np.inf, np.zeros_like(logits), feasible=False)

    logp = log_softmax(logits)
    ext = _extended_target(target, blank_id)
    S = len(ext)
    emit = logp[:, ext]  # (T, S)

    # skip transition s-2 -> s allowed where ext[s] is a label differing
    # from ext[s-2]
    can_skip = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip[2:] = (ext[2:] != blank_id) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    # NaN logits (a diverged model) propagate silently and are caught below
    with np.errstate(invalid="ignore"):
        for t in range(1, T):
            prev = alpha[t - 1]
            step = np.concatenate(([NEG_INF], prev[:-1]))
            acc = np.logaddexp(prev, step)
            if S > 2:
                skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
                acc = np.where(can_skip, np.logaddexp(acc, skip), acc)
            alpha[t] = acc + emit[t]

    log_z = alpha[T - 1, S - 1]
    if S > 1:
        with np.errstate(invalid="ignore"):
            log_z = np.logaddexp(log_z, alpha[T - 1, S - 2])
    if np.isnan(log_z):
        # non-finite logits (diverged model), not an infeasible target
        return CtcLossResult(np.nan, np.zeros_like(logits), feasible=False)
    if not np.isfinite(log_z):
        return CtcLossResult(np.inf, np.zeros_like(logits), feasible=False)

    # beta excludes the emission at its own frame
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    # skip s -> s+2 allowed where ext[s+2] is a label differing from ext[s]
    fwd_skip = np.zeros(S, dtype=bool)
    if S > 2:
        fwd_skip[:-2] = can_skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        step = np.concatenate((nxt[1:], [NEG_INF]))
        acc = np.logaddexp(nxt, step)
        if S > 2:
            skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
            acc = np.where(fwd_skip, np.logaddexp(acc, skip), acc)
        beta[t] = acc

    # state posteriors -> per-symbol occupancy gamma
    with np.errstate(invalid="ignore"):
        log_state = alpha + beta - log_z
    gamma = np.zeros_like(logits)
    occ = np.exp(log_state)
    occ[~np.isfinite(log_state)] = 0.0
    for s in range(S):
        gamma[:, ext[s]] += occ[:, s]

    grad = np.exp(logp) - gamma
    return CtcLossResult(float(-log_z), grad, feasible=True)


def greedy_decode(logp: np.ndarray, blank_id: int) -> list[int]:
    """collapse(argmax per frame); ties break to the lowest symbol index."""
    return collapse(np.argmax(logp, axis=1).tolist(), blank_id)


@dataclass
class Hypothesis:
    prefix: tuple[int, ...]
    log_p_blank: float
    log_p_nonblank: float
    lm_logp: float  # natural-log LM score of the prefix

    @property
    def log_p_total(self) -> float:
        return np.logaddexp(self.log_p_blank, self.log_p_nonblank)


def beam_decode(
    logp: np.ndarray,
    blank_id: int,
    beam: int = 8,
    lm=None,
    lm_weight: float = 0.5,
    insertion_bonus: float = 0.0,
) -> list[int]:
    """Prefix beam search over collapsed prefixes.

    Hypothesis score = log p_ctc(prefix) + lm_weight * ln p_lm(prefix)
    + insertion_bonus * |prefix|. The CTC mass per prefix is tracked
    exactly (split into blank/non-blank endings), so with a wide enough
    beam and no LM this maximizes the true CTC labeling probability.
    Deterministic: score ties break to the lexicographically smallest prefix.
    """
    if beam < 1:
        raise ValueError("beam width must be >= 1")
    logp = np.asarray(logp, dtype=np.float64)
    T, width = logp.shape

    def lm_step(prefix: tuple[int, ...], sym: int) -> float:
        if lm is None:
            return 0.0
        return lm.score_ids(prefix, sym) * LN10

    def rank_key(item):
        prefix, (p_b, p_nb, lm_lp) = item
        score = np.logaddexp(p_b, p_nb) + lm_weight * lm_lp + insertion_bonus * len(prefix)
        return (-score, prefix)

    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_INF, 0.0]}
    for t in range(T):
        nxt: dict[tuple[int, ...], list[float]] = {}

        def bucket(prefix):
            return nxt.setdefault(prefix, [NEG_INF, NEG_INF, 0.0])

        for prefix, (p_b, p_nb, lm_lp) in beams.items():
            p_tot = np.logaddexp(p_b, p_nb)
            # blank keeps the prefix and ends it in blank
            entry = bucket(prefix)
            entry[0] = np.logaddexp(entry[0], p_tot + logp[t, blank_id])
            entry[2] = lm_lp
            # repeating the final symbol without a separating blank extends
            # the same emission run
            if prefix:
                entry[1] = np.logaddexp(entry[1], p_nb + logp[t, prefix[-1]])
            for sym in range(width):
                if sym == blank_id:
                    continue
                new_prefix = prefix + (sym,)
                mass = p_b if prefix and sym == prefix[-1] else p_tot
                if mass == NEG_INF:
                    continue
                entry = bucket(new_prefix)
                entry[1] = np.logaddexp(entry[1], mass + logp[t, sym])
                entry[2] = lm_lp + lm_step(prefix, sym)
        beams = dict(sorted(nxt.items(), key=rank_key)[:beam])

    best_prefix, _ = min(beams.items(), key=rank_key)
    return list(best_prefix)


def hypotheses(beams_dict) -> list[Hypothesis]:
    return [
        Hypothesis(prefix, p_b, p_nb, lm_lp)
        for prefix, (p_b, p_nb, lm_lp) in beams_dict.items()
    ]
