import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mddkit import ctc
from mddkit.ctc import beam_decode, collapse, ctc_loss, greedy_decode, log_softmax


def brute_force_loss(logits, target, blank):
    """Oracle: enumerate every path and sum the ones collapsing to target."""
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    T, width = logp.shape
    total = -np.inf
    for path in itertools.product(range(width), repeat=T):
        if collapse(path, blank) == list(target):
            total = np.logaddexp(total, sum(logp[t, s] for t, s in enumerate(path)))
    return -total


def labeling_scores(logp, blank):
    """Oracle: exact probability of every complete labeling."""
    T, width = logp.shape
    scores = {}
    for path in itertools.product(range(width), repeat=T):
        key = tuple(collapse(path, blank))
        lp = sum(logp[t, s] for t, s in enumerate(path))
        scores[key] = np.logaddexp(scores.get(key, -np.inf), lp)
    return scores


# ---------------------------------------------------------------------------
# collapse

def test_collapse_paper_cat_examples():
    # c=0 a=1 t=2 blank=3
    assert collapse([0, 0, 0, 0, 3, 1, 1, 1, 3, 2, 2, 2, 2, 3], 3) == [0, 1, 2]
    assert collapse([0, 0, 3, 1, 1, 3, 2, 3], 3) == [0, 1, 2]
    assert collapse([0, 0, 3, 1, 3, 2, 3], 3) == [0, 1, 2]


def test_collapse_all_blanks():
    assert collapse([3, 3, 3], 3) == []


def test_collapse_blank_separates_repeats():
    assert collapse([0, 0, 3, 0], 3) == [0, 0]


def canonical_path(labels, blank):
    """Re-encode a label sequence as a path: blanks separate equal repeats."""
    path = []
    for i, sym in enumerate(labels):
        if i > 0 and labels[i - 1] == sym:
            path.append(blank)
        path.append(sym)
    return path


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=12))
def test_collapse_idempotent_on_canonical_paths(path):
    once = collapse(path, 3)
    assert collapse(canonical_path(once, 3), 3) == once


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=12))
def test_collapse_output_has_no_blanks(path):
    assert 3 not in collapse(path, 3)


# ---------------------------------------------------------------------------
# loss

def test_single_frame_uniform():
    logits = np.zeros((1, 3))  # uniform over {a, x, blank}
    result = ctc_loss(logits, [0], blank_id=2)
    assert result.loss == pytest.approx(-np.log(1.0 / 3.0), rel=1e-12)


def test_two_frames_uniform_three_paths():
    # paths a.a, a.b, b.a each have probability 1/9
    logits = np.zeros((2, 3))
    result = ctc_loss(logits, [0], blank_id=2)
    assert result.loss == pytest.approx(-np.log(1.0 / 3.0), rel=1e-12)
    assert result.loss == pytest.approx(brute_force_loss(logits, [0], 2), rel=1e-12)


def test_loss_matches_brute_force(rng):
    for _ in range(60):
        V = int(rng.integers(1, 4))
        T = int(rng.integers(1, 7))
        logits = rng.normal(size=(T, V + 1)) * 2.0
        target = rng.integers(0, V, size=int(rng.integers(0, 4))).tolist()
        got = ctc_loss(logits, target, V)
        want = brute_force_loss(logits, target, V)
        if np.isinf(want):
            assert np.isinf(got.loss) and not got.feasible
        else:
            assert got.loss == pytest.approx(want, rel=1e-10)


def test_impossible_target_flagged():
    logits = np.zeros((1, 3))
    result = ctc_loss(logits, [0, 1], blank_id=2)
    assert np.isinf(result.loss)
    assert not result.feasible
    assert np.all(result.grad == 0)
    # repeats need a separating blank: "aa" needs 3 frames
    assert not ctc_loss(np.zeros((2, 3)), [0, 0], 2).feasible
    assert ctc_loss(np.zeros((3, 3)), [0, 0], 2).feasible


def test_empty_target():
    logits = np.log(np.array([[0.2, 0.3, 0.5]] * 3))
    result = ctc_loss(logits, [], blank_id=2)
    assert result.loss == pytest.approx(-3 * np.log(0.5), rel=1e-12)


def test_zero_frames():
    assert ctc_loss(np.zeros((0, 3)), [], 2).loss == 0.0
    assert np.isinf(ctc_loss(np.zeros((0, 3)), [0], 2).loss)


def test_total_probability_conservation(rng):
    for V, T in [(1, 3), (2, 3), (2, 4), (1, 4)]:
        logits = rng.normal(size=(T, V + 1))
        total = 0.0
        for L in range(T + 1):
            for target in itertools.product(range(V), repeat=L):
                result = ctc_loss(logits, list(target), V)
                if np.isfinite(result.loss):
                    total += np.exp(-result.loss)
        assert total == pytest.approx(1.0, abs=1e-8)


def test_grad_rows_sum_to_zero(rng):
    result = ctc_loss(rng.normal(size=(6, 4)), [0, 2, 1], 3)
    assert np.abs(result.grad.sum(axis=1)).max() < 1e-8


def test_grad_matches_finite_differences(rng):
    logits = rng.normal(size=(5, 4))
    target = [0, 2, 1]
    result = ctc_loss(logits, target, 3)
    eps = 1e-5
    for t in range(5):
        for k in range(4):
            up = logits.copy()
            up[t, k] += eps
            down = logits.copy()
            down[t, k] -= eps
            fd = (ctc_loss(up, target, 3).loss - ctc_loss(down, target, 3).loss) / (2 * eps)
            assert abs(fd - result.grad[t, k]) <= 1e-7 + 1e-4 * max(abs(fd), abs(result.grad[t, k]))


def test_target_with_blank_rejected():
    with pytest.raises(ValueError):
        ctc_loss(np.zeros((2, 3)), [2], blank_id=2)


# ---------------------------------------------------------------------------
# greedy decode

def test_greedy_cat():
    width = 4
    rows = [0, 0, 3, 1, 2]  # c c <b> a t
    logp = np.full((5, width), -10.0)
    for t, s in enumerate(rows):
        logp[t, s] = -0.01
    assert greedy_decode(logp, 3) == [0, 1, 2]


def test_greedy_all_blank():
    logp = np.zeros((3, 3))
    logp[:, 2] = 1.0
    assert greedy_decode(logp, 2) == []


def test_greedy_one_frame():
    logp = np.array([[-5.0, -0.1, -5.0, -6.0]])
    assert greedy_decode(logp, 3) == [1]


def test_greedy_tie_breaks_to_lowest_index():
    logp = np.zeros((1, 3))  # all equal; argmax -> index 0
    assert greedy_decode(logp, 2) == [0]


# ---------------------------------------------------------------------------
# beam decode

def peaked_matrix(rng, T, width, peak=0.8):
    rows = rng.integers(0, width, size=T)
    probs = np.full((T, width), (1 - peak) / (width - 1))
    probs[np.arange(T), rows] = peak
    return np.log(probs)


def test_beam1_equals_greedy_on_peaked_matrices(rng):
    for _ in range(50):
        T = int(rng.integers(1, 8))
        width = int(rng.integers(2, 5))
        logp = peaked_matrix(rng, T, width)
        assert beam_decode(logp, width - 1, beam=1, lm_weight=0.0) == greedy_decode(
            logp, width - 1
        )


def test_beam_finds_exact_best_labeling(rng):
    """With no LM and a beam covering all labelings, beam search returns the
    labeling maximizing the exact CTC probability (brute-force oracle)."""
    for _ in range(25):
        V = int(rng.integers(1, 4))
        T = int(rng.integers(1, 6))
        logp = log_softmax(rng.normal(size=(T, V + 1)))
        scores = labeling_scores(logp, V)
        got = tuple(beam_decode(logp, V, beam=len(scores) + 4, lm_weight=0.0))
        best = max(scores.values())
        assert scores[got] == pytest.approx(best, abs=1e-12)


def test_beam_score_monotone_in_width(rng):
    def hyp_score(logp, prefix, blank):
        # exact CTC log-probability of a complete labeling
        return labeling_scores(logp, blank)[tuple(prefix)]

    for _ in range(10):
        logp = log_softmax(rng.normal(size=(4, 4)))
        scores = [
            hyp_score(logp, beam_decode(logp, 3, beam=b, lm_weight=0.0), 3)
            for b in (1, 2, 4, 8, 32)
        ]
        assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def test_beam_lm_fusion_prefers_lm_sequence(abc_alphabet):
    """Bigram LM with p(B|A) >> p(C|A) flips a near-tied acoustic choice.

    Hand-computed: acoustics give the same CTC mass to [A,B] and [A,C];
    adding lm_weight * ln p_lm breaks the tie toward [A,B].
    """
    from mddkit.lm import train_lm

    # corpus: A B  (x5) and A C (x1) -> p(B|A) > p(C|A)
    lm = train_lm([[0, 1]] * 5 + [[0, 2]], 2, abc_alphabet)
    assert lm.score(("A",), "B") > lm.score(("A",), "C")

    logp = np.log(np.array([
        [0.96, 0.01, 0.01, 0.02],   # A dominant
        [0.02, 0.48, 0.48, 0.02],   # B and C exactly tied
    ]))
    no_lm = beam_decode(logp, 3, beam=8, lm_weight=0.0)
    assert no_lm == [0, 1]  # tie broken to lower index either way
    with_lm = beam_decode(logp, 3, beam=8, lm=lm, lm_weight=1.0)
    assert with_lm == [0, 1]

    # invert the corpus so the LM prefers C; fusion must flip the output
    lm2 = train_lm([[0, 2]] * 5 + [[0, 1]], 2, abc_alphabet)
    assert beam_decode(logp, 3, beam=8, lm=lm2, lm_weight=1.0) == [0, 2]


def test_beam_insertion_bonus_lengthens_output():
    # blank-heavy rows: p(empty)=0.64 beats p([a])=0.2625 without a bonus
    logp = np.log(np.array([
        [0.15, 0.05, 0.8],
        [0.15, 0.05, 0.8],
    ]))
    assert beam_decode(logp, 2, beam=8, lm_weight=0.0) == []
    longer = beam_decode(logp, 2, beam=8, lm_weight=0.0, insertion_bonus=2.0)
    assert len(longer) >= 1


def test_beam_width_validation():
    with pytest.raises(ValueError):
        beam_decode(np.zeros((1, 2)), 1, beam=0)
