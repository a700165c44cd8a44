"""Phone-level backoff n-gram language models: training (Witten-Bell or
plain MLE), scoring with recursive backoff, and ARPA text serialization.

Probabilities are stored and serialized in log10 per the ARPA convention;
the decoder converts to natural log once at its boundary. Sentence markers
<s> and </s> pad every training sequence; <s> appears in histories but is
never predicted (its unigram entry carries the conventional -99 sentinel).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .phoneset import PhonemeAlphabet

BOS = "<s>"
EOS = "</s>"
LOG10_NEVER = -99.0  # sentinel probability for the never-predicted <s>


class LmError(ValueError):
    pass


@dataclass
class NGramModel:
    order: int
    alphabet: PhonemeAlphabet
    # history tuple -> {word -> log10 prob}; () is the unigram history
    table: dict[tuple[str, ...], dict[str, float]]
    # history tuple -> log10 backoff weight (absent history -> 0.0, i.e. weight 1)
    backoff: dict[tuple[str, ...], float] = field(default_factory=dict)

    @property
    def vocab(self) -> list[str]:
        """Predictable vocabulary: phoneme symbols plus the end marker."""
        return list(self.alphabet.symbols) + [EOS]

    def score(self, history: tuple[str, ...], word: str) -> float:
        """log10 p(word | history), recursively backing off to the unigram."""
        if word != EOS and word != BOS:
            word = self.alphabet.label_of(self.alphabet.id_of(word))  # validates
        history = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        acc = 0.0
        while True:
            probs = self.table.get(history)
            if probs is not None and word in probs:
                return acc + probs[word]
            if not history:
                return -math.inf  # MLE mode only: unseen unigram
            acc += self.backoff.get(history, 0.0)
            history = history[1:]

    def score_ids(self, prefix_ids, next_id: int) -> float:
        """log10 p(next | prefix) with ids; prefixes are <s>-padded."""
        labels = [BOS] + [self.alphabet.label_of(i) for i in prefix_ids]
        return self.score(tuple(labels), self.alphabet.label_of(next_id))

    def sequence_logp10(self, ids, include_eos: bool = True) -> float:
        """log10 probability of a whole sequence (with <s> padding)."""
        total = 0.0
        for i, pid in enumerate(ids):
            total += self.score_ids(ids[:i], pid)
        if include_eos:
            labels = [BOS] + [self.alphabet.label_of(i) for i in ids]
            total += self.score(tuple(labels), EOS)
        return total


def train_lm(
    sequences,
    order: int,
    alphabet: PhonemeAlphabet,
    smoothing: str = "witten_bell",
) -> NGramModel:
    """Count-and-smooth an n-gram model over phoneme-id sequences.

    witten_bell: interpolated Witten-Bell, expressed in backoff form so that
    conditional distributions sum to exactly 1 over the vocabulary for every
    history. mle: raw relative frequencies, no backoff (for tests).
    """
    if order < 1:
        raise LmError(f"order must be >= 1, got {order}")
    if smoothing not in ("witten_bell", "mle"):
        raise LmError(f"unknown smoothing {smoothing!r}")

    # Unigram counts cover real phonemes only (markers excluded); higher
    # orders see <s> in histories and predict </s>.
    ngram_counts: list[Counter] = [Counter() for _ in range(order + 1)]
    n_sequences = 0
    for seq in sequences:
        n_sequences += 1
        labels = [alphabet.label_of(i) for i in seq]
        ngram_counts[1].update(labels)
        tokens = [BOS] * (order - 1) + labels + [EOS]
        for i in range(order - 1, len(tokens)):
            for n in range(2, order + 1):
                ngram_counts[n][tuple(tokens[i - n + 1 : i + 1])] += 1
    if n_sequences == 0:
        raise LmError("empty training corpus")

    vocab = list(alphabet.symbols) + [EOS]
    table: dict[tuple[str, ...], dict[str, float]] = {}
    backoff: dict[tuple[str, ...], float] = {}

    unigrams = ngram_counts[1]
    total = sum(unigrams.values())
    if smoothing == "mle":
        uni_p = {w: c / total for w, c in unigrams.items()}
    else:
        n_types = len(unigrams)
        base = 1.0 / len(vocab)
        denom = total + n_types
        uni_p = {w: (unigrams.get(w, 0) + n_types * base) / denom for w in vocab}
    table[()] = {w: math.log10(p) for w, p in uni_p.items()}
    table[()][BOS] = LOG10_NEVER

    def prob(history: tuple[str, ...], word: str) -> float:
        """Linear-probability score under the model built so far."""
        if word == BOS:
            return 0.0
        while True:
            probs = table.get(history)
            if probs is not None and word in probs:
                return 10.0 ** probs[word]
            if not history:
                return 0.0
            bow = 10.0 ** backoff.get(history, 0.0)
            return bow * prob(history[1:], word)

    for n in range(2, order + 1):
        continuations: dict[tuple[str, ...], Counter] = {}
        for gram, c in ngram_counts[n].items():
            continuations.setdefault(gram[:-1], Counter())[gram[-1]] = c
        for hist in sorted(continuations):
            conts = continuations[hist]
            c_total = sum(conts.values())
            if smoothing == "mle":
                table[hist] = {w: math.log10(c / c_total) for w, c in conts.items()}
            else:
                t_types = len(conts)
                denom = c_total + t_types
                table[hist] = {
                    w: math.log10((c + t_types * prob(hist[1:], w)) / denom)
                    for w, c in conts.items()
                }
                backoff[hist] = math.log10(t_types / denom)

    return NGramModel(order, alphabet, table, backoff)


def perplexity(lm: NGramModel, sequences) -> float:
    logp = 0.0
    tokens = 0
    for seq in sequences:
        logp += lm.sequence_logp10(list(seq))
        tokens += len(seq) + 1  # + </s>
    return 10.0 ** (-logp / tokens)


# ---------------------------------------------------------------------------
# ARPA serialization

def write_arpa(lm: NGramModel, path) -> None:
    """Standard ARPA layout; scores use shortest round-trip float formatting
    so a write/read cycle preserves them exactly."""
    sections: list[list[str]] = []
    counts = []
    for n in range(1, lm.order + 1):
        lines = []
        for hist in sorted(h for h in lm.table if len(h) == n - 1):
            for word in sorted(lm.table[hist]):
                gram = hist + (word,)
                fields = [repr(lm.table[hist][word]), " ".join(gram)]
                if n < lm.order and gram in lm.backoff:
                    fields.append(repr(lm.backoff[gram]))
                lines.append("\t".join(fields))
        counts.append(len(lines))
        sections.append(lines)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\\data\\\n")
        for n, c in enumerate(counts, 1):
            fh.write(f"ngram {n}={c}\n")
        for n, lines in enumerate(sections, 1):
            fh.write(f"\n\\{n}-grams:\n")
            for line in lines:
                fh.write(line + "\n")
        fh.write("\n\\end\\\n")


def read_arpa(path, alphabet: PhonemeAlphabet) -> NGramModel:
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]

    it = iter(enumerate(lines, 1))
    counts: dict[int, int] = {}
    for lineno, line in it:
        if line.strip() == "\\data\\":
            break
        if line.strip():
            raise LmError(f"{path}:{lineno}: expected \\data\\ header")
    else:
        raise LmError(f"{path}: missing \\data\\ section")
    for lineno, line in it:
        line = line.strip()
        if not line:
            break
        if not line.startswith("ngram "):
            raise LmError(f"{path}:{lineno}: malformed count line {line!r}")
        n_s, c_s = line[len("ngram "):].split("=")
        counts[int(n_s)] = int(c_s)
    if not counts or sorted(counts) != list(range(1, max(counts) + 1)):
        raise LmError(f"{path}: malformed ngram counts {counts}")
    order = max(counts)

    table: dict[tuple[str, ...], dict[str, float]] = {}
    backoff: dict[tuple[str, ...], float] = {}
    seen: dict[int, int] = {n: 0 for n in counts}
    current = None
    ended = False
    for lineno, line in it:
        stripped = line.strip()
        if not stripped:
            continue
        if stripped == "\\end\\":
            ended = True
            break
        if stripped.startswith("\\") and stripped.endswith("-grams:"):
            current = int(stripped[1:-len("-grams:")])
            if current not in counts:
                raise LmError(f"{path}:{lineno}: section for undeclared order {current}")
            continue
        if current is None:
            raise LmError(f"{path}:{lineno}: n-gram line outside any section")
        fields = stripped.split("\t") if "\t" in stripped else stripped.split()
        if "\t" in stripped:
            # tab-separated: logp, gram words (space-joined), optional bow
            gram_words = fields[1].split()
            rest = fields[2:]
        else:
            gram_words = fields[1 : 1 + current]
            rest = fields[1 + current :]
        if len(gram_words) != current or len(rest) > 1:
            raise LmError(f"{path}:{lineno}: malformed {current}-gram line {line!r}")
        gram = tuple(gram_words)
        table.setdefault(gram[:-1], {})[gram[-1]] = float(fields[0])
        if rest:
            backoff[gram] = float(rest[0])
        seen[current] += 1
    if not ended:
        raise LmError(f"{path}: missing \\end\\ terminator")
    for n, expected in counts.items():
        if seen[n] != expected:
            raise LmError(
                f"{path}: \\data\\ declares {expected} {n}-grams but {seen[n]} listed"
            )
    return NGramModel(order, alphabet, table, backoff)
