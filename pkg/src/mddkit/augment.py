"""Phoneme-sequence perturbation for synthesizing mispronunciation pairs.

Three strategies: random replacement (plus random insertions, which teach
the model to emit nothing for a phoneme the speaker never produced),
class-preserving vowel/consonant replacement, and confusion-pair
replacement from a loadable table. All perturbation applies to the
sentence-encoder input stream only; training targets and audio are never
touched. Everything is deterministic given (sequence, policy, seed).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .phoneset import PhonemeAlphabet, validate_sequence

STRATEGIES = ("random", "vowel_consonant", "confusion_pair")


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentPolicy:
    strategy: str = "random"
    rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise AugmentError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise AugmentError(f"rate must be in [0, 1], got {self.rate}")


def derived_seed(seed: int, utterance_id: str, epoch: int = 0) -> int:
    """Stable per-utterance (and per-epoch) seed; independent of PYTHONHASHSEED."""
    digest = hashlib.sha256(f"{utterance_id}:{epoch}".encode("utf-8")).digest()
    return (seed ^ int.from_bytes(digest[:8], "little")) & 0x7FFFFFFFFFFFFFFF


def _rng(policy: AugmentPolicy, rng) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(policy.seed)


def augment_random(s, policy: AugmentPolicy, alphabet: PhonemeAlphabet, rng=None) -> list[int]:
    """Replace each position with probability `rate` by a uniformly random
    different phoneme; with the same rate, insert a random phoneme into each
    interior gap."""
    s = validate_sequence(alphabet, s)
    gen = _rng(policy, rng)
    out: list[int] = []
    for i, pid in enumerate(s):
        if gen.random() < policy.rate:
            repl = int(gen.integers(alphabet.size - 1))
            out.append(repl + 1 if repl >= pid else repl)
        else:
            out.append(pid)
        if i < len(s) - 1 and gen.random() < policy.rate:
            out.append(int(gen.integers(alphabet.size)))
    return out


def augment_vowel_consonant(
    s, policy: AugmentPolicy, alphabet: PhonemeAlphabet, rng=None
) -> list[int]:
    """Class-preserving replacement: vowels map to other vowels, consonants
    to other consonants; silence-class phonemes are never selected, and a
    singleton class leaves its positions unchanged."""
    s = validate_sequence(alphabet, s)
    gen = _rng(policy, rng)
    pool = {cls: alphabet.ids_by_class(cls) for cls in ("vowel", "consonant")}
    out: list[int] = []
    for pid in s:
        cls = alphabet.classify(pid)
        if cls == "silence" or gen.random() >= policy.rate:
            out.append(pid)
            continue
        candidates = [p for p in pool[cls] if p != pid]
        if not candidates:
            out.append(pid)
        else:
            out.append(candidates[int(gen.integers(len(candidates)))])
    return out


def augment_confusion(s, policy: AugmentPolicy, table: dict[int, list[int]], rng=None) -> list[int]:
    """Replace selected positions by a uniform draw from their confusables;
    positions without a table entry are skipped."""
    gen = _rng(policy, rng)
    out: list[int] = []
    for pid in s:
        options = table.get(pid)
        if options and gen.random() < policy.rate:
            out.append(options[int(gen.integers(len(options)))])
        else:
            out.append(pid)
    return out


def augment(
    s,
    policy: AugmentPolicy,
    alphabet: PhonemeAlphabet,
    table: dict[int, list[int]] | None = None,
    rng=None,
) -> list[int]:
    if policy.strategy == "random":
        return augment_random(s, policy, alphabet, rng)
    if policy.strategy == "vowel_consonant":
        return augment_vowel_consonant(s, policy, alphabet, rng)
    if table is None:
        raise AugmentError("confusion_pair strategy needs a confusion table")
    return augment_confusion(s, policy, table, rng)


# ---------------------------------------------------------------------------
# confusion tables

def validate_confusion_table(table: dict[int, list[int]], alphabet: PhonemeAlphabet):
    for src, dsts in table.items():
        alphabet.label_of(src)
        if not dsts:
            raise AugmentError(f"{alphabet.label_of(src)} has an empty confusable list")
        for dst in dsts:
            alphabet.label_of(dst)
            if dst == src:
                raise AugmentError(f"{alphabet.label_of(src)} maps to itself")
    return table


def load_confusion_table(path, alphabet: PhonemeAlphabet) -> dict[int, list[int]]:
    """Read "SRC DST1 DST2 ..." lines; '#' comments permitted."""
    table: dict[int, list[int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            labels = line.split()
            if len(labels) < 2:
                raise AugmentError(f"{path}:{lineno}: need a source and at least one confusable")
            src = alphabet.id_of(labels[0])
            if src in table:
                raise AugmentError(f"{path}:{lineno}: duplicate source {labels[0]!r}")
            table[src] = [alphabet.id_of(lab) for lab in labels[1:]]
    return validate_confusion_table(table, alphabet)


def default_confusion_table(alphabet: PhonemeAlphabet) -> dict[int, list[int]]:
    """The shipped table: dominant L2-Arctic substitution pairs (Z<->S,
    DH<->D, IH<->IY, OW<->AO) plus deletion- and addition-prone phonemes."""
    ref = resources.files("mddkit.data") / "confusions.txt"
    with resources.as_file(ref) as path:
        return load_confusion_table(path, alphabet)
