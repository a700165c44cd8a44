"""Synthetic fixture corpus: deterministic formant-like audio per phoneme.

The real corpora are license-gated, so desk-scale runs use a generated
stand-in: a 10-phoneme inventory where each phoneme renders as a fixed
two-sine "formant" chord with a soft envelope, making utterances cleanly
decodable by a small model. Held-out utterances can carry injected
confusion-pair substitutions (audio follows the perturbed pronunciation,
the transcript stays canonical) with matching annotation tags.
"""

from __future__ import annotations

import os

import numpy as np

from . import corpus as corpus_mod
from .augment import derived_seed
from .dsp import Waveform, save_wav
from .phoneset import PhonemeAlphabet, save_alphabet

TOY_SYMBOLS = (
    ("AA", "vowel"),
    ("IY", "vowel"),
    ("UW", "vowel"),
    ("EH", "vowel"),
    ("OW", "vowel"),
    ("B", "consonant"),
    ("D", "consonant"),
    ("S", "consonant"),
    ("K", "consonant"),
    ("M", "consonant"),
)

TRAIN_SPEAKERS = ("SPKA", "SPKB", "SPKC", "SPKD")
VAL_SPEAKER = "THV"  # named validation speaker, exercises default_split
TEST_SPEAKER = "NJS"  # named test speaker

PHONE_DUR_S = 0.09
NOISE_LEVEL = 0.003


def toy_alphabet() -> PhonemeAlphabet:
    return PhonemeAlphabet(
        tuple(sym for sym, _ in TOY_SYMBOLS), {sym: cls for sym, cls in TOY_SYMBOLS}
    )


def toy_confusions(alphabet: PhonemeAlphabet) -> dict[int, list[int]]:
    """Each phoneme confuses with the next phoneme of its class (cyclic)."""
    table: dict[int, list[int]] = {}
    for cls in ("vowel", "consonant"):
        ids = alphabet.ids_by_class(cls)
        for i, pid in enumerate(ids):
            table[pid] = [ids[(i + 1) % len(ids)]]
    return table


def phoneme_formants(pid: int, n_phonemes: int, sample_rate: int) -> tuple[float, float]:
    low = 220.0 + 180.0 * pid
    high = 2400.0 + 310.0 * pid
    nyquist = sample_rate / 2.0
    return min(low, 0.45 * nyquist), min(high, 0.9 * nyquist)


def render_utterance(ids, sample_rate: int, rng: np.random.Generator) -> Waveform:
    """Concatenate per-phoneme formant chords with Hann envelopes plus a
    touch of seeded noise; short leading/trailing silence."""
    seg_len = int(round(PHONE_DUR_S * sample_rate))
    t = np.arange(seg_len) / sample_rate
    envelope = np.hanning(seg_len) * 0.7 + 0.3
    pieces = [np.zeros(int(0.03 * sample_rate))]
    for pid in ids:
        f1, f2 = phoneme_formants(pid, 0, sample_rate)
        seg = 0.22 * np.sin(2 * np.pi * f1 * t) + 0.14 * np.sin(2 * np.pi * f2 * t)
        pieces.append(seg * envelope)
    pieces.append(np.zeros(int(0.03 * sample_rate)))
    samples = np.concatenate(pieces)
    samples = samples + NOISE_LEVEL * rng.standard_normal(len(samples))
    return Waveform(np.clip(samples, -1.0, 1.0), sample_rate)


def _random_sequence(alphabet, rng, lo=4, hi=7) -> list[int]:
    """No immediate repeats, so every phoneme boundary is audible."""
    n = int(rng.integers(lo, hi + 1))
    seq = [int(rng.integers(alphabet.size))]
    while len(seq) < n:
        pid = int(rng.integers(alphabet.size))
        if pid != seq[-1]:
            seq.append(pid)
    return seq


def _pseudo_words(ids, alphabet) -> list[str]:
    labels = [alphabet.label_of(i).lower() for i in ids]
    return ["".join(labels[i : i + 2]) for i in range(0, len(labels), 2)]


def make_fixture(
    dirpath,
    seed: int = 0,
    n_train: int = 20,
    n_val: int = 4,
    n_test: int = 6,
    error_rate: float = 0.1,
    sample_rate: int = 16000,
):
    """Materialize a fixture corpus directory.

    Layout: wav/*.wav plus Kaldi-style text, wav.scp, utt2spk, phn_text and
    annot_text (tags mark the injected test-set substitutions), along with
    alphabet.txt and confusions.txt. Returns (manifest, alphabet).
    """
    alphabet = toy_alphabet()
    confusions = toy_confusions(alphabet)
    rng = np.random.default_rng(seed)
    wav_dir = os.path.join(dirpath, "wav")
    os.makedirs(wav_dir, exist_ok=True)

    plan = []
    for i in range(n_train):
        plan.append((TRAIN_SPEAKERS[i % len(TRAIN_SPEAKERS)], f"synth{i:03d}", False))
    for i in range(n_val):
        plan.append((VAL_SPEAKER, f"synth{n_train + i:03d}", False))
    for i in range(n_test):
        plan.append((TEST_SPEAKER, f"synth{n_train + n_val + i:03d}", True))

    utterances = []
    for speaker, stem, inject in plan:
        utt_id = f"{speaker}_{stem}"
        canonical = _random_sequence(alphabet, rng)
        events = []
        if inject:
            ev_rng = np.random.default_rng(derived_seed(seed, utt_id + ":errors"))
            for pos, pid in enumerate(canonical):
                if ev_rng.random() < error_rate and pid in confusions:
                    events.append(
                        corpus_mod.AnnotationEvent(
                            pos, pid, confusions[pid][0], "substitution"
                        )
                    )
        actual = corpus_mod.actual_sequence(canonical, events)

        wav_rng = np.random.default_rng(derived_seed(seed, utt_id + ":audio"))
        wave = render_utterance(actual, sample_rate, wav_rng)
        wav_path = os.path.join(wav_dir, f"{utt_id}.wav")
        save_wav(wav_path, wave)

        utterances.append(
            corpus_mod.Utterance(
                utterance_id=utt_id,
                speaker_id=speaker,
                wav_path=os.path.abspath(wav_path),
                words=tuple(_pseudo_words(canonical, alphabet)),
                canonical_phonemes=tuple(canonical),
                annotation=tuple(events) if events else None,
            )
        )

    manifest = corpus_mod.default_split(corpus_mod.CorpusManifest(tuple(utterances)))
    corpus_mod.emit_kaldi_dir(manifest, dirpath, alphabet)
    save_alphabet(alphabet, os.path.join(dirpath, "alphabet.txt"))
    with open(os.path.join(dirpath, "confusions.txt"), "w", encoding="utf-8", newline="\n") as fh:
        for src in sorted(confusions):
            dsts = " ".join(alphabet.label_of(d) for d in confusions[src])
            fh.write(f"{alphabet.label_of(src)} {dsts}\n")
    return manifest, alphabet
