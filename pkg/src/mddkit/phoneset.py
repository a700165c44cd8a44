"""Phoneme inventory: ordered symbols, blank index, vowel/consonant classes.

Every other stage (CTC, LM, augmentation, metrics) works in terms of the
integer ids defined here. The CTC blank is implicit: it is not a symbol in
the inventory, its id is always ``len(symbols)``, and the model output
dimension is ``size + 1``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources

BLANK_LABEL = "<b>"
CLASSES = ("vowel", "consonant", "silence")

_STRESS_RE = re.compile(r"^([A-Z@]+?)[0-2]$")


class PhonesetError(ValueError):
    """Raised for invalid inventory files or out-of-range phoneme ids."""


def normalize_symbol(label: str) -> str:
    """Upper-case a phoneme label and strip a trailing ARPAbet stress digit."""
    label = label.strip().upper()
    m = _STRESS_RE.match(label)
    return m.group(1) if m else label


@dataclass(frozen=True)
class PhonemeAlphabet:
    """Ordered phoneme inventory. Immutable; safe to share across threads."""

    symbols: tuple[str, ...]
    classes: dict[str, str] = field(compare=False)

    def __post_init__(self):
        if not self.symbols:
            raise PhonesetError("alphabet is empty")
        seen = set()
        for sym in self.symbols:
            if not sym:
                raise PhonesetError("empty symbol")
            if sym == BLANK_LABEL:
                raise PhonesetError(f"symbol may not equal the blank label {BLANK_LABEL!r}")
            if sym in seen:
                raise PhonesetError(f"duplicate symbol {sym!r}")
            seen.add(sym)
        for sym in self.symbols:
            cls = self.classes.get(sym)
            if cls not in CLASSES:
                raise PhonesetError(f"symbol {sym!r} has unknown class {cls!r}")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @property
    def size(self) -> int:
        """Number of real phonemes (V)."""
        return len(self.symbols)

    @property
    def blank_id(self) -> int:
        """CTC blank id, always one past the last phoneme."""
        return len(self.symbols)

    @property
    def output_dim(self) -> int:
        """Model output width: V + 1 (phonemes plus blank)."""
        return len(self.symbols) + 1

    def id_of(self, label: str) -> int:
        sym = normalize_symbol(label)
        try:
            return self._index[sym]
        except KeyError:
            raise PhonesetError(f"unknown phoneme label {label!r}") from None

    def label_of(self, pid: int) -> str:
        if not 0 <= pid < self.size:
            raise PhonesetError(f"phoneme id {pid} out of range [0, {self.size})")
        return self.symbols[pid]

    def classify(self, pid: int) -> str:
        """Class of a phoneme id: vowel, consonant or silence. Blank has no class."""
        return self.classes[self.label_of(pid)]

    def ids_by_class(self, cls: str) -> list[int]:
        return [i for i, s in enumerate(self.symbols) if self.classes[s] == cls]

    def encode(self, labels) -> list[int]:
        """Map an iterable of labels to a phoneme-id sequence."""
        return [self.id_of(lab) for lab in labels]

    def decode(self, ids) -> list[str]:
        return [self.label_of(i) for i in ids]


def validate_sequence(alphabet: PhonemeAlphabet, ids) -> list[int]:
    """Check that a phoneme-id sequence contains no blanks or foreign ids."""
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < alphabet.size:
            raise PhonesetError(f"phoneme id {i} invalid for alphabet of size {alphabet.size}")
        out.append(i)
    return out


def load_alphabet(path) -> PhonemeAlphabet:
    """Load an inventory from a UTF-8 file of "SYMBOL CLASS" lines.

    Blank lines and '#' comments are skipped. Symbols are normalized
    (upper-cased, stress digits dropped); the CTC blank is appended
    implicitly and never appears in the file.
    """
    symbols: list[str] = []
    classes: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise PhonesetError(f"{path}:{lineno}: expected 'SYMBOL CLASS', got {raw!r}")
            sym = normalize_symbol(parts[0])
            cls = parts[1].lower()
            if cls not in CLASSES:
                raise PhonesetError(f"{path}:{lineno}: unknown class token {parts[1]!r}")
            if sym in classes:
                raise PhonesetError(f"{path}:{lineno}: duplicate symbol {sym!r}")
            symbols.append(sym)
            classes[sym] = cls
    if not symbols:
        raise PhonesetError(f"{path}: empty alphabet file")
    return PhonemeAlphabet(tuple(symbols), classes)


def save_alphabet(alphabet: PhonemeAlphabet, path) -> None:
    """Write the canonical form: one "SYMBOL CLASS" line per symbol, LF endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sym in alphabet.symbols:
            fh.write(f"{sym} {alphabet.classes[sym]}\n")


def default_alphabet() -> PhonemeAlphabet:
    """The shipped 42-symbol inventory (39 CMU ARPAbet + SIL, SP, ERR)."""
    ref = resources.files("mddkit.data") / "cmu42.txt"
    with resources.as_file(ref) as path:
        return load_alphabet(path)
