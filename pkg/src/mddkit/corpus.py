"""Kaldi-style corpus description files, annotation tags, and data splits.

A corpus directory holds whitespace-separated text files keyed by
utterance id: ``text`` (word transcript), ``wav.scp`` (audio path),
``utt2spk``, and optionally ``spk2utt``, ``segments``, ``phn_text``
(canonical phoneme sequence) and ``annot_text`` (per-phoneme annotation
tags using the CPL,PPL,kind template). Parsing joins them into an
immutable manifest; emission writes the canonical form back out
(sorted by utterance id, single-space separators, LF endings) so that
parse followed by emit is byte-identical on canonical directories.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

from .phoneset import PhonemeAlphabet, validate_sequence

REQUIRED_FILES = ("text", "wav.scp", "utt2spk")
OPTIONAL_FILES = ("spk2utt", "segments", "phn_text", "annot_text")

VALIDATION_SPEAKERS = frozenset({"MBMPS", "YBAA", "NCC", "SVBI", "YDCK", "THV"})
TEST_SPEAKERS = frozenset({"NJS", "ZHAA", "TXHC", "TNI", "YKWK", "TLV"})

SIL_MARK = "SIL"  # absence marker in annotation tag fields


class CorpusError(ValueError):
    """Raised for malformed corpus files, id mismatches, or bad annotations."""


@dataclass(frozen=True)
class AnnotationEvent:
    """One annotated pronunciation event at a canonical-sequence position.

    ``cpl``/``ppl`` are phoneme ids, or None for the sil absence marker:
    additions have cpl None, deletions have ppl None.
    """

    index: int
    cpl: int | None
    ppl: int | None
    kind: str  # correct | substitution | addition | deletion

    def __post_init__(self):
        k = self.kind
        if k == "substitution":
            ok = self.cpl is not None and self.ppl is not None and self.cpl != self.ppl
        elif k == "addition":
            ok = self.cpl is None and self.ppl is not None
        elif k == "deletion":
            ok = self.cpl is not None and self.ppl is None
        elif k == "correct":
            ok = self.cpl is not None and self.cpl == self.ppl
        else:
            ok = False
        if not ok:
            raise CorpusError(f"inconsistent annotation event {self}")


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    speaker_id: str
    wav_path: str
    words: tuple[str, ...]
    canonical_phonemes: tuple[int, ...] | None = None
    segment: tuple[float, float] | None = None
    recording_id: str | None = None
    annotation: tuple[AnnotationEvent, ...] | None = None

    def __post_init__(self):
        if not self.utterance_id.startswith(self.speaker_id + "_"):
            raise CorpusError(
                f"utterance id {self.utterance_id!r} does not start with "
                f"speaker id {self.speaker_id!r} + '_'"
            )
        if self.segment is not None:
            start, end = self.segment
            if not 0 <= start < end:
                raise CorpusError(f"bad segment times {self.segment} for {self.utterance_id}")


@dataclass(frozen=True)
class CorpusManifest:
    utterances: tuple[Utterance, ...]
    split: dict[str, str] = field(default_factory=dict)  # utt_id -> train|validation|test

    def __post_init__(self):
        seen = set()
        for utt in self.utterances:
            if utt.utterance_id in seen:
                raise CorpusError(f"duplicate utterance id {utt.utterance_id!r}")
            seen.add(utt.utterance_id)

    def __len__(self):
        return len(self.utterances)

    def by_split(self, tag: str) -> list[Utterance]:
        return [u for u in self.utterances if self.split.get(u.utterance_id, "train") == tag]

    def speakers(self) -> list[str]:
        return sorted({u.speaker_id for u in self.utterances})


# ---------------------------------------------------------------------------
# annotation tags

def parse_annotation_tag(tag: str, alphabet: PhonemeAlphabet, index: int = 0) -> AnnotationEvent:
    """Parse one annotation tag: a bare phoneme label or "CPL,PPL,kind".

    Bare label -> correct event; "X,Y,s" -> substitution; "sil,Y,a" ->
    addition; "X,sil,d" -> deletion. The sil marker denotes absence.
    """
    fields = [f.strip() for f in tag.split(",")]
    if len(fields) == 1:
        pid = alphabet.id_of(fields[0])
        return AnnotationEvent(index, pid, pid, "correct")
    if len(fields) != 3:
        raise CorpusError(f"annotation tag {tag!r} must have 1 or 3 comma-joined fields")
    cpl_s, ppl_s, kind_s = fields
    cpl_sil = cpl_s.upper() == SIL_MARK and kind_s.lower() == "a"
    ppl_sil = ppl_s.upper() == SIL_MARK and kind_s.lower() == "d"
    kind_s = kind_s.lower()
    if kind_s == "s":
        if cpl_s.upper() == SIL_MARK or ppl_s.upper() == SIL_MARK:
            raise CorpusError(f"substitution tag {tag!r} may not use the sil marker")
        cpl, ppl = alphabet.id_of(cpl_s), alphabet.id_of(ppl_s)
        if cpl == ppl:
            raise CorpusError(f"substitution tag {tag!r} replaces a phoneme with itself")
        return AnnotationEvent(index, cpl, ppl, "substitution")
    if kind_s == "a":
        if not cpl_sil:
            raise CorpusError(f"addition tag {tag!r} must have sil as CPL")
        return AnnotationEvent(index, None, alphabet.id_of(ppl_s), "addition")
    if kind_s == "d":
        if not ppl_sil:
            raise CorpusError(f"deletion tag {tag!r} must have sil as PPL")
        return AnnotationEvent(index, alphabet.id_of(cpl_s), None, "deletion")
    raise CorpusError(f"annotation tag {tag!r} has unknown kind {kind_s!r}")


def events_from_tags(tags, alphabet: PhonemeAlphabet):
    """Convert a tag stream to (canonical phoneme ids, non-correct events).

    correct/substitution/deletion tags each consume one canonical position;
    addition tags insert before the next canonical position.
    """
    canonical: list[int] = []
    events: list[AnnotationEvent] = []
    for tag in tags:
        ev = parse_annotation_tag(tag, alphabet, index=len(canonical))
        if ev.kind == "addition":
            events.append(ev)
        else:
            if ev.kind != "correct":
                events.append(ev)
            canonical.append(ev.cpl)
    return canonical, events


def actual_sequence(canonical, events) -> list[int]:
    """Apply annotation events to a canonical sequence, yielding the
    perceived (actually spoken) sequence: substitutions replace, additions
    insert, deletions remove. Conflicting events at one index are an error.
    """
    canonical = list(canonical)
    by_index: dict[int, AnnotationEvent] = {}
    additions: dict[int, AnnotationEvent] = {}
    for ev in events:
        table = additions if ev.kind == "addition" else by_index
        limit = len(canonical) if ev.kind == "addition" else len(canonical) - 1
        if not 0 <= ev.index <= limit:
            raise CorpusError(f"event index {ev.index} out of range for length {len(canonical)}")
        if ev.index in table:
            raise CorpusError(f"conflicting annotation events at index {ev.index}")
        table[ev.index] = ev

    out: list[int] = []
    for i, pid in enumerate(canonical):
        if i in additions:
            out.append(additions[i].ppl)
        ev = by_index.get(i)
        if ev is None or ev.kind == "correct":
            out.append(pid)
        elif ev.kind == "substitution":
            if ev.cpl != pid:
                raise CorpusError(
                    f"event at index {i} expects canonical phoneme {ev.cpl}, found {pid}"
                )
            out.append(ev.ppl)
        else:  # deletion
            if ev.cpl != pid:
                raise CorpusError(
                    f"event at index {i} expects canonical phoneme {ev.cpl}, found {pid}"
                )
    if len(canonical) in additions:
        out.append(additions[len(canonical)].ppl)
    return out


# ---------------------------------------------------------------------------
# parsing

def _read_table(path, min_fields=2, allow_extra=True):
    """Read "key field..." lines; returns {key: [fields...]} preserving order."""
    table: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) < min_fields:
                raise CorpusError(
                    f"{path}:{lineno}: expected at least {min_fields} fields, got {line!r}"
                )
            if not allow_extra and len(parts) > min_fields:
                raise CorpusError(f"{path}:{lineno}: too many fields in {line!r}")
            key = parts[0]
            if key in table:
                raise CorpusError(f"{path}:{lineno}: duplicate id {key!r}")
            table[key] = parts[1:]
    return table


def _check_ids(base_ids, other_ids, base_name, other_name, require_subset=True):
    missing = sorted(set(base_ids) - set(other_ids))
    extra = sorted(set(other_ids) - set(base_ids))
    problems = []
    if require_subset and missing:
        problems.append(f"ids in {base_name} missing from {other_name}: {', '.join(missing)}")
    if extra:
        problems.append(f"ids in {other_name} missing from {base_name}: {', '.join(extra)}")
    if problems:
        raise CorpusError("; ".join(problems))


def parse_kaldi_dir(dirpath, alphabet: PhonemeAlphabet | None = None) -> CorpusManifest:
    """Parse a Kaldi-style directory into a manifest.

    Requires ``text``, ``wav.scp``, ``utt2spk``; joins optional ``segments``,
    ``phn_text`` and ``annot_text`` records by utterance id. Ids present in
    one file but missing in another raise with the offending ids listed.
    ``annot_text`` requires an alphabet to resolve labels.
    """
    missing = [f for f in REQUIRED_FILES if not os.path.isfile(os.path.join(dirpath, f))]
    if missing:
        raise CorpusError(f"{dirpath}: missing required files: {', '.join(missing)}")

    text = _read_table(os.path.join(dirpath, "text"))
    utt2spk = _read_table(os.path.join(dirpath, "utt2spk"), allow_extra=False)
    wav_scp = _read_table(os.path.join(dirpath, "wav.scp"))

    seg_path = os.path.join(dirpath, "segments")
    segments = {}
    if os.path.isfile(seg_path):
        for utt, fields in _read_table(seg_path, min_fields=4, allow_extra=False).items():
            rec, start_s, end_s = fields
            try:
                segments[utt] = (rec, float(start_s), float(end_s))
            except ValueError:
                raise CorpusError(f"segments: bad times for {utt!r}: {start_s} {end_s}") from None

    phn_path = os.path.join(dirpath, "phn_text")
    phn_text = _read_table(phn_path) if os.path.isfile(phn_path) else None
    annot_path = os.path.join(dirpath, "annot_text")
    annot_text = _read_table(annot_path) if os.path.isfile(annot_path) else None
    if annot_text is not None and alphabet is None:
        raise CorpusError(f"{annot_path} present but no alphabet given to resolve labels")

    utt_ids = list(text)
    _check_ids(utt_ids, utt2spk, "text", "utt2spk")
    if segments:
        _check_ids(utt_ids, segments, "text", "segments", require_subset=False)
        recordings = {segments[u][0] for u in segments}
        _check_ids(recordings, wav_scp, "segments recordings", "wav.scp")
    wav_direct = set(utt_ids) - set(segments)
    _check_ids(wav_direct, set(wav_scp) - {segments[u][0] for u in segments}, "text", "wav.scp")
    if phn_text is not None:
        _check_ids(utt_ids, phn_text, "text", "phn_text", require_subset=False)
    if annot_text is not None:
        _check_ids(utt_ids, annot_text, "text", "annot_text", require_subset=False)

    utterances = []
    for utt in utt_ids:
        speaker = utt2spk[utt][0]
        seg = segments.get(utt)
        if seg is not None:
            rec, start, end = seg
            wav = " ".join(wav_scp[rec])
            segment, recording = (start, end), rec
        else:
            wav = " ".join(wav_scp[utt])
            segment, recording = None, None

        canonical = None
        events = None
        if annot_text is not None and utt in annot_text:
            canonical, evs = events_from_tags(annot_text[utt], alphabet)
            events = tuple(evs)
        if phn_text is not None and utt in phn_text:
            if alphabet is not None:
                phn = alphabet.encode(phn_text[utt])
            else:
                raise CorpusError("phn_text present but no alphabet given to resolve labels")
            if canonical is not None and phn != canonical:
                raise CorpusError(
                    f"{utt}: phn_text disagrees with the canonical sequence implied by annot_text"
                )
            canonical = phn

        utterances.append(
            Utterance(
                utterance_id=utt,
                speaker_id=speaker,
                wav_path=wav,
                words=tuple(text[utt]),
                canonical_phonemes=tuple(canonical) if canonical is not None else None,
                segment=segment,
                recording_id=recording,
                annotation=events,
            )
        )
    return CorpusManifest(tuple(utterances))


# ---------------------------------------------------------------------------
# emission

def _event_tag(ev: AnnotationEvent, alphabet: PhonemeAlphabet) -> str:
    if ev.kind == "substitution":
        return f"{alphabet.label_of(ev.cpl)},{alphabet.label_of(ev.ppl)},s"
    if ev.kind == "addition":
        return f"sil,{alphabet.label_of(ev.ppl)},a"
    if ev.kind == "deletion":
        return f"{alphabet.label_of(ev.cpl)},sil,d"
    return alphabet.label_of(ev.cpl)


def tags_for_utterance(utt: Utterance, alphabet: PhonemeAlphabet) -> list[str]:
    """Render an utterance's canonical sequence + events back into tag form."""
    events = utt.annotation or ()
    by_index = {ev.index: ev for ev in events if ev.kind != "addition"}
    additions = {ev.index: ev for ev in events if ev.kind == "addition"}
    tags = []
    canonical = utt.canonical_phonemes or ()
    for i, pid in enumerate(canonical):
        if i in additions:
            tags.append(_event_tag(additions[i], alphabet))
        ev = by_index.get(i)
        tags.append(_event_tag(ev, alphabet) if ev else alphabet.label_of(pid))
    if len(canonical) in additions:
        tags.append(_event_tag(additions[len(canonical)], alphabet))
    return tags


def emit_kaldi_dir(manifest: CorpusManifest, dirpath, alphabet: PhonemeAlphabet | None = None):
    """Write the canonical-form Kaldi files: lines sorted by utterance id,
    single-space separators, LF endings, UTF-8. ``segments`` is written only
    when any utterance has one; ``annot_text`` only when annotations exist.
    """
    os.makedirs(dirpath, exist_ok=True)
    utts = sorted(manifest.utterances, key=lambda u: u.utterance_id)

    def write(name, lines):
        with open(os.path.join(dirpath, name), "w", encoding="utf-8", newline="\n") as fh:
            for line in lines:
                fh.write(line + "\n")

    write("text", [" ".join((u.utterance_id,) + u.words) for u in utts])
    write("utt2spk", [f"{u.utterance_id} {u.speaker_id}" for u in utts])

    wav_lines = {}
    for u in utts:
        key = u.recording_id if u.segment is not None else u.utterance_id
        wav_lines.setdefault(key, u.wav_path)
    write("wav.scp", [f"{k} {wav_lines[k]}" for k in sorted(wav_lines)])

    spk2utt: dict[str, list[str]] = {}
    for u in utts:
        spk2utt.setdefault(u.speaker_id, []).append(u.utterance_id)
    write("spk2utt", [" ".join([spk] + spk2utt[spk]) for spk in sorted(spk2utt)])

    if any(u.segment is not None for u in utts):
        write(
            "segments",
            [
                f"{u.utterance_id} {u.recording_id} {u.segment[0]!r} {u.segment[1]!r}"
                for u in utts
                if u.segment is not None
            ],
        )

    phn_lines = []
    for u in utts:
        if u.canonical_phonemes is not None:
            if alphabet is None:
                raise CorpusError("manifest has phoneme sequences but no alphabet given")
            phn_lines.append(" ".join([u.utterance_id] + alphabet.decode(u.canonical_phonemes)))
    write("phn_text", phn_lines)

    if any(u.annotation for u in utts):
        write(
            "annot_text",
            [
                " ".join([u.utterance_id] + tags_for_utterance(u, alphabet))
                for u in utts
                if u.annotation
            ],
        )


# ---------------------------------------------------------------------------
# splits and serialization

def default_split(manifest: CorpusManifest) -> CorpusManifest:
    """Assign the L2-Arctic speaker split: the six named validation speakers,
    the six named test speakers, everyone else (including all TIMIT) to train.
    """
    split = {}
    for utt in manifest.utterances:
        if utt.speaker_id in VALIDATION_SPEAKERS:
            split[utt.utterance_id] = "validation"
        elif utt.speaker_id in TEST_SPEAKERS:
            split[utt.utterance_id] = "test"
        else:
            split[utt.utterance_id] = "train"
    return replace(manifest, split=split)


def save_manifest(manifest: CorpusManifest, path, alphabet: PhonemeAlphabet):
    doc = {"utterances": [], "split": manifest.split}
    for u in manifest.utterances:
        rec = {
            "utterance_id": u.utterance_id,
            "speaker_id": u.speaker_id,
            "wav_path": u.wav_path,
            "words": list(u.words),
        }
        if u.canonical_phonemes is not None:
            rec["phonemes"] = alphabet.decode(u.canonical_phonemes)
        if u.segment is not None:
            rec["segment"] = list(u.segment)
            rec["recording_id"] = u.recording_id
        if u.annotation:
            rec["tags"] = tags_for_utterance(u, alphabet)
        doc["utterances"].append(rec)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_manifest(path, alphabet: PhonemeAlphabet) -> CorpusManifest:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    utterances = []
    for rec in doc["utterances"]:
        canonical = None
        events = None
        if "tags" in rec:
            canonical, evs = events_from_tags(rec["tags"], alphabet)
            events = tuple(evs)
        if "phonemes" in rec:
            phn = alphabet.encode(rec["phonemes"])
            if canonical is not None and phn != canonical:
                raise CorpusError(f"{rec['utterance_id']}: phonemes disagree with tags")
            canonical = phn
        utterances.append(
            Utterance(
                utterance_id=rec["utterance_id"],
                speaker_id=rec["speaker_id"],
                wav_path=rec["wav_path"],
                words=tuple(rec["words"]),
                canonical_phonemes=tuple(canonical) if canonical is not None else None,
                segment=tuple(rec["segment"]) if "segment" in rec else None,
                recording_id=rec.get("recording_id"),
                annotation=events,
            )
        )
    return CorpusManifest(tuple(utterances), dict(doc.get("split", {})))


def sequences_for_training(manifest: CorpusManifest, alphabet: PhonemeAlphabet):
    """Yield (utterance, canonical, actual) id-sequences for model training.

    The actual sequence applies the utterance's annotation events; with no
    events it equals the canonical sequence. Utterances without phoneme
    transcripts are skipped.
    """
    for utt in manifest.utterances:
        if utt.canonical_phonemes is None:
            continue
        canonical = validate_sequence(alphabet, utt.canonical_phonemes)
        actual = actual_sequence(canonical, utt.annotation or ())
        yield utt, canonical, actual
