"""Minimal reader for long-format Praat TextGrid interval tiers.

Extracts interval labels (and boundary times) from named IntervalTiers,
which is all the annotation pipeline needs: the "phones" tier of an
L2-Arctic annotation TextGrid carries the per-segment tags. Point tiers
and short-format files are out of scope.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class TextGridError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    xmin: float
    xmax: float
    text: str


_ITEM_RE = re.compile(r"item\s*\[\s*\d+\s*\]\s*:")
_KEY_RE = re.compile(r'^\s*(\w+)\s*=\s*(.*?)\s*$')
_INTERVAL_RE = re.compile(r"intervals\s*\[\s*\d+\s*\]\s*:")


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value.startswith('"') and value.endswith('"'):
        return value[1:-1].replace('""', '"')
    return value


def read_textgrid(path) -> dict[str, list[Interval]]:
    """Parse a long-format TextGrid file into {tier name: [Interval, ...]}.

    Only IntervalTier items are returned; other tier classes are skipped.
    """
    with open(path, encoding="utf-8") as fh:
        content = fh.read()
    if "TextGrid" not in content.split("\n", 3)[0] and "ooTextFile" not in content:
        raise TextGridError(f"{path}: not a TextGrid file")

    tiers: dict[str, list[Interval]] = {}
    chunks = _ITEM_RE.split(content)
    for chunk in chunks[1:]:
        lines = chunk.splitlines()
        cls = name = None
        for line in lines:
            m = _KEY_RE.match(line)
            if not m:
                continue
            key, value = m.groups()
            if key == "class" and cls is None:
                cls = _unquote(value)
            elif key == "name" and name is None:
                name = _unquote(value)
            if cls is not None and name is not None:
                break
        if cls != "IntervalTier" or name is None:
            continue

        intervals = []
        for part in _INTERVAL_RE.split(chunk)[1:]:
            fields = {}
            for line in part.splitlines():
                m = _KEY_RE.match(line)
                if m and m.group(1) in ("xmin", "xmax", "text") and m.group(1) not in fields:
                    fields[m.group(1)] = m.group(2)
            try:
                intervals.append(
                    Interval(float(fields["xmin"]), float(fields["xmax"]), _unquote(fields["text"]))
                )
            except (KeyError, ValueError):
                raise TextGridError(f"{path}: malformed interval in tier {name!r}") from None
        tiers[name] = intervals
    if not tiers:
        raise TextGridError(f"{path}: no interval tiers found")
    return tiers


def tier_labels(tiers: dict[str, list[Interval]], name: str, skip_empty: bool = True) -> list[str]:
    """Labels of one tier in time order, dropping empty marks by default."""
    if name not in tiers:
        raise TextGridError(f"tier {name!r} not present (have: {sorted(tiers)})")
    labels = [iv.text for iv in tiers[name]]
    return [t for t in labels if t.strip()] if skip_empty else labels
