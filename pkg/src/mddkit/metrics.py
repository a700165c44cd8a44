"""Edit-distance alignment, phoneme error rate, and the hierarchical
mispronunciation-detection metrics.

Correctly pronounced canonical positions split into true acceptances (TA)
and false rejections (FR); mispronounced positions into false acceptances
(FA) and true rejections, the latter split into correct diagnoses (CD)
and diagnosis errors (DE). The taxonomy is per canonical position, so
recognizer insertions count toward PER but not toward these five buckets.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import AnnotationEvent


@dataclass(frozen=True)
class AlignmentOp:
    kind: str  # match | substitute | insert | delete
    ref_id: int | None
    hyp_id: int | None

    def __post_init__(self):
        ok = {
            "match": self.ref_id is not None and self.ref_id == self.hyp_id,
            "substitute": self.ref_id is not None
            and self.hyp_id is not None
            and self.ref_id != self.hyp_id,
            "insert": self.ref_id is None and self.hyp_id is not None,
            "delete": self.ref_id is not None and self.hyp_id is None,
        }.get(self.kind, False)
        if not ok:
            raise ValueError(f"inconsistent alignment op {self}")


def align(ref, hyp) -> list[AlignmentOp]:
    """Minimal-cost alignment with unit substitute/insert/delete costs.

    Ties break deterministically: match > substitute > delete > insert.
    """
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, prev = dist[i], dist[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ref[i - 1] != hyp[j - 1])
            row[j] = min(sub, prev[j] + 1, row[j - 1] + 1)

    ops: list[AlignmentOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            kind = "match" if ref[i - 1] == hyp[j - 1] else "substitute"
            ops.append(AlignmentOp(kind, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            ops.append(AlignmentOp("delete", ref[i - 1], None))
            i -= 1
        else:
            ops.append(AlignmentOp("insert", None, hyp[j - 1]))
            j -= 1
    ops.reverse()
    return ops


def edit_distance(ref, hyp) -> int:
    return sum(1 for op in align(ref, hyp) if op.kind != "match")


def per(ref, hyp) -> float:
    """(substitutions + insertions + deletions) / |ref|. May exceed 1 when
    insertions dominate."""
    ref = list(ref)
    if not ref:
        raise ValueError("phoneme error rate needs a non-empty reference")
    return edit_distance(ref, list(hyp)) / len(ref)


@dataclass
class MddCounts:
    ta: int = 0
    fr: int = 0
    fa: int = 0
    cd: int = 0
    de: int = 0

    @property
    def tr(self) -> int:
        return self.cd + self.de

    def __add__(self, other: "MddCounts") -> "MddCounts":
        return MddCounts(
            self.ta + other.ta,
            self.fr + other.fr,
            self.fa + other.fa,
            self.cd + other.cd,
            self.de + other.de,
        )


def _actual_map_from_events(n_canonical: int, events) -> list[int | None]:
    """canonical index -> index into the actual sequence, None for deletions."""
    by_index = {ev.index: ev for ev in events if ev.kind != "addition"}
    additions = {ev.index: ev for ev in events if ev.kind == "addition"}
    mapping: list[int | None] = []
    j = 0
    for i in range(n_canonical):
        if i in additions:
            j += 1
        ev = by_index.get(i)
        if ev is not None and ev.kind == "deletion":
            mapping.append(None)
        else:
            mapping.append(j)
            j += 1
    return mapping


def _actual_map_from_alignment(canonical, actual) -> list[int | None]:
    mapping: list[int | None] = []
    j = 0
    for op in align(canonical, actual):
        if op.kind in ("match", "substitute"):
            mapping.append(j)
            j += 1
        elif op.kind == "delete":
            mapping.append(None)
        else:  # insert: actual phoneme with no canonical position
            j += 1
    return mapping


def hierarchical_eval(
    canonical,
    actual,
    recognized,
    events: list[AnnotationEvent] | None = None,
) -> MddCounts:
    """Classify every canonical position into TA/FR/FA/CD/DE.

    The three-way alignment pivots on the actual sequence: canonical maps
    onto actual (from annotation events when given, else by edit distance),
    and actual maps onto recognized by edit distance. Canonical positions
    the speaker deleted have no actual-side anchor, so their recognized
    counterpart is taken as absent as well; absent==absent counts as a
    correct diagnosis of the deletion.
    """
    canonical = list(canonical)
    actual = list(actual)
    recognized = list(recognized)

    if events is not None:
        actual_map = _actual_map_from_events(len(canonical), events)
    else:
        actual_map = _actual_map_from_alignment(canonical, actual)

    recog_of_actual: list[int | None] = []
    for op in align(actual, recognized):
        if op.kind in ("match", "substitute"):
            recog_of_actual.append(op.hyp_id)
        elif op.kind == "delete":
            recog_of_actual.append(None)

    counts = MddCounts()
    for i, c in enumerate(canonical):
        j = actual_map[i]
        a = actual[j] if j is not None else None
        r = recog_of_actual[j] if j is not None else None
        if a == c:
            if r == c:
                counts.ta += 1
            else:
                counts.fr += 1
        else:
            if r == c:
                counts.fa += 1
            elif r == a:
                counts.cd += 1
            else:
                counts.de += 1
    return counts


@dataclass
class MddReport:
    counts: MddCounts
    per: float | None
    recall: float | None
    precision: float | None
    f_measure: float | None
    ta_rate: float | None
    fr_rate: float | None
    fa_rate: float | None
    cd_rate: float | None
    de_rate: float | None


def f_measure(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def summarize(counts: MddCounts, per_value: float | None = None) -> MddReport:
    """Derive detection/diagnosis rates; impossible ratios are None, not NaN."""
    tr = counts.tr
    recall = _ratio(tr, tr + counts.fa)
    precision = _ratio(tr, tr + counts.fr)
    f = f_measure(precision, recall) if precision is not None and recall is not None else None
    return MddReport(
        counts=counts,
        per=per_value,
        recall=recall,
        precision=precision,
        f_measure=f,
        ta_rate=_ratio(counts.ta, counts.ta + counts.fr),
        fr_rate=_ratio(counts.fr, counts.ta + counts.fr),
        fa_rate=_ratio(counts.fa, counts.fa + tr),
        cd_rate=_ratio(counts.cd, tr),
        de_rate=_ratio(counts.de, tr),
    )


def _fmt(value: float | None) -> str:
    return "undefined" if value is None else f"{100.0 * value:.2f}%"


def format_report(report: MddReport) -> str:
    """Human-readable lines followed by a machine-readable key=value block."""
    c = report.counts
    lines = [
        f"correct pronunciations: TA={c.ta} FR={c.fr}",
        f"mispronunciations:      FA={c.fa} CD={c.cd} DE={c.de} (TR={c.tr})",
        f"phoneme error rate:     {_fmt(report.per)}",
        f"recall:                 {_fmt(report.recall)}",
        f"precision:              {_fmt(report.precision)}",
        f"f-measure:              {_fmt(report.f_measure)}",
        f"true acceptance rate:   {_fmt(report.ta_rate)}",
        f"false rejection rate:   {_fmt(report.fr_rate)}",
        f"false acceptance rate:  {_fmt(report.fa_rate)}",
        f"correct diagnosis rate: {_fmt(report.cd_rate)}",
        f"diagnosis error rate:   {_fmt(report.de_rate)}",
        "",
    ]

    def kv(value):
        return "undefined" if value is None else repr(value)

    for key in ("ta", "fr", "fa", "cd", "de"):
        lines.append(f"{key}={getattr(c, key)}")
    lines.append(f"tr={c.tr}")
    for key in (
        "per",
        "recall",
        "precision",
        "f_measure",
        "ta_rate",
        "fr_rate",
        "fa_rate",
        "cd_rate",
        "de_rate",
    ):
        lines.append(f"{key}={kv(getattr(report, key))}")
    return "\n".join(lines) + "\n"
