"""Radiology report corpora: section parsing, balancing, splitting, mixing, persistence.

A corpus is an immutable, ordered collection of reports plus a split
assignment. All operations are pure functions of (inputs, seed), so the
same call always yields the same corpus.
"""

from __future__ import annotations

import json
import random
import re
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class Language(str, Enum):
    EN = "en"
    PT = "pt"
    GER = "de"


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"
    UNASSIGNED = "unassigned"


class CorpusError(Exception):
    """Base class for corpus-level failures."""


class MissingSection(CorpusError):
    def __init__(self, section: str):
        self.section = section
        super().__init__(f"required section '{section}' is absent or empty")


class InfeasibleCap(CorpusError):
    pass


class CountMismatch(CorpusError):
    pass


class CapTooLarge(CorpusError):
    pass


class SchemaError(CorpusError):
    pass


class DuplicateId(CorpusError):
    pass


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def normalize_impression(text: str) -> str:
    """Equality key for balancing: case-folded, whitespace-normalized."""
    return normalize_whitespace(text).casefold()


@dataclass(frozen=True)
class Report:
    id: str
    language: Language
    findings: str
    impression: str
    background: str | None = None
    source: str = ""


@dataclass(frozen=True)
class CorpusDescriptor:
    """Named, language-tagged collection identity.

    ``languages`` holds one entry for monolingual corpora and one entry per
    contributing language, in contribution order, for mixed corpora.
    """

    name: str
    languages: tuple[Language, ...]

    @classmethod
    def mono(cls, name: str, language: Language) -> "CorpusDescriptor":
        return cls(name=name, languages=(language,))

    @property
    def language(self) -> Language:
        if len(self.languages) != 1:
            raise ValueError(f"corpus '{self.name}' is multilingual: {self.languages}")
        return self.languages[0]

    def __str__(self) -> str:
        return f"{self.name}[{','.join(l.value for l in self.languages)}]"


@dataclass(frozen=True)
class Corpus:
    descriptor: CorpusDescriptor
    reports: tuple[Report, ...]
    split_of: Mapping[str, Split] = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.id for r in self.reports]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i, n in Counter(ids).items() if n > 1})
            raise DuplicateId(f"duplicate report ids: {dupes[:5]}")
        known = set(ids)
        unknown = set(self.split_of) - known
        if unknown:
            raise SchemaError(f"split assignment for unknown ids: {sorted(unknown)[:5]}")
        # Canonical form: UNASSIGNED entries are simply absent.
        cleaned = {k: Split(v) for k, v in self.split_of.items() if Split(v) is not Split.UNASSIGNED}
        object.__setattr__(self, "split_of", cleaned)
        object.__setattr__(self, "reports", tuple(self.reports))

    @property
    def size(self) -> int:
        return len(self.reports)

    def split_for(self, report_id: str) -> Split:
        return self.split_of.get(report_id, Split.UNASSIGNED)

    def reports_in(self, split: Split) -> tuple[Report, ...]:
        return tuple(r for r in self.reports if self.split_for(r.id) is split)

    def split_counts(self) -> dict[Split, int]:
        counts = {s: 0 for s in Split}
        for r in self.reports:
            counts[self.split_for(r.id)] += 1
        return counts


@dataclass(frozen=True)
class SplitSpec:
    """Either explicit per-split counts or ratios summing to 1."""

    counts: tuple[int, int, int] | None = None
    ratios: tuple[float, float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if (self.counts is None) == (self.ratios is None):
            raise ValueError("exactly one of counts or ratios must be given")
        if self.counts is not None and any(c < 0 for c in self.counts):
            raise ValueError("split counts must be non-negative")
        if self.ratios is not None:
            if any(not (0.0 <= r <= 1.0) for r in self.ratios):
                raise ValueError("split ratios must lie in [0, 1]")
            if abs(sum(self.ratios) - 1.0) > 1e-9:
                raise ValueError(f"split ratios must sum to 1, got {sum(self.ratios)}")

    @classmethod
    def from_counts(cls, train: int, validation: int, test: int, seed: int = 0) -> "SplitSpec":
        return cls(counts=(train, validation, test), seed=seed)

    @classmethod
    def from_ratios(cls, train: float, validation: float, test: float, seed: int = 0) -> "SplitSpec":
        return cls(ratios=(train, validation, test), seed=seed)

    def resolve(self, n: int) -> tuple[int, int, int]:
        """Concrete (train, validation, test) counts for a corpus of size n.

        Ratio specs use nearest-integer rounding for validation and test;
        the residual is absorbed by the train split.
        """
        if self.counts is not None:
            if sum(self.counts) != n:
                raise CountMismatch(f"explicit counts {self.counts} sum to {sum(self.counts)}, corpus has {n}")
            return self.counts
        assert self.ratios is not None
        n_val = round(self.ratios[1] * n)
        n_test = round(self.ratios[2] * n)
        n_train = n - n_val - n_test
        if n_train < 0:
            raise CountMismatch(f"rounded validation+test ({n_val}+{n_test}) exceed corpus size {n}")
        return (n_train, n_val, n_test)


# ---------------------------------------------------------------------------
# Section parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SectionMarkers:
    """Case-insensitive header names announcing each section."""

    background: tuple[str, ...]
    findings: tuple[str, ...]
    impression: tuple[str, ...]


DEFAULT_MARKERS: dict[Language, SectionMarkers] = {
    Language.EN: SectionMarkers(
        background=("BACKGROUND", "HISTORY", "CLINICAL HISTORY", "INDICATION", "CLINICAL INDICATION"),
        findings=("FINDINGS", "FINDING"),
        impression=("IMPRESSION", "IMPRESSIONS", "CONCLUSION"),
    ),
    Language.PT: SectionMarkers(
        background=("HISTORIA", "HISTÓRIA", "INDICACAO", "INDICAÇÃO", "ANTECEDENTES"),
        findings=("ACHADOS",),
        impression=("IMPRESSAO", "IMPRESSÃO", "CONCLUSAO", "CONCLUSÃO"),
    ),
    Language.GER: SectionMarkers(
        background=("ANAMNESE", "VORGESCHICHTE", "FRAGESTELLUNG", "INDIKATION", "KLINIK"),
        findings=("BEFUND", "BEFUNDE"),
        impression=("BEURTEILUNG", "ZUSAMMENFASSUNG", "EINDRUCK"),
    ),
}


def load_marker_table(path: str | Path) -> dict[Language, SectionMarkers]:
    """Read a {language: {section: [headers]}} JSON file."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    table = {}
    for code, sections in raw.items():
        table[Language(code)] = SectionMarkers(
            background=tuple(sections.get("background", ())),
            findings=tuple(sections.get("findings", ())),
            impression=tuple(sections.get("impression", ())),
        )
    return table


def _header_matches(raw: str, headers: Iterable[str], section: str) -> list[tuple[int, int, str]]:
    out = []
    for header in headers:
        pattern = re.compile(rf"(?im)^[ \t]*{re.escape(header)}[ \t]*:", re.UNICODE)
        out.extend((m.start(), m.end(), section) for m in pattern.finditer(raw))
    return out


def parse_report(
    raw: str,
    language: Language,
    markers: SectionMarkers | None = None,
    *,
    report_id: str = "",
    source: str = "",
) -> Report:
    """Split a semi-structured report into background / findings / impression.

    Each section runs from its header to the next recognized header (or end
    of text) and is whitespace-normalized. Findings and impression are
    required; raises MissingSection when either is absent or empty.
    """
    if not raw.strip():
        raise ValueError("raw report text is empty")
    if markers is None:
        markers = DEFAULT_MARKERS[language]

    matches = (
        _header_matches(raw, markers.background, "background")
        + _header_matches(raw, markers.findings, "findings")
        + _header_matches(raw, markers.impression, "impression")
    )
    matches.sort()

    sections: dict[str, str] = {}
    for i, (start, body_start, section) in enumerate(matches):
        body_end = matches[i + 1][0] if i + 1 < len(matches) else len(raw)
        body = normalize_whitespace(raw[body_start:body_end])
        if section not in sections and body:
            sections[section] = body

    for required in ("findings", "impression"):
        if required not in sections:
            raise MissingSection(required)

    return Report(
        id=report_id,
        language=language,
        findings=sections["findings"],
        impression=sections["impression"],
        background=sections.get("background"),
        source=source,
    )


# ---------------------------------------------------------------------------
# Balancing
# ---------------------------------------------------------------------------

def _largest_feasible_cap(counts: Sequence[int], cap_fraction: float) -> int:
    """Largest per-impression count c such that capping every count at c
    leaves all frequencies below cap_fraction of the capped total."""
    ordered = sorted(counts)
    prefix = [0]
    for c in ordered:
        prefix.append(prefix[-1] + c)
    max_count = ordered[-1]
    for cap in range(max_count, 0, -1):
        idx = bisect_right(ordered, cap)
        total = prefix[idx] + cap * (len(ordered) - idx)
        if cap < cap_fraction * total:
            return cap
    raise InfeasibleCap(
        f"no per-impression cap satisfies frequency < {cap_fraction} "
        f"over {len(ordered)} distinct impressions"
    )


def balance_corpus(corpus: Corpus, cap_fraction: float, seed: int) -> Corpus:
    """Downsample over-represented impressions until every normalized
    impression occurs less than cap_fraction of the time.

    Uses the largest uniform per-impression cap that satisfies the
    constraint against the post-removal total, which makes the operation
    deterministic, maximally data-preserving, and idempotent.
    """
    if not (0.0 < cap_fraction < 1.0):
        raise ValueError(f"cap_fraction must lie in (0, 1), got {cap_fraction}")
    if corpus.size == 0:
        raise ValueError("cannot balance an empty corpus")

    groups: dict[str, list[int]] = {}
    for idx, report in enumerate(corpus.reports):
        groups.setdefault(normalize_impression(report.impression), []).append(idx)

    cap = _largest_feasible_cap([len(g) for g in groups.values()], cap_fraction)

    rng = random.Random(f"balance:{seed}")
    keep: set[int] = set()
    for key in sorted(groups):
        members = groups[key]
        if len(members) <= cap:
            keep.update(members)
        else:
            keep.update(rng.sample(members, cap))

    survivors = tuple(r for i, r in enumerate(corpus.reports) if i in keep)
    if len(survivors) == corpus.size:
        return corpus
    surviving_ids = {r.id for r in survivors}
    split_of = {k: v for k, v in corpus.split_of.items() if k in surviving_ids}
    return Corpus(descriptor=corpus.descriptor, reports=survivors, split_of=split_of)


# ---------------------------------------------------------------------------
# Splitting and mixing
# ---------------------------------------------------------------------------

def split_corpus(corpus: Corpus, spec: SplitSpec) -> Corpus:
    """Assign every report to train/validation/test by a seeded shuffle."""
    if corpus.size == 0:
        raise ValueError("cannot split an empty corpus")
    n_train, n_val, _ = spec.resolve(corpus.size)
    order = list(range(corpus.size))
    random.Random(f"split:{spec.seed}").shuffle(order)

    split_of: dict[str, Split] = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            assigned = Split.TRAIN
        elif rank < n_train + n_val:
            assigned = Split.VALIDATION
        else:
            assigned = Split.TEST
        split_of[corpus.reports[idx].id] = assigned
    return Corpus(descriptor=corpus.descriptor, reports=corpus.reports, split_of=split_of)


def mix_multilingual(
    corpora: Sequence[Corpus],
    per_language_cap: int | None,
    spec: SplitSpec,
    seed: int,
) -> Corpus:
    """Combine monolingual corpora into one corpus with equal per-language
    contributions; absent an explicit cap, the smallest corpus sets it."""
    if len(corpora) < 2:
        raise ValueError("mixing needs at least two corpora")
    languages = [c.descriptor.language for c in corpora]
    if len(set(languages)) != len(languages):
        raise ValueError(f"corpora must have pairwise distinct languages, got {[l.value for l in languages]}")

    min_size = min(c.size for c in corpora)
    cap = min_size if per_language_cap is None else per_language_cap
    if cap > min_size:
        raise CapTooLarge(f"per-language cap {cap} exceeds smallest corpus size {min_size}")
    if cap < 1:
        raise ValueError("per-language cap must be at least 1")

    n_train, n_val, _ = spec.resolve(cap)

    mixed_reports: list[Report] = []
    split_of: dict[str, Split] = {}
    seen_ids: set[str] = set()
    for corp in corpora:
        lang = corp.descriptor.language.value
        indices = random.Random(f"mix:{seed}:{lang}").sample(range(corp.size), cap)
        sampled = [corp.reports[i] for i in sorted(indices)]
        for report in sampled:
            if report.id in seen_ids:
                raise DuplicateId(f"report id '{report.id}' occurs in more than one source corpus")
            seen_ids.add(report.id)
        mixed_reports.extend(sampled)

        order = list(range(len(sampled)))
        random.Random(f"mixsplit:{spec.seed}:{lang}").shuffle(order)
        for rank, idx in enumerate(order):
            if rank < n_train:
                assigned = Split.TRAIN
            elif rank < n_train + n_val:
                assigned = Split.VALIDATION
            else:
                assigned = Split.TEST
            split_of[sampled[idx].id] = assigned

    descriptor = CorpusDescriptor(
        name="mix(" + "+".join(c.descriptor.name for c in corpora) + ")",
        languages=tuple(languages),
    )
    return Corpus(descriptor=descriptor, reports=tuple(mixed_reports), split_of=split_of)


# ---------------------------------------------------------------------------
# Persistence (JSON Lines, one report per line)
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = ("id", "language", "findings", "impression", "source")


def derive_descriptor(reports: Sequence[Report]) -> CorpusDescriptor:
    """Descriptor implied by report contents: single shared source keeps its
    name, multiple sources become mix(a+b+...); languages in first-appearance
    order. save/load round-trips exactly for corpora produced by this module."""
    sources: list[str] = []
    languages: list[Language] = []
    for r in reports:
        if r.source not in sources:
            sources.append(r.source)
        if r.language not in languages:
            languages.append(r.language)
    name = sources[0] if len(sources) == 1 else "mix(" + "+".join(sources) + ")"
    return CorpusDescriptor(name=name, languages=tuple(languages))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in corpus.reports:
            record: dict = {"id": r.id, "language": r.language.value}
            if r.background is not None:
                record["background"] = r.background
            record["findings"] = r.findings
            record["impression"] = r.impression
            record["source"] = r.source
            split = corpus.split_for(r.id)
            if split is not Split.UNASSIGNED:
                record["split"] = split.value
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_corpus(path: str | Path, name: str | None = None) -> Corpus:
    path = Path(path)
    reports: list[Report] = []
    split_of: dict[str, Split] = {}
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            missing = [f for f in _REQUIRED_FIELDS if f not in record]
            if missing:
                raise SchemaError(f"{path}:{lineno}: missing required fields {missing}")
            try:
                language = Language(record["language"])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: unknown language '{record['language']}'") from exc
            if record["id"] in seen:
                raise DuplicateId(f"{path}:{lineno}: duplicate report id '{record['id']}'")
            seen.add(record["id"])
            reports.append(
                Report(
                    id=record["id"],
                    language=language,
                    findings=record["findings"],
                    impression=record["impression"],
                    background=record.get("background"),
                    source=record["source"],
                )
            )
            if "split" in record:
                try:
                    split_of[record["id"]] = Split(record["split"])
                except ValueError as exc:
                    raise SchemaError(f"{path}:{lineno}: unknown split '{record['split']}'") from exc
    if not reports:
        raise SchemaError(f"{path}: no records")
    descriptor = derive_descriptor(reports)
    if name is not None:
        descriptor = CorpusDescriptor(name=name, languages=descriptor.languages)
    return Corpus(descriptor=descriptor, reports=tuple(reports), split_of=split_of)
