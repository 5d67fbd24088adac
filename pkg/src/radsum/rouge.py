"""ROUGE-1/2/L/Lsum with multilingual tokenization, implemented from scratch.

Tokenization is Unicode-aware, case-folded, and unstemmed for every
language, which keeps scores comparable across English, Portuguese, and
German. All scoring functions are pure and thread-safe.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Language, SchemaError


class Variant(str, Enum):
    R1 = "rouge-1"
    R2 = "rouge-2"
    RL = "rouge-l"
    RLSUM = "rouge-lsum"


class EmptyPredictions(Exception):
    pass


@dataclass(frozen=True)
class RougeScore:
    variant: Variant
    precision: float
    recall: float
    f1: float


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str, language: Language | None = None) -> list[str]:
    """Case-folded alphanumeric tokens; no stemming for any language."""
    return _TOKEN_RE.findall(text.casefold())


# ---------------------------------------------------------------------------
# Sentence splitting (needed by ROUGE-Lsum)
# ---------------------------------------------------------------------------

DEFAULT_ABBREVIATIONS: dict[Language, frozenset[str]] = {
    Language.EN: frozenset({"dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "vs.", "no.", "e.g.", "i.e.", "fig."}),
    Language.PT: frozenset({"dr.", "dra.", "sr.", "sra.", "prof.", "ex.", "fig."}),
    Language.GER: frozenset({"dr.", "prof.", "ca.", "bzw.", "z.b.", "u.a.", "d.h.", "ggf.", "abb."}),
}

_BOUNDARY_RE = re.compile(r"[.!?]+(?=\s|$)")


def split_sentences(
    text: str,
    language: Language | None = None,
    abbreviations: Iterable[str] | None = None,
) -> list[str]:
    """Split on ., !, ? followed by whitespace or end of text, skipping
    boundaries right after a stop-listed abbreviation."""
    if abbreviations is None:
        abbreviations = DEFAULT_ABBREVIATIONS.get(language, frozenset()) if language else frozenset()
    stops = {a.casefold() for a in abbreviations}

    sentences: list[str] = []
    start = 0
    for match in _BOUNDARY_RE.finditer(text):
        end = match.end()
        preceding = text[start:end].rsplit(None, 1)
        last_word = preceding[-1].casefold() if preceding else ""
        if last_word in stops:
            continue
        sentence = text[start:end].strip()
        if sentence:
            sentences.append(sentence)
        start = end
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


# ---------------------------------------------------------------------------
# N-gram overlap
# ---------------------------------------------------------------------------

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str, reference: str, n: int, language: Language | None = None) -> RougeScore:
    """Clipped n-gram overlap: each reference n-gram can be matched at most
    as often as it occurs in the reference."""
    if n not in (1, 2):
        raise ValueError(f"n must be 1 or 2, got {n}")
    variant = Variant.R1 if n == 1 else Variant.R2
    cand = _ngrams(tokenize(candidate, language), n)
    ref = _ngrams(tokenize(reference, language), n)
    total_cand = sum(cand.values())
    total_ref = sum(ref.values())
    matched = sum((cand & ref).values())
    precision = matched / total_cand if total_cand else 0.0
    recall = matched / total_ref if total_ref else 0.0
    return RougeScore(variant, precision, recall, _f1(precision, recall))


# ---------------------------------------------------------------------------
# LCS-based variants
# ---------------------------------------------------------------------------

def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                row.append(prev[j - 1] + 1)
            else:
                row.append(max(prev[j], row[-1]))
        prev = row
    return prev[-1]


def rouge_l(candidate: str, reference: str, language: Language | None = None) -> RougeScore:
    cand = tokenize(candidate, language)
    ref = tokenize(reference, language)
    lcs = lcs_length(cand, ref)
    precision = lcs / len(cand) if cand else 0.0
    recall = lcs / len(ref) if ref else 0.0
    return RougeScore(Variant.RL, precision, recall, _f1(precision, recall))


def _lcs_matched_indices(ref: Sequence[str], cand: Sequence[str]) -> set[int]:
    """Reference-side indices matched by the canonical LCS backtrack."""
    m, n = len(ref), len(cand)
    table = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            if ref[i - 1] == cand[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    matched: set[int] = set()
    i, j = m, n
    while i > 0 and j > 0:
        if ref[i - 1] == cand[j - 1]:
            matched.add(i - 1)
            i -= 1
            j -= 1
        elif table[i - 1][j] >= table[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return matched


def _union_lcs_tokens(ref_sent: Sequence[str], cand_sents: Sequence[Sequence[str]]) -> list[str]:
    union: set[int] = set()
    for cand in cand_sents:
        union |= _lcs_matched_indices(ref_sent, cand)
    return [ref_sent[i] for i in sorted(union)]


def rouge_lsum(candidate: str, reference: str, language: Language | None = None) -> RougeScore:
    """Summary-level LCS: per reference sentence, the union of LCS matches
    against every candidate sentence; each token is credited at most once
    across the whole summary pair."""
    ref_sents = [tokenize(s, language) for s in split_sentences(reference, language)]
    cand_sents = [tokenize(s, language) for s in split_sentences(candidate, language)]
    ref_sents = [s for s in ref_sents if s]
    cand_sents = [s for s in cand_sents if s]

    total_ref = sum(len(s) for s in ref_sents)
    total_cand = sum(len(s) for s in cand_sents)
    if total_ref == 0 or total_cand == 0:
        return RougeScore(Variant.RLSUM, 0.0, 0.0, 0.0)

    ref_budget = Counter(tok for s in ref_sents for tok in s)
    cand_budget = Counter(tok for s in cand_sents for tok in s)
    hits = 0
    for ref_sent in ref_sents:
        for token in _union_lcs_tokens(ref_sent, cand_sents):
            if ref_budget[token] > 0 and cand_budget[token] > 0:
                hits += 1
                ref_budget[token] -= 1
                cand_budget[token] -= 1

    precision = hits / total_cand
    recall = hits / total_ref
    return RougeScore(Variant.RLSUM, precision, recall, _f1(precision, recall))


def score_pair(candidate: str, reference: str, language: Language | None = None) -> dict[Variant, RougeScore]:
    return {
        Variant.R1: rouge_n(candidate, reference, 1, language),
        Variant.R2: rouge_n(candidate, reference, 2, language),
        Variant.RL: rouge_l(candidate, reference, language),
        Variant.RLSUM: rouge_lsum(candidate, reference, language),
    }


# ---------------------------------------------------------------------------
# Corpus-level evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    """Per-variant mean F1 (scaled by 100) over a prediction set."""

    checkpoint: str
    corpus: str
    language: Language | None
    n_instances: int
    mean_f1: dict[Variant, float]

    def rounded(self) -> dict[str, float]:
        return {v.value: round(self.mean_f1[v], 2) for v in Variant}

    def to_row(self) -> str:
        scores = self.rounded()
        cells = " ".join(f"{scores[v.value]:.2f}" for v in Variant)
        return f"{self.checkpoint} {cells}"

    def to_json_dict(self) -> dict:
        out: dict = {
            "model": self.checkpoint,
            "corpus": self.corpus,
            "language": self.language.value if self.language else None,
            "instances": self.n_instances,
        }
        out.update(self.rounded())
        return out


def evaluate_pairs(
    pairs: Sequence[tuple[str, str]],
    language: Language | None = None,
    checkpoint: str = "",
    corpus: str = "",
) -> EvalReport:
    """Mean per-instance F1 for every variant over (generated, reference) pairs."""
    if not pairs:
        raise EmptyPredictions("no prediction pairs to evaluate")
    sums = {v: 0.0 for v in Variant}
    for generated, reference in pairs:
        for variant, score in score_pair(generated, reference, language).items():
            sums[variant] += score.f1
    means = {v: 100.0 * sums[v] / len(pairs) for v in Variant}
    return EvalReport(checkpoint=checkpoint, corpus=corpus, language=language,
                      n_instances=len(pairs), mean_f1=means)


def evaluate_model(
    predictions_file: str | Path,
    language: Language | None = None,
    checkpoint: str = "",
    corpus: str = "",
) -> EvalReport:
    """Score a predictions JSONL file of {id, generated, reference} records."""
    path = Path(predictions_file)
    pairs: list[tuple[str, str]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "generated" not in record or "reference" not in record:
                raise SchemaError(f"{path}:{lineno}: record needs 'generated' and 'reference'")
            pairs.append((record["generated"], record["reference"]))
    if not pairs:
        raise EmptyPredictions(f"{path}: no prediction records")
    return evaluate_pairs(pairs, language, checkpoint=checkpoint, corpus=corpus)
