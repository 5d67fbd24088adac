#!/usr/bin/env python3
"""Generate a synthetic trilingual corpus for desk-scale experiments.

Writes raw sectioned report text under <out>/raw/<lang>/ and parsed corpus
files under <out>/data/<lang>.jsonl. The reports are template-based with a
controllable number of distinct impressions, so balancing and splitting
behave like they do on real data.
"""

from __future__ import annotations

import argparse
import random
from pathlib import Path

from radsum.corpus import Corpus, CorpusDescriptor, Language, parse_report, save_corpus

TEMPLATES = {
    Language.EN: ("HISTORY: {history} case {i}.\n"
                  "FINDINGS: lungs {state} volume {trend} device intact"
                  " case {i} region {r}.\n"
                  "IMPRESSION: {impression} category {r}.\n"),
    Language.PT: ("HISTORIA: {history} caso {i}.\n"
                  "ACHADOS: pulmoes {state} volume {trend} caso {i}"
                  " regiao {r}.\n"
                  "IMPRESSAO: {impression} categoria {r}.\n"),
    Language.GER: ("ANAMNESE: {history} fall {i}.\n"
                   "BEFUND: lunge {state} volumen {trend} fall {i}"
                   " region {r}.\n"
                   "BEURTEILUNG: {impression} kategorie {r}.\n"),
}

VOCAB = {
    Language.EN: {"history": ["follow up", "routine check", "dyspnea"],
                  "state": ["clear", "congested", "hyperinflated"],
                  "trend": ["stable", "increased", "decreased"],
                  "impression": ["stable exam", "mild congestion", "no acute disease"]},
    Language.PT: {"history": ["controle", "exame de rotina", "dispneia"],
                  "state": ["limpos", "congestos", "hiperinsuflados"],
                  "trend": ["estavel", "aumentado", "reduzido"],
                  "impression": ["exame estavel", "congestao leve", "sem doenca aguda"]},
    Language.GER: {"history": ["verlaufskontrolle", "routineuntersuchung", "dyspnoe"],
                   "state": ["frei", "gestaut", "ueberblaeht"],
                   "trend": ["stabil", "zunehmend", "abnehmend"],
                   "impression": ["stabiler befund", "leichte stauung",
                                  "keine akute erkrankung"]},
}


def generate_raw(language: Language, index: int, rng: random.Random,
                 distinct_impressions: int) -> str:
    vocab = VOCAB[language]
    return TEMPLATES[language].format(
        i=index,
        r=index % distinct_impressions,
        history=rng.choice(vocab["history"]),
        state=rng.choice(vocab["state"]),
        trend=rng.choice(vocab["trend"]),
        impression=rng.choice(vocab["impression"]),
    )


def generate_corpora(out: Path, per_language: int, seed: int,
                     distinct_impressions: int) -> dict[Language, Path]:
    rng = random.Random(seed)
    written = {}
    for language in (Language.EN, Language.PT, Language.GER):
        raw_dir = out / "raw" / language.value
        raw_dir.mkdir(parents=True, exist_ok=True)
        reports = []
        for index in range(per_language):
            raw = generate_raw(language, index, rng, distinct_impressions)
            (raw_dir / f"{language.value}-{index:04d}.txt").write_text(
                raw, encoding="utf-8")
            reports.append(parse_report(raw, language,
                                        report_id=f"{language.value}-{index:04d}",
                                        source="synthetic"))
        corpus = Corpus(CorpusDescriptor.mono(f"synthetic-{language.value}", language),
                        tuple(reports))
        corpus_path = out / "data" / f"{language.value}.jsonl"
        save_corpus(corpus, corpus_path)
        written[language] = corpus_path
        print(f"{language.value}: {per_language} raw reports -> {corpus_path}")
    return written


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--per-language", type=int, default=40,
                        help="reports per language (default 40)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--distinct-impressions", type=int, default=8,
                        help="size of the impression template pool per language")
    args = parser.parse_args()
    generate_corpora(Path(args.out), args.per_language, args.seed,
                     args.distinct_impressions)


if __name__ == "__main__":
    main()
