from __future__ import annotations

import json
from pathlib import Path

from radsum.corpus import Corpus, CorpusDescriptor, Language, Report


def make_report(i: int, language: Language = Language.EN, findings: str | None = None,
                impression: str | None = None, source: str = "synthetic") -> Report:
    return Report(
        id=f"{language.value}-{i}",
        language=language,
        findings=findings if findings is not None else f"finding text number {i} with several tokens",
        impression=impression if impression is not None else f"impression {i}",
        source=source,
    )


def make_corpus(n: int, language: Language = Language.EN, name: str = "synthetic",
                impressions: list[str] | None = None) -> Corpus:
    reports = tuple(
        make_report(i, language,
                    impression=impressions[i] if impressions is not None else None,
                    source=name)
        for i in range(n)
    )
    return Corpus(descriptor=CorpusDescriptor.mono(name, language), reports=reports)


def write_dataset(path: Path, n_train: int, n_val: int = 1, n_test: int = 0,
                  input_field: str = "findings", target_field: str = "impression",
                  language: str = "en", tag: str = "") -> Path:
    """Write a synthetic JSONL training dataset with explicit splits."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        idx = 0
        for split, count in (("train", n_train), ("validation", n_val), ("test", n_test)):
            for _ in range(count):
                fh.write(json.dumps({
                    "id": f"{tag}{language}-{idx}",
                    "language": language,
                    input_field: f"{tag}finding tokens alpha beta gamma delta {idx}",
                    target_field: f"{tag}impression {idx}",
                    "split": split,
                    "source": "synthetic",
                }) + "\n")
                idx += 1
    return path


def make_paper_workspace(workspace: Path) -> Path:
    """Create desk-scale dataset files matching the shipped pipeline config."""
    data = workspace / "data"
    write_dataset(data / "marc_en.jsonl", 6, 2, 2,
                  input_field="review_body", target_field="review_title", tag="marc-")
    write_dataset(data / "mimic_rr1000_en.jsonl", 6, 2, 2, tag="mimic-")
    write_dataset(data / "mimic_parallel_en_pt.jsonl", 6, 2, 2,
                  input_field="source_text", target_field="target_text", tag="par-")
    write_dataset(data / "iu_xray_pt.jsonl", 6, 2, 2, language="pt", tag="iu-")
    write_dataset(data / "reports_ge.jsonl", 6, 2, 2, language="de", tag="ge-")
    write_dataset(data / "mix_en_pt_ge.jsonl", 6, 2, 2, tag="mix-")
    return workspace
