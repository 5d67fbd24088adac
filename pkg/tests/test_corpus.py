from __future__ import annotations

import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radsum.corpus import (
    CapTooLarge,
    Corpus,
    CorpusDescriptor,
    CountMismatch,
    DuplicateId,
    InfeasibleCap,
    Language,
    MissingSection,
    Report,
    SchemaError,
    Split,
    SplitSpec,
    balance_corpus,
    load_corpus,
    mix_multilingual,
    normalize_impression,
    parse_report,
    save_corpus,
    split_corpus,
)

from conftest import make_corpus, make_report
from oracles import balance_cap_oracle


# ---------------------------------------------------------------------------
# parse_report
# ---------------------------------------------------------------------------

def test_parse_three_sections():
    report = parse_report(
        "HISTORY: cough.\nFINDINGS: Clear lungs.\nIMPRESSION: No acute process.",
        Language.EN,
        report_id="r1",
    )
    assert report.background == "cough."
    assert report.findings == "Clear lungs."
    assert report.impression == "No acute process."


def test_parse_empty_impression_body_raises():
    with pytest.raises(MissingSection) as exc:
        parse_report("FINDINGS: Clear.\nIMPRESSION:", Language.EN)
    assert exc.value.section == "impression"


def test_parse_missing_findings_header_raises():
    with pytest.raises(MissingSection) as exc:
        parse_report("IMPRESSION: ok", Language.EN)
    assert exc.value.section == "findings"


def test_parse_normalizes_whitespace():
    report = parse_report("FINDINGS:   a   b \nIMPRESSION: ok", Language.EN)
    assert report.findings == "a b"


def test_parse_background_optional():
    report = parse_report("FINDINGS: f.\nIMPRESSION: i.", Language.EN)
    assert report.background is None


def test_parse_german_markers():
    report = parse_report(
        "ANAMNESE: Husten.\nBEFUND: Unauffaellig.\nBEURTEILUNG: Kein Befund.",
        Language.GER,
    )
    assert report.findings == "Unauffaellig."
    assert report.impression == "Kein Befund."


def test_parse_headers_case_insensitive():
    report = parse_report("findings: f.\nimpression: i.", Language.EN)
    assert report.findings == "f."


def test_parse_empty_raw_rejected():
    with pytest.raises(ValueError):
        parse_report("   ", Language.EN)


@given(
    background=st.text(alphabet="ab \n", max_size=12),
    findings=st.text(alphabet="abc \n", max_size=20),
    impression=st.text(alphabet="abc \n", max_size=20),
)
def test_parse_never_returns_empty_required_sections(background, findings, impression):
    raw = f"HISTORY:{background}\nFINDINGS:{findings}\nIMPRESSION:{impression}"
    try:
        report = parse_report(raw, Language.EN)
    except MissingSection:
        return
    assert report.findings
    assert report.impression


# ---------------------------------------------------------------------------
# balance_corpus
# ---------------------------------------------------------------------------

def test_balance_downsamples_frequent_impression():
    # 90 unique impressions plus one occurring 10 times; the oracle says the
    # largest workable cap is 1, leaving 91 reports.
    impressions = [f"unique {i}" for i in range(90)] + ["repeated finding"] * 10
    corpus = make_corpus(100, impressions=impressions)
    counts = list(Counter(impressions).values())
    assert balance_cap_oracle(counts, 0.02) == 1

    balanced = balance_corpus(corpus, cap_fraction=0.02, seed=7)
    assert balanced.size == 91
    freqs = Counter(normalize_impression(r.impression) for r in balanced.reports)
    assert freqs["repeated finding"] == 1
    assert all(v / balanced.size < 0.02 for v in freqs.values())


def test_balance_already_balanced_identity():
    corpus = make_corpus(51, impressions=[f"imp {i}" for i in range(51)])
    assert balance_corpus(corpus, cap_fraction=0.02, seed=3) == corpus


def test_balance_infeasible_cap():
    corpus = make_corpus(2, impressions=["same", "same"])
    with pytest.raises(InfeasibleCap):
        balance_corpus(corpus, cap_fraction=0.02, seed=1)


def test_balance_keeps_split_assignments_of_survivors():
    impressions = ["dup"] * 10 + [f"u{i}" for i in range(90)]
    corpus = split_corpus(make_corpus(100, impressions=impressions), SplitSpec.from_ratios(0.8, 0.1, 0.1, seed=5))
    balanced = balance_corpus(corpus, cap_fraction=0.02, seed=5)
    for r in balanced.reports:
        assert balanced.split_for(r.id) == corpus.split_for(r.id)


def test_balance_impression_equality_is_normalized():
    impressions = ["No  Change.", "no change.", "NO CHANGE. ", "other a", "other b"]
    corpus = make_corpus(5, impressions=impressions)
    balanced = balance_corpus(corpus, cap_fraction=0.5, seed=0)
    freqs = Counter(normalize_impression(r.impression) for r in balanced.reports)
    assert freqs["no change."] == 1


@st.composite
def small_corpora(draw):
    n = draw(st.integers(min_value=1, max_value=50))
    pool = [f"imp {k}" for k in range(8)]
    impressions = [draw(st.sampled_from(pool)) for _ in range(n)]
    cap_fraction = draw(st.sampled_from([0.02, 0.1, 0.25, 0.4, 0.6]))
    seed = draw(st.integers(min_value=0, max_value=10))
    return impressions, cap_fraction, seed


@settings(max_examples=150, deadline=None)
@given(small_corpora())
def test_balance_matches_oracle_and_is_idempotent(case):
    impressions, cap_fraction, seed = case
    corpus = make_corpus(len(impressions), impressions=impressions)
    counts = Counter(impressions)
    oracle_cap = balance_cap_oracle(list(counts.values()), cap_fraction)

    if oracle_cap is None:
        with pytest.raises(InfeasibleCap):
            balance_corpus(corpus, cap_fraction, seed)
        return

    balanced = balance_corpus(corpus, cap_fraction, seed)
    surviving = Counter(normalize_impression(r.impression) for r in balanced.reports)
    for imp, n in counts.items():
        assert surviving[normalize_impression(imp)] == min(n, oracle_cap)
    assert all(v / balanced.size < cap_fraction for v in surviving.values())
    assert balance_corpus(balanced, cap_fraction, seed) == balanced


def test_balance_deterministic_given_seed():
    impressions = ["dup"] * 20 + [f"u{i}" for i in range(80)]
    corpus = make_corpus(100, impressions=impressions)
    a = balance_corpus(corpus, 0.02, seed=11)
    b = balance_corpus(corpus, 0.02, seed=11)
    assert a == b


# ---------------------------------------------------------------------------
# split_corpus
# ---------------------------------------------------------------------------

def test_split_reproduces_german_corpus_counts():
    corpus = make_corpus(53385, Language.GER)
    split = split_corpus(corpus, SplitSpec.from_ratios(0.64, 0.16, 0.20, seed=1))
    counts = split.split_counts()
    assert counts[Split.TRAIN] == 34166
    assert counts[Split.VALIDATION] == 8542
    assert counts[Split.TEST] == 10677


def test_split_explicit_counts():
    corpus = make_corpus(1991, Language.PT)
    split = split_corpus(corpus, SplitSpec.from_counts(1591, 200, 200, seed=2))
    counts = split.split_counts()
    assert (counts[Split.TRAIN], counts[Split.VALIDATION], counts[Split.TEST]) == (1591, 200, 200)


def test_split_degenerate_ratio_all_train():
    corpus = make_corpus(10)
    split = split_corpus(corpus, SplitSpec.from_ratios(1.0, 0.0, 0.0, seed=3))
    assert split.split_counts()[Split.TRAIN] == 10


def test_split_count_mismatch():
    corpus = make_corpus(10)
    with pytest.raises(CountMismatch):
        split_corpus(corpus, SplitSpec.from_counts(5, 2, 2, seed=0))


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec.from_ratios(0.5, 0.3, 0.3)
    with pytest.raises(ValueError):
        SplitSpec(counts=(1, 1, 1), ratios=(0.4, 0.3, 0.3))
    with pytest.raises(ValueError):
        SplitSpec()


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=200),
    seed=st.integers(min_value=0, max_value=50),
)
def test_split_partitions_every_report(n, seed):
    corpus = make_corpus(n)
    split = split_corpus(corpus, SplitSpec.from_ratios(0.6, 0.2, 0.2, seed=seed))
    assert len(split.split_of) >= sum(1 for r in split.reports if split.split_for(r.id) is not Split.UNASSIGNED)
    assert split.split_counts()[Split.UNASSIGNED] == 0
    assert sum(v for k, v in split.split_counts().items() if k is not Split.UNASSIGNED) == n


def test_split_same_seed_identical_different_seed_differs():
    corpus = make_corpus(50)
    spec_a = SplitSpec.from_ratios(0.6, 0.2, 0.2, seed=1)
    assert split_corpus(corpus, spec_a).split_of == split_corpus(corpus, spec_a).split_of
    other = split_corpus(corpus, SplitSpec.from_ratios(0.6, 0.2, 0.2, seed=2))
    assert split_corpus(corpus, spec_a).split_of != other.split_of


# ---------------------------------------------------------------------------
# mix_multilingual
# ---------------------------------------------------------------------------

def _trilingual(sizes: dict[Language, int]) -> list[Corpus]:
    return [make_corpus(n, lang, name=f"src-{lang.value}") for lang, n in sizes.items()]


def test_mix_cap_defaults_to_smallest():
    corpora = _trilingual({Language.EN: 40, Language.PT: 25, Language.GER: 60})
    mixed = mix_multilingual(corpora, None, SplitSpec.from_counts(20, 3, 2, seed=1), seed=9)
    assert mixed.size == 75
    per_lang = Counter(r.language for r in mixed.reports)
    assert all(v == 25 for v in per_lang.values())


def test_mix_language_split_counts_identical():
    corpora = _trilingual({Language.EN: 30, Language.PT: 30, Language.GER: 30})
    mixed = mix_multilingual(corpora, 10, SplitSpec.from_counts(8, 1, 1, seed=4), seed=4)
    for lang in (Language.EN, Language.PT, Language.GER):
        counts = Counter(mixed.split_for(r.id) for r in mixed.reports if r.language is lang)
        assert (counts[Split.TRAIN], counts[Split.VALIDATION], counts[Split.TEST]) == (8, 1, 1)


def test_mix_cap_equal_to_min_size():
    corpora = [make_corpus(10, Language.EN, "a"), make_corpus(10, Language.PT, "b")]
    mixed = mix_multilingual(corpora, 10, SplitSpec.from_ratios(0.8, 0.1, 0.1, seed=0), seed=0)
    assert mixed.size == 20
    assert Counter(r.language for r in mixed.reports) == {Language.EN: 10, Language.PT: 10}


def test_mix_cap_too_large():
    corpora = [make_corpus(1991, Language.PT, "a"), make_corpus(5000, Language.EN, "b")]
    with pytest.raises(CapTooLarge):
        mix_multilingual(corpora, 2000, SplitSpec.from_counts(1600, 200, 200, seed=0), seed=0)


def test_mix_requires_distinct_languages():
    corpora = [make_corpus(5, Language.EN, "a"), make_corpus(5, Language.EN, "b")]
    with pytest.raises(ValueError):
        mix_multilingual(corpora, None, SplitSpec.from_ratios(1.0, 0.0, 0.0), seed=0)


def test_mix_rejects_colliding_ids():
    a = Corpus(
        descriptor=CorpusDescriptor.mono("a", Language.EN),
        reports=(Report("shared", Language.EN, "f", "i", source="a"),
                 Report("only-a", Language.EN, "f", "i", source="a")),
    )
    b = Corpus(
        descriptor=CorpusDescriptor.mono("b", Language.PT),
        reports=(Report("shared", Language.PT, "f", "i", source="b"),
                 Report("only-b", Language.PT, "f", "i", source="b")),
    )
    with pytest.raises(DuplicateId):
        mix_multilingual([a, b], 2, SplitSpec.from_counts(2, 0, 0), seed=0)


def test_mix_descriptor_records_sources():
    corpora = [make_corpus(5, Language.EN, "alpha"), make_corpus(5, Language.PT, "beta")]
    mixed = mix_multilingual(corpora, 5, SplitSpec.from_counts(4, 1, 0, seed=0), seed=0)
    assert mixed.descriptor.name == "mix(alpha+beta)"
    assert mixed.descriptor.languages == (Language.EN, Language.PT)


def test_mix_deterministic_by_seed():
    corpora = _trilingual({Language.EN: 40, Language.PT: 25, Language.GER: 60})
    spec = SplitSpec.from_counts(20, 3, 2, seed=1)
    a = mix_multilingual(corpora, None, spec, seed=9)
    b = mix_multilingual(corpora, None, spec, seed=9)
    assert a == b
    c = mix_multilingual(corpora, None, spec, seed=10)
    assert {r.id for r in a.reports} != {r.id for r in c.reports}


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    corpus = split_corpus(make_corpus(20, name="trip"), SplitSpec.from_ratios(0.5, 0.25, 0.25, seed=1))
    path = tmp_path / "corpus.jsonl"
    save_corpus(corpus, path)
    assert load_corpus(path) == corpus


def test_save_load_round_trip_mixed(tmp_path):
    corpora = [make_corpus(6, Language.EN, "a"), make_corpus(6, Language.PT, "b")]
    mixed = mix_multilingual(corpora, 6, SplitSpec.from_counts(4, 1, 1, seed=2), seed=2)
    path = tmp_path / "mixed.jsonl"
    save_corpus(mixed, path)
    assert load_corpus(path) == mixed


def test_load_missing_field_raises_schema_error(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"id": "r1", "language": "en", "impression": "i", "source": "s"}) + "\n")
    with pytest.raises(SchemaError):
        load_corpus(path)


def test_load_duplicate_id(tmp_path):
    line = json.dumps({"id": "r1", "language": "en", "findings": "f", "impression": "i", "source": "s"})
    path = tmp_path / "dup.jsonl"
    path.write_text(line + "\n" + line + "\n")
    with pytest.raises(DuplicateId):
        load_corpus(path)


def test_load_unknown_language(tmp_path):
    path = tmp_path / "lang.jsonl"
    path.write_text(json.dumps({"id": "r1", "language": "fr", "findings": "f", "impression": "i", "source": "s"}) + "\n")
    with pytest.raises(SchemaError):
        load_corpus(path)


def test_load_invalid_json(tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(SchemaError):
        load_corpus(path)


def test_corpus_rejects_duplicate_ids():
    with pytest.raises(DuplicateId):
        Corpus(
            descriptor=CorpusDescriptor.mono("x", Language.EN),
            reports=(make_report(1), make_report(1)),
        )
