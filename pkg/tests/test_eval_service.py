"""Session sampling, blinding, de-blinding, aggregation, and persistence."""

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from radsum.corpus import Corpus, CorpusDescriptor, Language, Report, Split, save_corpus
from radsum.eval_service import (
    DEFAULT_N_ITEMS,
    Blinding,
    Comparison,
    DeblindedComparison,
    EvalItem,
    EvalService,
    InsufficientItems,
    ItemStatus,
    NoRatings,
    ScoreOutOfRange,
    SessionStore,
    StaticItemSource,
    UnknownItem,
    UnknownSession,
    WorkspaceItemSource,
    deblind,
    load_eval_items,
)

FIXED_CLOCK = 1_700_000_000.0


def make_items(n, tag="it"):
    return [
        EvalItem(
            item_id=f"{tag}-{i:03d}",
            findings=f"lungs clear heart size normal study {i}",
            generated=f"impression variant one {i}",
            reference=f"impression variant two {i}",
        )
        for i in range(n)
    ]


def make_service(tmp_path, n_available=200, clock=lambda: FIXED_CLOCK):
    source = StaticItemSource()
    source.register("ckpt-a", "corpus-a", make_items(n_available))
    return EvalService(SessionStore(tmp_path / "eval"), source, clock=clock)


def new_session(service, n_items=30, seed=7):
    return service.create_session("ckpt-a", "corpus-a", Language.EN,
                                  n_items=n_items, seed=seed)


def positional_for(blinding, want):
    """Inverse of de-blinding: which positional choice yields `want`."""
    if want is DeblindedComparison.EQUAL:
        return Comparison.EQUAL
    want_generated = want is DeblindedComparison.GS_BETTER
    generated_first = blinding is Blinding.GS_FIRST
    if want_generated == generated_first:
        return Comparison.FIRST_BETTER
    return Comparison.SECOND_BETTER


def rate_all(service, session, wants, scores):
    """Rate every item to de-blind to wants[i] with scores (r, fcc, oq)[i]."""
    for item_id, want, (r, fcc, oq) in zip(session.item_ids, wants, scores):
        choice = positional_for(session.blinding[item_id], want)
        service.submit_rating(session.session_id, item_id, choice, r, fcc, oq)


# ---------------------------------------------------------------------------
# create_session
# ---------------------------------------------------------------------------

class TestCreateSession:
    def test_samples_exactly_n_distinct_items(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=30)
        assert session.n_items == 30
        assert len(set(session.item_ids)) == 30
        assert all(i.startswith("it-") for i in session.item_ids)
        assert set(session.status.values()) == {ItemStatus.PENDING}
        assert set(session.blinding) == set(session.item_ids)
        assert set(session.blinding.values()) <= {Blinding.GS_FIRST, Blinding.RS_FIRST}

    def test_default_size_is_thirty(self, tmp_path):
        service = make_service(tmp_path)
        session = service.create_session("ckpt-a", "corpus-a", Language.EN, seed=1)
        assert DEFAULT_N_ITEMS == 30
        assert session.n_items == 30

    def test_blinding_uses_both_orders(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=30, seed=3)
        assert set(session.blinding.values()) == {Blinding.GS_FIRST, Blinding.RS_FIRST}

    def test_insufficient_items(self, tmp_path):
        service = make_service(tmp_path, n_available=10)
        with pytest.raises(InsufficientItems):
            new_session(service, n_items=30)

    def test_unknown_corpus_is_insufficient(self, tmp_path):
        service = make_service(tmp_path)
        with pytest.raises(InsufficientItems):
            service.create_session("ckpt-a", "no-such-corpus", Language.EN, n_items=5)

    def test_n_items_must_be_positive(self, tmp_path):
        service = make_service(tmp_path)
        with pytest.raises(InsufficientItems):
            new_session(service, n_items=0)

    def test_same_seed_reproduces_items_and_blinding(self, tmp_path):
        service = make_service(tmp_path)
        first = new_session(service, seed=42)
        second = new_session(service, seed=42)
        assert first.session_id != second.session_id
        assert first.item_ids == second.item_ids
        assert first.blinding == second.blinding

    def test_different_seeds_differ(self, tmp_path):
        service = make_service(tmp_path)
        first = new_session(service, seed=1)
        second = new_session(service, seed=2)
        assert first.item_ids != second.item_ids

    def test_session_persisted_across_service_restart(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=3)
        reborn = EvalService(SessionStore(tmp_path / "eval"), StaticItemSource())
        loaded = reborn.get_session(session.session_id)
        assert loaded.item_ids == session.item_ids
        assert loaded.blinding == session.blinding
        assert reborn.next_item(session.session_id).item_id == session.item_ids[0]


# ---------------------------------------------------------------------------
# next_item
# ---------------------------------------------------------------------------

class TestNextItem:
    def test_serves_first_pending_in_session_order(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=5)
        item = service.next_item(session.session_id)
        assert item.item_id == session.item_ids[0]
        assert item.rated == 0 and item.total == 5

    def test_summary_order_follows_blinding(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=10, seed=3)
        by_id = {i.item_id: i for i in make_items(200)}
        for _ in range(10):
            payload = service.next_item(session.session_id)
            source_item = by_id[payload.item_id]
            if session.blinding[payload.item_id] is Blinding.GS_FIRST:
                assert payload.summary_first == source_item.generated
                assert payload.summary_second == source_item.reference
            else:
                assert payload.summary_first == source_item.reference
                assert payload.summary_second == source_item.generated
            assert payload.findings == source_item.findings
            service.submit_rating(session.session_id, payload.item_id,
                                  Comparison.EQUAL, 3, 3, 3)
        assert service.next_item(session.session_id) is None

    def test_progress_advances_with_ratings(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=4)
        first = service.next_item(session.session_id)
        service.submit_rating(session.session_id, first.item_id,
                              Comparison.FIRST_BETTER, 5, 5, 5)
        second = service.next_item(session.session_id)
        assert second.item_id == session.item_ids[1]
        assert second.rated == 1 and second.total == 4

    def test_unknown_session(self, tmp_path):
        service = make_service(tmp_path)
        with pytest.raises(UnknownSession):
            service.next_item("nope")


# ---------------------------------------------------------------------------
# submit_rating and de-blinding
# ---------------------------------------------------------------------------

DEBLIND_TRUTH_TABLE = [
    (Blinding.GS_FIRST, Comparison.FIRST_BETTER, DeblindedComparison.GS_BETTER),
    (Blinding.GS_FIRST, Comparison.EQUAL, DeblindedComparison.EQUAL),
    (Blinding.GS_FIRST, Comparison.SECOND_BETTER, DeblindedComparison.RS_BETTER),
    (Blinding.RS_FIRST, Comparison.FIRST_BETTER, DeblindedComparison.RS_BETTER),
    (Blinding.RS_FIRST, Comparison.EQUAL, DeblindedComparison.EQUAL),
    (Blinding.RS_FIRST, Comparison.SECOND_BETTER, DeblindedComparison.GS_BETTER),
]


class TestSubmitRating:
    @pytest.mark.parametrize("blinding,choice,expected", DEBLIND_TRUTH_TABLE)
    def test_deblind_truth_table(self, blinding, choice, expected):
        assert deblind(blinding, choice) is expected

    @given(
        blinding=st.sampled_from(list(Blinding)),
        choice=st.sampled_from(list(Comparison)),
    )
    def test_deblind_round_trip_property(self, blinding, choice):
        stored = deblind(blinding, choice)
        if choice is Comparison.EQUAL:
            assert stored is DeblindedComparison.EQUAL
        else:
            picked_generated = (choice is Comparison.FIRST_BETTER) == (
                blinding is Blinding.GS_FIRST)
            expected = (DeblindedComparison.GS_BETTER if picked_generated
                        else DeblindedComparison.RS_BETTER)
            assert stored is expected

    def _session_with_first_item_blinded(self, tmp_path, wanted):
        service = make_service(tmp_path)
        for seed in range(50):
            session = new_session(service, n_items=3, seed=seed)
            if session.blinding[session.item_ids[0]] is wanted:
                return service, session
        raise AssertionError(f"no seed in 0..49 yields {wanted} first")

    def test_rs_first_second_better_stores_gs_better(self, tmp_path):
        service, session = self._session_with_first_item_blinded(
            tmp_path, Blinding.RS_FIRST)
        record = service.submit_rating(session.session_id, session.item_ids[0],
                                       Comparison.SECOND_BETTER, 4, 4, 4)
        assert record.comparison is DeblindedComparison.GS_BETTER

    def test_gs_first_first_better_stores_gs_better(self, tmp_path):
        service, session = self._session_with_first_item_blinded(
            tmp_path, Blinding.GS_FIRST)
        record = service.submit_rating(session.session_id, session.item_ids[0],
                                       Comparison.FIRST_BETTER, 4, 4, 4)
        assert record.comparison is DeblindedComparison.GS_BETTER

    def test_marks_item_rated(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=3)
        item_id = session.item_ids[0]
        service.submit_rating(session.session_id, item_id, Comparison.EQUAL, 3, 3, 3)
        assert service.get_session(session.session_id).status[item_id] is ItemStatus.RATED

    @pytest.mark.parametrize("scores", [(6, 3, 3), (3, 0, 3), (3, 3, -1), (10, 10, 10)])
    def test_score_out_of_range(self, tmp_path, scores):
        service = make_service(tmp_path)
        session = new_session(service, n_items=3)
        with pytest.raises(ScoreOutOfRange):
            service.submit_rating(session.session_id, session.item_ids[0],
                                  Comparison.EQUAL, *scores)

    def test_non_integer_scores_rejected(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=3)
        with pytest.raises(ScoreOutOfRange):
            service.submit_rating(session.session_id, session.item_ids[0],
                                  Comparison.EQUAL, 4.5, 3, 3)
        with pytest.raises(ScoreOutOfRange):
            service.submit_rating(session.session_id, session.item_ids[0],
                                  Comparison.EQUAL, True, 3, 3)

    def test_unknown_item(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=3)
        with pytest.raises(UnknownItem):
            service.submit_rating(session.session_id, "it-999",
                                  Comparison.EQUAL, 3, 3, 3)

    def test_unknown_session(self, tmp_path):
        service = make_service(tmp_path)
        with pytest.raises(UnknownSession):
            service.submit_rating("nope", "it-000", Comparison.EQUAL, 3, 3, 3)

    def test_resubmission_replaces_but_audit_keeps_both(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=3)
        item_id = session.item_ids[0]
        service.submit_rating(session.session_id, item_id, Comparison.EQUAL, 2, 2, 2)
        service.submit_rating(session.session_id, item_id,
                              Comparison.FIRST_BETTER, 5, 4, 3)
        state_session = service.get_session(session.session_id)
        assert state_session.rated_count() == 1  # no double count
        log = service.audit_log(session.session_id)
        assert len(log) == 2
        assert log[0]["replaces_prior"] is False
        assert log[1]["replaces_prior"] is True
        summary = service.aggregate_session(session.session_id)
        assert (summary.mean_r, summary.mean_fcc, summary.mean_oq) == (5.0, 4.0, 3.0)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

class TestAggregateSession:
    def test_no_ratings(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=3)
        with pytest.raises(NoRatings):
            service.aggregate_session(session.session_id)

    def test_results_table_row_reproduced(self, tmp_path):
        """28-of-30 generated-better-or-equal with crafted score vectors."""
        service = make_service(tmp_path)
        session = new_session(service, n_items=30, seed=11)
        wants = ([DeblindedComparison.GS_BETTER] * 20
                 + [DeblindedComparison.EQUAL] * 8
                 + [DeblindedComparison.RS_BETTER] * 2)
        r_scores = [5] * 27 + [4] * 3          # sums to 147 -> mean 4.90
        fcc_scores = [5] * 7 + [4] * 23        # sums to 127 -> mean 4.233...
        oq_scores = [5] * 12 + [4] * 18        # sums to 132 -> mean 4.40
        assert sum(r_scores) == 147 and sum(fcc_scores) == 127 and sum(oq_scores) == 132
        rate_all(service, session, wants, list(zip(r_scores, fcc_scores, oq_scores)))
        summary = service.aggregate_session(session.session_id)
        assert summary.rated == 30 and summary.total == 30
        assert abs(summary.ge_fraction - 93.33) < 0.005
        assert summary.mean_r == 147 / 30
        assert summary.mean_fcc == 127 / 30
        assert summary.mean_oq == 132 / 30
        assert summary.to_row() == "93.33 4.90 4.23 4.40"

    def test_all_equal_all_threes(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=30, seed=5)
        wants = [DeblindedComparison.EQUAL] * 30
        rate_all(service, session, wants, [(3, 3, 3)] * 30)
        summary = service.aggregate_session(session.session_id)
        assert summary.ge_fraction == 100.0
        assert (summary.mean_r, summary.mean_fcc, summary.mean_oq) == (3.0, 3.0, 3.0)

    def test_single_item_all_fives_generated_better(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=1, seed=5)
        rate_all(service, session, [DeblindedComparison.GS_BETTER], [(5, 5, 5)])
        summary = service.aggregate_session(session.session_id)
        assert summary.rounded() == summary.__class__(100.0, 5.0, 5.0, 5.0, 1, 1)

    def test_partial_session_aggregates_over_rated_only(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=30, seed=5)
        for item_id, score in zip(session.item_ids[:3], (1, 2, 3)):
            choice = positional_for(session.blinding[item_id],
                                    DeblindedComparison.RS_BETTER)
            service.submit_rating(session.session_id, item_id, choice,
                                  score, score, score)
        summary = service.aggregate_session(session.session_id)
        assert summary.rated == 3 and summary.total == 30
        assert summary.ge_fraction == 0.0
        assert summary.mean_r == 2.0

    @given(
        n_ge=st.integers(min_value=0, max_value=12),
        n_rs=st.integers(min_value=0, max_value=12),
        scores=st.lists(st.integers(min_value=1, max_value=5),
                        min_size=1, max_size=24),
    )
    def test_ge_fraction_and_means_match_hand_arithmetic(self, n_ge, n_rs, scores):
        total = n_ge + n_rs
        if total == 0 or total > 24:
            return
        scores = (scores * ((total // len(scores)) + 1))[:total]
        source = StaticItemSource()
        source.register("c", "k", make_items(24, tag="p"))
        import tempfile

        with tempfile.TemporaryDirectory() as root:
            service = EvalService(SessionStore(root), source)
            session = service.create_session("c", "k", Language.EN,
                                             n_items=total, seed=1)
            wants = ([DeblindedComparison.GS_BETTER] * n_ge
                     + [DeblindedComparison.RS_BETTER] * n_rs)
            rate_all(service, session, wants, [(s, s, s) for s in scores])
            summary = service.aggregate_session(session.session_id)
            assert summary.ge_fraction == pytest.approx(100.0 * n_ge / total)
            assert summary.mean_r == pytest.approx(sum(scores) / total)


# ---------------------------------------------------------------------------
# export and persistence details
# ---------------------------------------------------------------------------

class TestExportAndStore:
    def test_csv_columns_and_order(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=3, seed=2)
        wants = [DeblindedComparison.GS_BETTER, DeblindedComparison.EQUAL,
                 DeblindedComparison.RS_BETTER]
        rate_all(service, session, wants, [(5, 4, 3), (3, 3, 3), (1, 2, 3)])
        csv_text = service.export_csv(session.session_id)
        lines = csv_text.strip().splitlines()
        assert lines[0] == "item_id,comparison_deblinded,r,fcc,oq,timestamp"
        assert len(lines) == 4
        rows = [line.split(",") for line in lines[1:]]
        assert [row[0] for row in rows] == list(session.item_ids)
        assert [row[1] for row in rows] == ["GS_BETTER", "EQUAL", "RS_BETTER"]
        assert rows[0][2:5] == ["5", "4", "3"]
        assert all(row[5] == "2023-11-14T22:13:20+00:00" for row in rows)

    def test_csv_skips_pending_items(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=5, seed=2)
        item_id = session.item_ids[2]
        choice = positional_for(session.blinding[item_id], DeblindedComparison.EQUAL)
        service.submit_rating(session.session_id, item_id, choice, 3, 3, 3)
        lines = service.export_csv(session.session_id).strip().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith(item_id + ",")

    def test_ratings_survive_restart(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=3, seed=2)
        rate_all(service, session,
                 [DeblindedComparison.GS_BETTER] * 3, [(5, 5, 5)] * 3)
        reborn = EvalService(SessionStore(tmp_path / "eval"), StaticItemSource())
        summary = reborn.aggregate_session(session.session_id)
        assert summary.ge_fraction == 100.0 and summary.rated == 3
        assert reborn.next_item(session.session_id) is None

    def test_audit_log_is_append_only_jsonl(self, tmp_path):
        service = make_service(tmp_path)
        session = new_session(service, n_items=2, seed=2)
        rate_all(service, session,
                 [DeblindedComparison.EQUAL] * 2, [(3, 3, 3), (4, 4, 4)])
        log_path = (tmp_path / "eval" / "sessions" / session.session_id
                    / "ratings.log")
        lines = log_path.read_text(encoding="utf-8").strip().splitlines()
        assert len(lines) == 2
        entries = [json.loads(line) for line in lines]
        assert {e["item_id"] for e in entries} == set(session.item_ids)
        assert all(set(e) == {"item_id", "comparison", "comparison_deblinded",
                              "r", "fcc", "oq", "timestamp", "replaces_prior"}
                   for e in entries)


# ---------------------------------------------------------------------------
# item sources
# ---------------------------------------------------------------------------

class TestItemSources:
    def _workspace(self, tmp_path):
        reports = []
        split_of = {}
        for i in range(8):
            rid = f"r-{i}"
            reports.append(Report(
                id=rid, language=Language.EN,
                findings=f"clear lungs study {i}",
                impression=f"no acute disease {i}" if i != 6 else "  ",
                source="unit",
            ))
            split_of[rid] = Split.TEST if i < 7 else Split.TRAIN
        corpus = Corpus(CorpusDescriptor.mono("chest", Language.EN),
                        tuple(reports), split_of)
        save_corpus(corpus, tmp_path / "data" / "chest.jsonl")
        predictions = tmp_path / "predictions" / "ck" / "chest.jsonl"
        predictions.parent.mkdir(parents=True)
        with predictions.open("w", encoding="utf-8") as fh:
            for i in range(8):
                if i == 5:
                    continue  # no model output for r-5
                fh.write(json.dumps({"id": f"r-{i}",
                                     "generated": f"auto impression {i}"}) + "\n")
        return tmp_path

    def test_load_eval_items_joins_test_split(self, tmp_path):
        ws = self._workspace(tmp_path)
        items = load_eval_items(ws / "data" / "chest.jsonl",
                                ws / "predictions" / "ck" / "chest.jsonl",
                                Language.EN)
        # 8 reports minus: r-7 (train split), r-5 (no model output),
        # r-6 (blank human summary)
        assert [i.item_id for i in items] == ["r-0", "r-1", "r-2", "r-3", "r-4"]
        assert items[0].generated == "auto impression 0"
        assert items[0].reference == "no acute disease 0"
        assert items[0].findings == "clear lungs study 0"

    def test_load_eval_items_filters_language(self, tmp_path):
        ws = self._workspace(tmp_path)
        items = load_eval_items(ws / "data" / "chest.jsonl",
                                ws / "predictions" / "ck" / "chest.jsonl",
                                Language.PT)
        assert items == ()

    def test_workspace_source_resolves_layout(self, tmp_path):
        ws = self._workspace(tmp_path)
        source = WorkspaceItemSource(ws)
        items = source.load("ck", "chest", Language.EN)
        assert len(items) == 5

    def test_workspace_source_missing_files_yield_nothing(self, tmp_path):
        source = WorkspaceItemSource(tmp_path)
        assert source.load("ck", "chest", Language.EN) == ()
