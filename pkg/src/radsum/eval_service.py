"""Blind side-by-side human evaluation of generated vs. reference summaries.

A session samples items from a corpus test split (each item pairs a model
summary with the human-written one), presents the two summaries in a
seed-randomized order that is never revealed to the rater, collects a
positional preference plus three 1-5 scores per item, de-blinds the
preference server-side, and aggregates into a preference percentage and
three mean scores.

Persistence is an append-only rating log plus materialized session state;
resubmissions replace the effective rating but every submission stays in
the log. Per-session writes are serialized; reads use the materialized
in-memory state.
"""

from __future__ import annotations

import csv
import io
import json
import random
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .corpus import Language, Split, load_corpus


class EvalServiceError(Exception):
    pass


class InsufficientItems(EvalServiceError):
    pass


class UnknownSession(EvalServiceError):
    pass


class UnknownItem(EvalServiceError):
    pass


class ScoreOutOfRange(EvalServiceError):
    pass


class NoRatings(EvalServiceError):
    pass


class Blinding(str, Enum):
    """Which summary occupies the first panel for one item."""

    GS_FIRST = "GS_FIRST"
    RS_FIRST = "RS_FIRST"


class Comparison(str, Enum):
    """The rater's positional preference."""

    FIRST_BETTER = "FIRST_BETTER"
    EQUAL = "EQUAL"
    SECOND_BETTER = "SECOND_BETTER"


class DeblindedComparison(str, Enum):
    """The stored, semantic preference after undoing the blinding."""

    GS_BETTER = "GS_BETTER"
    EQUAL = "EQUAL"
    RS_BETTER = "RS_BETTER"


class ItemStatus(str, Enum):
    PENDING = "PENDING"
    RATED = "RATED"


DEFAULT_N_ITEMS = 30


def deblind(blinding: Blinding, comparison: Comparison) -> DeblindedComparison:
    """Map a positional choice back to generated-vs-reference terms."""
    if comparison is Comparison.EQUAL:
        return DeblindedComparison.EQUAL
    first_is_generated = blinding is Blinding.GS_FIRST
    picked_first = comparison is Comparison.FIRST_BETTER
    if picked_first == first_is_generated:
        return DeblindedComparison.GS_BETTER
    return DeblindedComparison.RS_BETTER


@dataclass(frozen=True)
class EvalItem:
    """One comparison unit; which text is generated stays server-side."""

    item_id: str
    findings: str
    generated: str
    reference: str


@dataclass
class EvalSession:
    session_id: str
    checkpoint: str
    language: Language
    item_ids: tuple[str, ...]
    blinding: dict[str, Blinding]
    status: dict[str, ItemStatus]
    seed: int

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def rated_count(self) -> int:
        return sum(1 for s in self.status.values() if s is ItemStatus.RATED)


@dataclass(frozen=True)
class RatingRecord:
    """The effective rating for one item, already de-blinded."""

    item_id: str
    comparison: DeblindedComparison
    readability: int
    fcc: int
    overall: int
    timestamp: str


@dataclass(frozen=True)
class SessionSummary:
    ge_fraction: float
    mean_r: float
    mean_fcc: float
    mean_oq: float
    rated: int
    total: int

    def rounded(self) -> "SessionSummary":
        return SessionSummary(
            ge_fraction=round(self.ge_fraction, 2),
            mean_r=round(self.mean_r, 2),
            mean_fcc=round(self.mean_fcc, 2),
            mean_oq=round(self.mean_oq, 2),
            rated=self.rated,
            total=self.total,
        )

    def to_row(self) -> str:
        r = self.rounded()
        return f"{r.ge_fraction:.2f} {r.mean_r:.2f} {r.mean_fcc:.2f} {r.mean_oq:.2f}"


@dataclass(frozen=True)
class NextItem:
    """Rater-facing payload: two unlabeled summaries in blinded order."""

    item_id: str
    findings: str
    summary_first: str
    summary_second: str
    rated: int
    total: int


# ---------------------------------------------------------------------------
# Item sources
# ---------------------------------------------------------------------------

class ItemSource(Protocol):
    def load(self, checkpoint: str, corpus: str, language: Language) -> Sequence[EvalItem]: ...


class StaticItemSource:
    """In-memory item lists keyed by (checkpoint, corpus); for tests and
    programmatic embedding."""

    def __init__(self) -> None:
        self._items: dict[tuple[str, str], tuple[EvalItem, ...]] = {}

    def register(self, checkpoint: str, corpus: str, items: Sequence[EvalItem]) -> None:
        self._items[(checkpoint, corpus)] = tuple(items)

    def load(self, checkpoint: str, corpus: str, language: Language) -> Sequence[EvalItem]:
        return self._items.get((checkpoint, corpus), ())


class WorkspaceItemSource:
    """Joins a workspace corpus test split with a predictions file.

    Layout: corpora at ``<workspace>/data/<corpus>.jsonl`` and predictions
    (as written by summarize_corpus) at
    ``<workspace>/predictions/<checkpoint>/<corpus>.jsonl``.
    """

    def __init__(self, workspace: str | Path):
        self.workspace = Path(workspace)

    def load(self, checkpoint: str, corpus: str, language: Language) -> Sequence[EvalItem]:
        corpus_path = self.workspace / "data" / f"{corpus}.jsonl"
        predictions_path = self.workspace / "predictions" / checkpoint / f"{corpus}.jsonl"
        if not corpus_path.exists() or not predictions_path.exists():
            return ()
        return load_eval_items(corpus_path, predictions_path, language)


def load_eval_items(
    corpus_path: str | Path,
    predictions_path: str | Path,
    language: Language,
) -> tuple[EvalItem, ...]:
    """Join test-split reports with generated summaries by report id; only
    items with both a non-empty generated and reference summary qualify."""
    corpus = load_corpus(corpus_path)
    generated: dict[str, str] = {}
    with Path(predictions_path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            generated[record["id"]] = record.get("generated", "")
    items = []
    for report in corpus.reports_in(Split.TEST):
        if report.language is not language:
            continue
        summary = generated.get(report.id, "")
        if summary.strip() and report.impression.strip():
            items.append(EvalItem(
                item_id=report.id,
                findings=report.findings,
                generated=summary,
                reference=report.impression,
            ))
    return tuple(items)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

class SessionStore:
    """Directory-backed persistence: one folder per session holding the
    materialized session state, the server-side item texts, and the
    append-only rating log."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _session_dir(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id

    def save_session(self, session: EvalSession, items: Sequence[EvalItem]) -> None:
        directory = self._session_dir(session.session_id)
        directory.mkdir(parents=True, exist_ok=True)
        self._write_state(session)
        items_payload = [
            {"item_id": i.item_id, "findings": i.findings,
             "generated": i.generated, "reference": i.reference}
            for i in items
        ]
        self._atomic_write(directory / "items.json",
                           json.dumps(items_payload, ensure_ascii=False, indent=2))

    def _write_state(self, session: EvalSession) -> None:
        directory = self._session_dir(session.session_id)
        state = {
            "session_id": session.session_id,
            "checkpoint": session.checkpoint,
            "language": session.language.value,
            "item_ids": list(session.item_ids),
            "blinding": {k: v.value for k, v in session.blinding.items()},
            "status": {k: v.value for k, v in session.status.items()},
            "seed": session.seed,
        }
        self._atomic_write(directory / "session.json", json.dumps(state, indent=2))

    @staticmethod
    def _atomic_write(path: Path, text: str) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(path)

    def update_status(self, session: EvalSession) -> None:
        self._write_state(session)

    def load_session(self, session_id: str) -> tuple[EvalSession, tuple[EvalItem, ...]]:
        directory = self._session_dir(session_id)
        state_path = directory / "session.json"
        if not state_path.exists():
            raise UnknownSession(f"no session {session_id!r}")
        state = json.loads(state_path.read_text(encoding="utf-8"))
        session = EvalSession(
            session_id=state["session_id"],
            checkpoint=state["checkpoint"],
            language=Language(state["language"]),
            item_ids=tuple(state["item_ids"]),
            blinding={k: Blinding(v) for k, v in state["blinding"].items()},
            status={k: ItemStatus(v) for k, v in state["status"].items()},
            seed=state["seed"],
        )
        items = tuple(
            EvalItem(**entry)
            for entry in json.loads((directory / "items.json").read_text(encoding="utf-8"))
        )
        return session, items

    def append_rating(self, session_id: str, entry: dict) -> None:
        log_path = self._session_dir(session_id) / "ratings.log"
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
            fh.flush()

    def load_audit_log(self, session_id: str) -> list[dict]:
        log_path = self._session_dir(session_id) / "ratings.log"
        if not log_path.exists():
            return []
        entries = []
        with log_path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        return entries

    def load_ratings(self, session_id: str) -> dict[str, RatingRecord]:
        """Materialize effective ratings from the log; last submission wins."""
        ratings: dict[str, RatingRecord] = {}
        for entry in self.load_audit_log(session_id):
            ratings[entry["item_id"]] = RatingRecord(
                item_id=entry["item_id"],
                comparison=DeblindedComparison(entry["comparison_deblinded"]),
                readability=entry["r"],
                fcc=entry["fcc"],
                overall=entry["oq"],
                timestamp=entry["timestamp"],
            )
        return ratings

    def list_sessions(self) -> list[str]:
        sessions_dir = self.root / "sessions"
        if not sessions_dir.exists():
            return []
        return sorted(p.name for p in sessions_dir.iterdir() if (p / "session.json").exists())


# ---------------------------------------------------------------------------
# Service
# ---------------------------------------------------------------------------

@dataclass
class _SessionState:
    session: EvalSession
    items: dict[str, EvalItem]
    ratings: dict[str, RatingRecord]
    lock: threading.Lock = field(default_factory=threading.Lock)


class EvalService:
    """Session lifecycle: create -> next_item/submit_rating loop -> aggregate."""

    def __init__(
        self,
        store: SessionStore,
        source: ItemSource,
        *,
        clock: Callable[[], float] = time.time,
    ):
        self.store = store
        self.source = source
        self._clock = clock
        self._sessions: dict[str, _SessionState] = {}
        self._registry_lock = threading.Lock()

    # -- session lifecycle ---------------------------------------------------

    def create_session(
        self,
        checkpoint: str,
        corpus: str,
        language: Language,
        n_items: int = DEFAULT_N_ITEMS,
        seed: int = 0,
    ) -> EvalSession:
        if n_items < 1:
            raise InsufficientItems(f"n_items must be >= 1, got {n_items}")
        eligible = list(self.source.load(checkpoint, corpus, language))
        if len(eligible) < n_items:
            raise InsufficientItems(
                f"need {n_items} rateable test items for checkpoint {checkpoint!r} "
                f"on corpus {corpus!r}, found {len(eligible)}"
            )
        rng = random.Random(seed)
        sampled = rng.sample(eligible, n_items)
        blinding = {
            item.item_id: rng.choice((Blinding.GS_FIRST, Blinding.RS_FIRST))
            for item in sampled
        }
        session = EvalSession(
            session_id=uuid.uuid4().hex[:12],
            checkpoint=checkpoint,
            language=language,
            item_ids=tuple(item.item_id for item in sampled),
            blinding=blinding,
            status={item.item_id: ItemStatus.PENDING for item in sampled},
            seed=seed,
        )
        state = _SessionState(
            session=session,
            items={item.item_id: item for item in sampled},
            ratings={},
        )
        self.store.save_session(session, sampled)
        with self._registry_lock:
            self._sessions[session.session_id] = state
        return session

    def _state(self, session_id: str) -> _SessionState:
        with self._registry_lock:
            state = self._sessions.get(session_id)
            if state is None:
                session, items = self.store.load_session(session_id)
                state = _SessionState(
                    session=session,
                    items={item.item_id: item for item in items},
                    ratings=self.store.load_ratings(session_id),
                )
                self._sessions[session_id] = state
        return state

    def get_session(self, session_id: str) -> EvalSession:
        return self._state(session_id).session

    # -- rating loop -----------------------------------------------------------

    def next_item(self, session_id: str) -> NextItem | None:
        """First PENDING item with summaries in blinded order, or None when
        every item is rated. The payload never identifies the generated one."""
        state = self._state(session_id)
        session = state.session
        for item_id in session.item_ids:
            if session.status[item_id] is not ItemStatus.PENDING:
                continue
            item = state.items[item_id]
            if session.blinding[item_id] is Blinding.GS_FIRST:
                first, second = item.generated, item.reference
            else:
                first, second = item.reference, item.generated
            return NextItem(
                item_id=item_id,
                findings=item.findings,
                summary_first=first,
                summary_second=second,
                rated=session.rated_count(),
                total=session.n_items,
            )
        return None

    def submit_rating(
        self,
        session_id: str,
        item_id: str,
        comparison: Comparison,
        readability: int,
        fcc: int,
        overall: int,
    ) -> RatingRecord:
        """Validate, de-blind, append to the audit log, and materialize.
        Resubmitting an item replaces its effective rating."""
        state = self._state(session_id)
        if item_id not in state.items:
            raise UnknownItem(f"item {item_id!r} is not part of session {session_id!r}")
        for name, value in (("r", readability), ("fcc", fcc), ("oq", overall)):
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
                raise ScoreOutOfRange(f"score {name} must be an integer in 1..5, got {value!r}")
        comparison = Comparison(comparison)
        with state.lock:
            session = state.session
            stored = deblind(session.blinding[item_id], comparison)
            record = RatingRecord(
                item_id=item_id,
                comparison=stored,
                readability=readability,
                fcc=fcc,
                overall=overall,
                timestamp=self._timestamp(),
            )
            self.store.append_rating(session_id, {
                "item_id": item_id,
                "comparison": comparison.value,
                "comparison_deblinded": stored.value,
                "r": readability,
                "fcc": fcc,
                "oq": overall,
                "timestamp": record.timestamp,
                "replaces_prior": session.status[item_id] is ItemStatus.RATED,
            })
            state.ratings[item_id] = record
            session.status[item_id] = ItemStatus.RATED
            self.store.update_status(session)
        return record

    def _timestamp(self) -> str:
        return datetime.fromtimestamp(self._clock(), tz=timezone.utc).isoformat()

    # -- aggregation -----------------------------------------------------------

    def aggregate_session(self, session_id: str) -> SessionSummary:
        state = self._state(session_id)
        ratings = [state.ratings[i] for i in state.session.item_ids if i in state.ratings]
        if not ratings:
            raise NoRatings(f"session {session_id!r} has no rated items")
        n = len(ratings)
        ge = sum(
            1 for r in ratings
            if r.comparison in (DeblindedComparison.GS_BETTER, DeblindedComparison.EQUAL)
        )
        return SessionSummary(
            ge_fraction=100.0 * ge / n,
            mean_r=sum(r.readability for r in ratings) / n,
            mean_fcc=sum(r.fcc for r in ratings) / n,
            mean_oq=sum(r.overall for r in ratings) / n,
            rated=n,
            total=state.session.n_items,
        )

    def export_csv(self, session_id: str) -> str:
        """Operator-facing export of the effective ratings, in session order."""
        state = self._state(session_id)
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(["item_id", "comparison_deblinded", "r", "fcc", "oq", "timestamp"])
        for item_id in state.session.item_ids:
            record = state.ratings.get(item_id)
            if record is None:
                continue
            writer.writerow([
                record.item_id, record.comparison.value,
                record.readability, record.fcc, record.overall, record.timestamp,
            ])
        return buffer.getvalue()

    def audit_log(self, session_id: str) -> list[dict]:
        self._state(session_id)  # surfaces UnknownSession
        return self.store.load_audit_log(session_id)
