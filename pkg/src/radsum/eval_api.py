"""HTTP+JSON facade over the human-evaluation service.

Rater-facing responses never identify which summary is generated; the
de-blinded comparisons appear only in the operator CSV export.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from .corpus import Language
from .eval_service import (
    Comparison,
    EvalService,
    EvalServiceError,
    InsufficientItems,
    NoRatings,
    ScoreOutOfRange,
    SessionStore,
    UnknownItem,
    UnknownSession,
    WorkspaceItemSource,
)

_STATUS_CODES = {
    InsufficientItems: 409,
    UnknownSession: 404,
    UnknownItem: 404,
    ScoreOutOfRange: 400,
    NoRatings: 409,
}


class CreateSessionBody(BaseModel):
    checkpoint: str
    corpus: str
    language: str
    n_items: int = 30
    seed: int = 0


class RatingBody(BaseModel):
    item_id: str
    comparison: str
    r: int
    fcc: int
    oq: int


def _progress(service: EvalService, session_id: str) -> dict:
    session = service.get_session(session_id)
    return {"rated": session.rated_count(), "total": session.n_items}


def create_app(service: EvalService) -> FastAPI:
    app = FastAPI(title="radsum human evaluation", docs_url=None, redoc_url=None)

    @app.exception_handler(EvalServiceError)
    async def _service_error(request: Request, exc: EvalServiceError) -> JSONResponse:
        status = _STATUS_CODES.get(type(exc), 400)
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.post("/sessions", status_code=201, response_model=None)
    def create_session(body: CreateSessionBody) -> JSONResponse:
        try:
            language = Language(body.language)
        except ValueError:
            return JSONResponse(
                status_code=400,
                content={"error": "UnknownLanguage",
                         "detail": f"unknown language code {body.language!r}"},
            )
        session = service.create_session(
            checkpoint=body.checkpoint,
            corpus=body.corpus,
            language=language,
            n_items=body.n_items,
            seed=body.seed,
        )
        return JSONResponse(status_code=201, content={
            "session_id": session.session_id,
            "checkpoint": session.checkpoint,
            "language": session.language.value,
            "n_items": session.n_items,
        })

    @app.get("/sessions/{session_id}/next")
    def next_item(session_id: str) -> dict:
        item = service.next_item(session_id)
        if item is None:
            return {"done": True, "progress": _progress(service, session_id)}
        return {
            "item_id": item.item_id,
            "findings": item.findings,
            "summary_first": item.summary_first,
            "summary_second": item.summary_second,
            "progress": {"rated": item.rated, "total": item.total},
        }

    @app.post("/sessions/{session_id}/ratings", response_model=None)
    def submit_rating(session_id: str, body: RatingBody) -> JSONResponse | dict:
        try:
            comparison = Comparison(body.comparison)
        except ValueError:
            return JSONResponse(
                status_code=400,
                content={"error": "InvalidComparison",
                         "detail": f"comparison must be one of "
                                   f"{[c.value for c in Comparison]}, "
                                   f"got {body.comparison!r}"},
            )
        record = service.submit_rating(
            session_id=session_id,
            item_id=body.item_id,
            comparison=comparison,
            readability=body.r,
            fcc=body.fcc,
            overall=body.oq,
        )
        return {
            "acknowledged": True,
            "item_id": record.item_id,
            "progress": _progress(service, session_id),
        }

    @app.get("/sessions/{session_id}/summary")
    def summary(session_id: str) -> dict:
        aggregate = service.aggregate_session(session_id)
        return {
            "session_id": session_id,
            "ge_fraction": aggregate.ge_fraction,
            "mean_r": aggregate.mean_r,
            "mean_fcc": aggregate.mean_fcc,
            "mean_oq": aggregate.mean_oq,
            "rated": aggregate.rated,
            "total": aggregate.total,
        }

    @app.get("/sessions/{session_id}/export.csv")
    def export_csv(session_id: str) -> PlainTextResponse:
        return PlainTextResponse(service.export_csv(session_id), media_type="text/csv")

    return app


def app_for_workspace(workspace: str | Path) -> FastAPI:
    """App wired to a pipeline workspace: corpora under data/, predictions
    under predictions/<checkpoint>/, sessions persisted under eval/."""
    workspace = Path(workspace)
    service = EvalService(
        store=SessionStore(workspace / "eval"),
        source=WorkspaceItemSource(workspace),
    )
    return create_app(service)
