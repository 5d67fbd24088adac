"""Corpus translation via pluggable backends.

Three backends sit behind one ``Translator`` interface: a deterministic
lookup table for tests and fixtures, an HTTP translation service, and a
fine-tuned seq2seq model. Corpus jobs checkpoint per completed report so a
16k-report run survives interruption.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .corpus import Corpus, CorpusDescriptor, Language, Report, SchemaError
from .rouge import split_sentences


class Backend(str, Enum):
    EXTERNAL_SERVICE = "external"
    FINETUNED_MODEL = "model"
    STATIC_TABLE = "table"


TRANSLATABLE_FIELDS = ("background", "findings", "impression")


class TranslationError(Exception):
    pass


class UnsupportedPair(TranslationError):
    pass


class BackendUnavailable(TranslationError):
    pass


class CorpusTranslationError(TranslationError):
    """One or more reports failed; completed reports are already persisted."""

    def __init__(self, failures: dict[str, Exception]):
        self.failures = dict(failures)
        details = "; ".join(
            f"{rid} ({type(err).__name__}: {err})" for rid, err in sorted(failures.items())
        )
        super().__init__(f"translation failed for {len(failures)} report(s): {details}")


@dataclass(frozen=True)
class TranslationJob:
    source_corpus: CorpusDescriptor
    source_language: Language
    target_language: Language
    backend: Backend
    fields_to_translate: tuple[str, ...] = ("findings", "impression")

    def __post_init__(self):
        if self.source_language == self.target_language:
            raise ValueError("source and target language must differ")
        if not self.fields_to_translate:
            raise ValueError("fields_to_translate must be non-empty")
        unknown = set(self.fields_to_translate) - set(TRANSLATABLE_FIELDS)
        if unknown:
            raise ValueError(f"unknown fields: {sorted(unknown)}")


class Translator(Protocol):
    char_limit: int | None

    def translate(self, text: str, source: Language, target: Language) -> str: ...


# ---------------------------------------------------------------------------
# STATIC_TABLE backend
# ---------------------------------------------------------------------------

def load_translation_table(path: str | Path) -> dict[str, str]:
    """Read a JSON Lines file of {source, target} sentence pairs."""
    table: dict[str, str] = {}
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "source" not in record or "target" not in record:
                raise SchemaError(f"{path}:{lineno}: entry needs 'source' and 'target'")
            table[record["source"]] = record["target"]
    return table


@dataclass
class StaticTableTranslator:
    """Whole-sentence lookup; the deterministic backend used in tests."""

    table: dict[str, str]
    source_language: Language
    target_language: Language
    char_limit: int | None = None

    @classmethod
    def from_file(cls, path: str | Path, source: Language, target: Language) -> "StaticTableTranslator":
        return cls(load_translation_table(path), source, target)

    def translate(self, text: str, source: Language, target: Language) -> str:
        if (source, target) != (self.source_language, self.target_language):
            raise UnsupportedPair(f"table covers {self.source_language.value}->"
                                  f"{self.target_language.value}, not {source.value}->{target.value}")
        if not text:
            return ""
        if text in self.table:
            return self.table[text]
        translated = []
        for sentence in split_sentences(text, source):
            if sentence not in self.table:
                raise UnsupportedPair(f"no table entry for: {sentence!r}")
            translated.append(self.table[sentence])
        if not translated:
            raise UnsupportedPair(f"no table entry for: {text!r}")
        return " ".join(translated)


# ---------------------------------------------------------------------------
# EXTERNAL_SERVICE backend
# ---------------------------------------------------------------------------

class ExternalServiceTranslator:
    """HTTP translation service client with rate limiting and retries.

    Credentials are passed by environment-variable name, never as literals.
    Network failures and 5xx responses are retried with exponential backoff
    (max_retries additional attempts); 4xx responses mean the service cannot
    handle the pair.
    """

    def __init__(
        self,
        endpoint: str,
        api_key_env: str | None = None,
        *,
        requests_per_second: float = 8.0,
        max_retries: int = 5,
        backoff_base: float = 0.5,
        char_limit: int | None = 5000,
        session=None,
        sleeper: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        if session is None:
            import requests

            session = requests.Session()
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.min_interval = 1.0 / requests_per_second if requests_per_second > 0 else 0.0
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.char_limit = char_limit
        self._session = session
        self._sleep = sleeper
        self._clock = clock
        self._lock = threading.Lock()
        self._last_request = float("-inf")

    def _headers(self) -> dict[str, str]:
        if not self.api_key_env:
            return {}
        import os

        key = os.environ.get(self.api_key_env)
        if not key:
            raise BackendUnavailable(f"environment variable {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}"}

    def _throttle(self):
        with self._lock:
            now = self._clock()
            wait = self.min_interval - (now - self._last_request)
            if wait > 0:
                self._sleep(wait)
            self._last_request = self._clock()

    def translate(self, text: str, source: Language, target: Language) -> str:
        if not text:
            return ""
        payload = {"q": text, "source": source.value, "target": target.value}
        headers = self._headers()
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_base * (2 ** (attempt - 1)))
            self._throttle()
            try:
                response = self._session.post(self.endpoint, json=payload, headers=headers, timeout=30)
            except Exception as exc:  # connection errors, timeouts
                last_error = exc
                continue
            if 400 <= response.status_code < 500:
                raise UnsupportedPair(
                    f"{self.endpoint} rejected {source.value}->{target.value}: "
                    f"HTTP {response.status_code}"
                )
            if response.status_code != 200:
                last_error = BackendUnavailable(f"HTTP {response.status_code}")
                continue
            translation = response.json().get("translation", "")
            if not translation:
                raise BackendUnavailable(f"{self.endpoint} returned empty translation")
            return translation
        raise BackendUnavailable(
            f"{self.endpoint} unavailable after {self.max_retries} retries: {last_error}"
        )


# ---------------------------------------------------------------------------
# FINETUNED_MODEL backend
# ---------------------------------------------------------------------------

@dataclass
class FinetunedModelTranslator:
    """Wraps a text->text generator produced by the training pipeline."""

    generate: Callable[[str], str]
    source_language: Language
    target_language: Language
    char_limit: int | None = 512

    def translate(self, text: str, source: Language, target: Language) -> str:
        if (source, target) != (self.source_language, self.target_language):
            raise UnsupportedPair(f"model translates {self.source_language.value}->"
                                  f"{self.target_language.value}, not {source.value}->{target.value}")
        if not text:
            return ""
        return self.generate(text)


# ---------------------------------------------------------------------------
# Text- and corpus-level operations
# ---------------------------------------------------------------------------

def _pack_sentences(sentences: Iterable[str], limit: int) -> list[str]:
    chunks: list[str] = []
    current = ""
    for sentence in sentences:
        if not current:
            current = sentence
        elif len(current) + 1 + len(sentence) <= limit:
            current = f"{current} {sentence}"
        else:
            chunks.append(current)
            current = sentence
    if current:
        chunks.append(current)
    return chunks


def translate_text(text: str, source: Language, target: Language, translator: Translator) -> str:
    """Translate one text, chunking on sentence boundaries above the
    backend's length limit."""
    if not text:
        return ""
    limit = translator.char_limit
    if limit is not None and len(text) > limit:
        chunks = _pack_sentences(split_sentences(text, source), limit)
        result = " ".join(translator.translate(chunk, source, target) for chunk in chunks)
    else:
        result = translator.translate(text, source, target)
    if not result:
        raise BackendUnavailable("backend produced empty output for non-empty input")
    return result


def _load_checkpoint(path: Path) -> dict[str, dict[str, str]]:
    done: dict[str, dict[str, str]] = {}
    if not path.exists():
        return done
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            done[record["id"]] = record["fields"]
    return done


def translate_corpus(
    corpus: Corpus,
    job: TranslationJob,
    translator: Translator,
    *,
    checkpoint: str | Path | None = None,
    resume: bool = True,
    max_workers: int = 4,
) -> Corpus:
    """Translate the job's fields for every report, preserving ids and splits.

    Progress is persisted one JSONL record per completed report; with
    ``resume`` the checkpoint is reloaded and completed reports are skipped.
    On per-report failure the remaining reports still run, completed work is
    persisted, and a CorpusTranslationError names every failing id.
    """
    if corpus.descriptor.languages != (job.source_language,):
        raise ValueError(
            f"corpus language {[l.value for l in corpus.descriptor.languages]} "
            f"does not match job source {job.source_language.value}"
        )

    checkpoint_path = Path(checkpoint) if checkpoint else None
    done: dict[str, dict[str, str]] = {}
    if checkpoint_path:
        if resume:
            done = _load_checkpoint(checkpoint_path)
        elif checkpoint_path.exists():
            checkpoint_path.unlink()

    def translate_report(report: Report) -> dict[str, str]:
        fields: dict[str, str] = {}
        for name in job.fields_to_translate:
            value = getattr(report, name)
            if value is None:
                continue
            fields[name] = translate_text(value, job.source_language, job.target_language, translator)
        return fields

    pending = [r for r in corpus.reports if r.id not in done]
    failures: dict[str, Exception] = {}
    sink = checkpoint_path.open("a", encoding="utf-8") if checkpoint_path else None
    try:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = {pool.submit(translate_report, r): r.id for r in pending}
            for future in as_completed(futures):
                report_id = futures[future]
                try:
                    fields = future.result()
                except TranslationError as exc:
                    failures[report_id] = exc
                    continue
                done[report_id] = fields
                if sink:
                    sink.write(json.dumps({"id": report_id, "fields": fields},
                                          ensure_ascii=False) + "\n")
                    sink.flush()
    finally:
        if sink:
            sink.close()

    if failures:
        raise CorpusTranslationError(failures)

    translated_reports = tuple(
        replace(report, language=job.target_language, **done[report.id])
        for report in corpus.reports
    )
    descriptor = CorpusDescriptor(
        name=f"{corpus.descriptor.name}-{job.target_language.value}",
        languages=(job.target_language,),
    )
    return Corpus(descriptor=descriptor, reports=translated_reports,
                  split_of=dict(corpus.split_of))
