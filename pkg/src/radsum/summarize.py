"""Checkpoint-backed summarization plus a chat-LLM baseline client.

Generation is greedy (hence deterministic) by default and always bounded by
the request's max-new-tokens cap. The baseline client wraps a generic chat
provider behind a fixed, versioned prompt template and records every
exchange for the comparison report.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

from .corpus import Language, Split, load_corpus
from .pipeline import Registry
from .rouge import tokenize


class CheckpointNotFound(Exception):
    pass


class InvalidRequest(Exception):
    pass


class ProviderUnavailable(Exception):
    pass


class BudgetExceeded(ProviderUnavailable):
    pass


class LanguageMismatchWarning(UserWarning):
    pass


LANGUAGE_NAMES = {Language.EN: "English", Language.PT: "Portuguese", Language.GER: "German"}


# ---------------------------------------------------------------------------
# Checkpoint-backed generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationRequest:
    findings: str
    language: Language
    max_new_tokens: int = 1000
    checkpoint: str = ""

    def validate(self) -> None:
        if not self.findings.strip():
            raise InvalidRequest("findings must be non-empty")
        if self.max_new_tokens < 1:
            raise InvalidRequest(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")


class _FullGenerator:
    """Greedy decoding for transformer artifacts (needs the `full` extra)."""

    def __init__(self, artifact_dir: Path):
        try:
            import transformers
        except ImportError as exc:  # pragma: no cover
            raise CheckpointNotFound(
                f"{artifact_dir} holds a full-backend model but transformers is not "
                f"installed; install with: pip install 'radsum[full]'"
            ) from exc
        self._tokenizer = transformers.AutoTokenizer.from_pretrained(str(artifact_dir))
        self._model = transformers.AutoModelForSeq2SeqLM.from_pretrained(str(artifact_dir))
        self._model.eval()

    def generate(self, text: str, max_new_tokens: int) -> str:
        inputs = self._tokenizer(text, return_tensors="pt", truncation=True, max_length=512)
        output = self._model.generate(
            **inputs, max_new_tokens=max_new_tokens, min_new_tokens=1,
            num_beams=1, do_sample=False,
        )
        return self._tokenizer.decode(output[0], skip_special_tokens=True)


@dataclass(frozen=True)
class LoadedCheckpoint:
    """A generation-ready artifact: its id, languages, and decoder."""

    checkpoint: str
    languages: tuple[str, ...]
    backend: str
    _impl: Any

    def generate(self, text: str, max_new_tokens: int) -> str:
        return self._impl.generate(text, max_new_tokens)


def _artifact_dir_for(checkpoint: str, workspace: str | Path | None) -> Path:
    if workspace is not None:
        entry = Registry.load(Path(workspace)).get(checkpoint)
        if entry is not None:
            return Path(workspace) / entry["artifact"]
    direct = Path(checkpoint)
    if (direct / "meta.json").exists():
        return direct
    raise CheckpointNotFound(f"no artifact found for checkpoint {checkpoint!r}")


def load_generator(checkpoint: str, workspace: str | Path | None = None) -> LoadedCheckpoint:
    """Resolve a stage id (via the workspace registry) or artifact path to a
    ready-to-decode checkpoint."""
    artifact_dir = _artifact_dir_for(checkpoint, workspace)
    meta = json.loads((artifact_dir / "meta.json").read_text(encoding="utf-8"))
    kind = meta.get("generator")
    if kind == "toy":
        from .trainers import ToyGenerator

        impl = ToyGenerator(artifact_dir)
    elif kind == "full":
        impl = _FullGenerator(artifact_dir)
    else:
        raise CheckpointNotFound(
            f"artifact {artifact_dir} was produced by the {kind!r} backend "
            f"and cannot generate text"
        )
    return LoadedCheckpoint(
        checkpoint=checkpoint,
        languages=tuple(meta.get("languages", ())),
        backend=kind,
        _impl=impl,
    )


def summarize(
    request: GenerationRequest,
    workspace: str | Path | None = None,
    *,
    generator: LoadedCheckpoint | None = None,
) -> str:
    """Generate one impression from findings, capped at max_new_tokens."""
    request.validate()
    if generator is None:
        generator = load_generator(request.checkpoint, workspace)
    if generator.languages and request.language.value not in generator.languages:
        warnings.warn(LanguageMismatchWarning(
            f"checkpoint {generator.checkpoint!r} was trained on "
            f"{list(generator.languages)}, input is {request.language.value!r}"
        ))
    return generator.generate(request.findings, request.max_new_tokens)


@dataclass(frozen=True)
class BatchResult:
    results: tuple[str | None, ...]
    errors: tuple[tuple[int, str], ...]

    def texts(self) -> list[str]:
        return [r for r in self.results if r is not None]


def summarize_batch(
    requests: Sequence[GenerationRequest],
    checkpoint: str = "",
    workspace: str | Path | None = None,
    *,
    generator: LoadedCheckpoint | None = None,
) -> BatchResult:
    """Order-preserving batch; per-item failures are collected, not fatal."""
    if not requests:
        return BatchResult((), ())
    if generator is None:
        generator = load_generator(checkpoint or requests[0].checkpoint, workspace)
    results: list[str | None] = []
    errors: list[tuple[int, str]] = []
    for index, request in enumerate(requests):
        try:
            results.append(summarize(request, generator=generator))
        except (InvalidRequest, RuntimeError) as exc:
            results.append(None)
            errors.append((index, f"{type(exc).__name__}: {exc}"))
    return BatchResult(tuple(results), tuple(errors))


def summarize_corpus(
    corpus_path: str | Path,
    checkpoint: str,
    out_path: str | Path,
    workspace: str | Path | None = None,
    *,
    max_new_tokens: int = 1000,
    split: Split | None = None,
) -> tuple[int, list[tuple[str, str]]]:
    """Summarize a corpus file into a predictions JSONL of
    {id, generated, reference}; returns (written, per-report errors)."""
    corpus = load_corpus(corpus_path)
    generator = load_generator(checkpoint, workspace)
    reports = corpus.reports_in(split) if split is not None else list(corpus.reports)
    requests = [
        GenerationRequest(findings=r.findings, language=r.language,
                          max_new_tokens=max_new_tokens, checkpoint=checkpoint)
        for r in reports
    ]
    batch = summarize_batch(requests, generator=generator)
    errors = [(reports[i].id, message) for i, message in batch.errors]
    written = 0
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as fh:
        for report, generated in zip(reports, batch.results):
            if generated is None:
                continue
            fh.write(json.dumps({
                "id": report.id,
                "generated": generated,
                "reference": report.impression,
            }, ensure_ascii=False) + "\n")
            written += 1
    return written, errors


# ---------------------------------------------------------------------------
# Chat-LLM baseline
# ---------------------------------------------------------------------------

PROMPT_TEMPLATES = {
    "v1": "Summarize the following radiology findings in {language}: {findings}",
}


def render_prompt(findings: str, language: Language, version: str = "v1") -> str:
    template = PROMPT_TEMPLATES.get(version)
    if template is None:
        raise InvalidRequest(f"unknown prompt template version {version!r}")
    return template.format(language=LANGUAGE_NAMES[language], findings=findings)


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class Provider(Protocol):
    def complete(self, prompt: str) -> ProviderResponse: ...


class EchoProvider:
    """Mock provider that hands the findings back, imitating a chat model
    that rephrases instead of summarizing."""

    def complete(self, prompt: str) -> ProviderResponse:
        findings = prompt.split(": ", 1)[-1]
        return ProviderResponse(text=findings)


class HTTPChatProvider:
    """OpenAI-style chat-completions client; credentials via env var name."""

    def __init__(self, endpoint: str, model: str, api_key_env: str | None = None,
                 *, timeout: float = 60.0, session=None):
        if session is None:
            import requests

            session = requests.Session()
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._session = session

    def complete(self, prompt: str) -> ProviderResponse:
        headers = {}
        if self.api_key_env:
            import os

            key = os.environ.get(self.api_key_env)
            if not key:
                raise ProviderUnavailable(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        response = self._session.post(
            self.endpoint,
            json={"model": self.model, "messages": [{"role": "user", "content": prompt}]},
            headers=headers,
            timeout=self.timeout,
        )
        if response.status_code != 200:
            raise ProviderUnavailable(f"HTTP {response.status_code} from {self.endpoint}")
        body = response.json()
        usage = body.get("usage", {})
        return ProviderResponse(
            text=body["choices"][0]["message"]["content"],
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )


@dataclass(frozen=True)
class BaselineConfig:
    provider: str = "echo"  # echo | http
    endpoint: str = ""
    model: str = ""
    api_key_env: str | None = None
    prompt_version: str = "v1"
    max_retries: int = 2
    backoff_base: float = 0.2
    max_requests: int | None = None
    max_total_tokens: int | None = None


@dataclass(frozen=True)
class BaselineRecord:
    prompt: str
    response: str
    latency_s: float
    prompt_tokens: int
    completion_tokens: int


class BaselineClient:
    """Issues baseline summarization calls and records every exchange."""

    def __init__(self, config: BaselineConfig, provider: Provider | None = None,
                 *, sleeper: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.perf_counter):
        if provider is None:
            if config.provider == "echo":
                provider = EchoProvider()
            elif config.provider == "http":
                provider = HTTPChatProvider(config.endpoint, config.model,
                                            config.api_key_env)
            else:
                raise InvalidRequest(f"unknown provider kind {config.provider!r}")
        self.config = config
        self.provider = provider
        self.records: list[BaselineRecord] = []
        self._sleep = sleeper
        self._clock = clock
        self._spent_tokens = 0

    def _check_budget(self) -> None:
        cfg = self.config
        if cfg.max_requests is not None and len(self.records) >= cfg.max_requests:
            raise BudgetExceeded(f"request budget of {cfg.max_requests} reached")
        if cfg.max_total_tokens is not None and self._spent_tokens >= cfg.max_total_tokens:
            raise BudgetExceeded(f"token budget of {cfg.max_total_tokens} reached")

    def summarize(self, findings: str, language: Language) -> str:
        if not findings.strip():
            raise InvalidRequest("findings must be non-empty")
        self._check_budget()
        prompt = render_prompt(findings, language, self.config.prompt_version)
        last_error: Exception | None = None
        started = self._clock()
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff_base * (2 ** (attempt - 1)))
            try:
                response = self.provider.complete(prompt)
                break
            except ProviderUnavailable as exc:
                last_error = exc
            except Exception as exc:  # timeouts, connection errors
                last_error = exc
        else:
            raise ProviderUnavailable(
                f"provider failed after {self.config.max_retries} retries: {last_error}"
            )
        latency = self._clock() - started
        prompt_tokens = response.prompt_tokens
        completion_tokens = response.completion_tokens
        if prompt_tokens is None:
            prompt_tokens = len(tokenize(prompt))
        if completion_tokens is None:
            completion_tokens = len(tokenize(response.text))
        self.records.append(BaselineRecord(
            prompt=prompt,
            response=response.text,
            latency_s=latency,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
        ))
        self._spent_tokens += prompt_tokens + completion_tokens
        return response.text


def baseline_summarize(
    findings: str,
    language: Language,
    provider_config: BaselineConfig,
    *,
    client: BaselineClient | None = None,
) -> str:
    """One-shot baseline call; pass a client to accumulate records."""
    if client is None:
        client = BaselineClient(provider_config)
    return client.summarize(findings, language)


def comparison_row(item_id: str, model_summary: str, baseline_summary: str) -> dict:
    """One row of the model-vs-baseline comparison report."""
    return {
        "id": item_id,
        "model_summary": model_summary,
        "baseline_summary": baseline_summary,
        "model_tokens": len(tokenize(model_summary)),
        "baseline_tokens": len(tokenize(baseline_summary)),
    }
