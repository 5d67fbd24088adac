"""Command-line entry point wiring corpus engineering, translation,
training, summarization, ROUGE evaluation, and the rating service.

Exit code 0 on success; on failure, one line ``ErrorClass: message`` on
stderr and a nonzero exit. Secrets are only ever named (environment
variable names), never passed as values.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import corpus as corpus_mod
from . import pipeline as pipeline_mod
from . import rouge as rouge_mod
from . import summarize as summarize_mod
from . import translate as translate_mod
from .corpus import (
    CorpusError,
    Language,
    Split,
    SplitSpec,
    load_corpus,
    parse_report,
    save_corpus,
)
from .eval_service import EvalServiceError

PROG = "radsum"
LOG_LEVELS = ("debug", "info", "warning", "error")


class UnknownCommand(Exception):
    pass


class UnknownLanguage(Exception):
    pass


@dataclass(frozen=True)
class WorkspaceConfig:
    """Optional per-workspace registries (read from <workspace>/workspace.json).

    ``corpora`` maps short names to corpus files inside the workspace;
    ``providers`` maps provider names to the environment variables holding
    their credentials (names only — never the secrets themselves).
    """

    workspace: Path
    corpora: dict[str, Path] = field(default_factory=dict)
    providers: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, workspace: str | Path) -> "WorkspaceConfig":
        workspace = Path(workspace)
        manifest = workspace / "workspace.json"
        if not manifest.exists():
            return cls(workspace=workspace)
        try:
            raw = json.loads(manifest.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise corpus_mod.SchemaError(f"{manifest}: invalid JSON: {exc}") from exc
        corpora: dict[str, Path] = {}
        root = workspace.resolve()
        for name, rel in dict(raw.get("corpora", {})).items():
            path = (workspace / rel).resolve()
            if not path.is_relative_to(root):
                raise corpus_mod.SchemaError(
                    f"{manifest}: corpus {name!r} resolves outside the workspace: {rel}"
                )
            corpora[name] = path
        providers = {str(k): str(v) for k, v in dict(raw.get("providers", {})).items()}
        return cls(workspace=workspace, corpora=corpora, providers=providers)

    def corpus_path(self, name_or_path: str) -> Path:
        """Registered corpus name, else a plain filesystem path."""
        if name_or_path in self.corpora:
            return self.corpora[name_or_path]
        return Path(name_or_path)

    def api_key_env(self, provider: str) -> str:
        try:
            return self.providers[provider]
        except KeyError:
            raise UnknownCommand(
                f"provider {provider!r} is not registered in workspace.json"
            ) from None


def _language(code: str) -> Language:
    try:
        return Language(code)
    except ValueError:
        valid = ", ".join(l.value for l in Language)
        raise UnknownLanguage(f"unknown language code {code!r}; choose from {valid}") from None


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def _float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(","))


def _split_spec(args: argparse.Namespace, seed: int) -> SplitSpec:
    if args.counts is not None:
        counts = _int_tuple(args.counts)
        if len(counts) != 3:
            raise ValueError(f"--counts needs three values, got {args.counts!r}")
        return SplitSpec(counts=counts, seed=seed)
    ratios = _float_tuple(args.ratios)
    if len(ratios) != 3:
        raise ValueError(f"--ratios needs three values, got {args.ratios!r}")
    return SplitSpec(ratios=ratios, seed=seed)


# ---------------------------------------------------------------------------
# corpus subcommands
# ---------------------------------------------------------------------------

def cmd_corpus_parse(args: argparse.Namespace) -> int:
    language = _language(args.language)
    source = Path(args.input)
    if source.is_dir():
        raw_files = sorted(source.glob("*.txt"))
        if not raw_files:
            raise FileNotFoundError(f"no .txt files under {source}")
    else:
        raw_files = [source]
    reports = [
        parse_report(
            path.read_text(encoding="utf-8"),
            language,
            report_id=path.stem,
            source=args.source,
        )
        for path in raw_files
    ]
    parsed = corpus_mod.Corpus(
        descriptor=corpus_mod.CorpusDescriptor.mono(args.source or "parsed", language),
        reports=tuple(reports),
    )
    save_corpus(parsed, args.output)
    print(f"parsed {len(reports)} report(s) -> {args.output}")
    return 0


def cmd_corpus_balance(args: argparse.Namespace) -> int:
    ws = WorkspaceConfig.load(args.workspace)
    source = load_corpus(ws.corpus_path(args.input))
    balanced = corpus_mod.balance_corpus(source, args.cap, args.seed)
    save_corpus(balanced, args.output)
    print(f"balanced {source.size} -> {balanced.size} report(s) "
          f"(cap {args.cap}) -> {args.output}")
    return 0


def cmd_corpus_split(args: argparse.Namespace) -> int:
    ws = WorkspaceConfig.load(args.workspace)
    source = load_corpus(ws.corpus_path(args.input))
    split = corpus_mod.split_corpus(source, _split_spec(args, args.seed))
    save_corpus(split, args.output)
    counts = split.split_counts()
    print(f"split {source.size} report(s): train={counts[Split.TRAIN]} "
          f"validation={counts[Split.VALIDATION]} test={counts[Split.TEST]} "
          f"-> {args.output}")
    return 0


def cmd_corpus_mix(args: argparse.Namespace) -> int:
    ws = WorkspaceConfig.load(args.workspace)
    corpora = [load_corpus(ws.corpus_path(p)) for p in args.inputs]
    mixed = corpus_mod.mix_multilingual(
        corpora, args.per_language, _split_spec(args, args.seed), args.seed
    )
    save_corpus(mixed, args.output)
    per_language = mixed.size // len(corpora)
    counts = mixed.split_counts()
    print(f"mixed {len(corpora)} corpora, {per_language} report(s) per language: "
          f"train={counts[Split.TRAIN]} validation={counts[Split.VALIDATION]} "
          f"test={counts[Split.TEST]} -> {args.output}")
    return 0


# ---------------------------------------------------------------------------
# translate
# ---------------------------------------------------------------------------

def _build_translator(args: argparse.Namespace, ws: WorkspaceConfig,
                      source: Language, target: Language):
    backend = translate_mod.Backend(args.backend)
    if backend is translate_mod.Backend.STATIC_TABLE:
        if not args.table:
            raise ValueError("--backend table requires --table")
        return backend, translate_mod.StaticTableTranslator.from_file(
            args.table, source, target)
    if backend is translate_mod.Backend.EXTERNAL_SERVICE:
        if not args.endpoint:
            raise ValueError("--backend external requires --endpoint")
        api_key_env = args.api_key_env
        if api_key_env is None and args.provider:
            api_key_env = ws.api_key_env(args.provider)
        return backend, translate_mod.ExternalServiceTranslator(
            args.endpoint, api_key_env)
    if not args.model_checkpoint:
        raise ValueError("--backend model requires --model-checkpoint")
    generator = summarize_mod.load_generator(args.model_checkpoint, args.workspace)
    return backend, translate_mod.FinetunedModelTranslator(
        generate=lambda text: generator.generate(text, args.max_new_tokens),
        source_language=source,
        target_language=target,
    )


def cmd_translate(args: argparse.Namespace) -> int:
    ws = WorkspaceConfig.load(args.workspace)
    source_lang = _language(args.source_lang)
    target_lang = _language(args.target_lang)
    source = load_corpus(ws.corpus_path(args.input))
    backend, translator = _build_translator(args, ws, source_lang, target_lang)
    job = translate_mod.TranslationJob(
        source_corpus=source.descriptor,
        source_language=source_lang,
        target_language=target_lang,
        backend=backend,
        fields_to_translate=tuple(args.fields.split(",")),
    )
    translated = translate_mod.translate_corpus(
        source, job, translator,
        checkpoint=args.progress, resume=not args.no_resume,
        max_workers=args.max_workers,
    )
    save_corpus(translated, args.output)
    print(f"translated {translated.size} report(s) "
          f"{source_lang.value}->{target_lang.value} -> {args.output}")
    return 0


# ---------------------------------------------------------------------------
# train / summarize / eval / serve
# ---------------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    config = pipeline_mod.load_pipeline_config(args.config)
    diagnostics = pipeline_mod.validate_config(config)
    if diagnostics:
        for diagnostic in diagnostics:
            print(f"{diagnostic.kind}: {diagnostic.stage_id}: {diagnostic.message}",
                  file=sys.stderr)
        return 1
    from .trainers import get_backend

    backend = get_backend(args.backend)
    report = pipeline_mod.run_pipeline(
        config, backend, args.workspace,
        stage_id=args.stage, seed=args.seed, force=args.force,
    )
    for record in report.records:
        if record["kind"] == "external_checkpoint":
            print(f"external {record['id']}")
        else:
            hp = record["invocation"]["hyperparams"]
            status = "cached" if record["cached"] else "trained"
            print(f"stage {record['id']}: {status} epochs={hp['epochs']} "
                  f"batch_size={hp['batch_size']} "
                  f"max_new_tokens={hp['max_new_tokens']}")
    return 0


def cmd_summarize(args: argparse.Namespace) -> int:
    ws = WorkspaceConfig.load(args.workspace)
    split = Split(args.split) if args.split else None
    written, errors = summarize_mod.summarize_corpus(
        ws.corpus_path(args.input), args.checkpoint, args.output, args.workspace,
        max_new_tokens=args.max_new_tokens, split=split,
    )
    for report_id, message in errors:
        print(f"skipped {report_id}: {message}", file=sys.stderr)
    if written == 0 and errors:
        print("ProviderUnavailable: every report failed to summarize", file=sys.stderr)
        return 1
    print(f"wrote {written} prediction(s) -> {args.output}")
    return 0


def cmd_eval_rouge(args: argparse.Namespace) -> int:
    language = _language(args.language) if args.language else None
    report = rouge_mod.evaluate_model(
        args.predictions, language,
        checkpoint=args.checkpoint, corpus=args.corpus,
    )
    print(report.to_row())
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report.to_json_dict(), indent=2) + "\n",
                       encoding="utf-8")
    return 0


def cmd_serve_eval_api(args: argparse.Namespace) -> int:
    import uvicorn

    from .eval_api import app_for_workspace

    app = app_for_workspace(args.workspace)
    uvicorn.run(app, host=args.host, port=args.port, log_level=args.log_level)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Multilingual radiology report summarization toolkit.",
    )
    parser.add_argument("--workspace", default=".",
                        help="artifact root for checkpoints, registries, and locks")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for every sampling operation")
    parser.add_argument("--log-level", default="warning", choices=LOG_LEVELS,
                        help="logging verbosity")
    commands = parser.add_subparsers(dest="command", metavar="command", required=True)

    # corpus ----------------------------------------------------------------
    corpus = commands.add_parser("corpus", help="parse, balance, split, and mix corpora")
    corpus_sub = corpus.add_subparsers(dest="subcommand", metavar="subcommand",
                                       required=True)

    parse = corpus_sub.add_parser("parse", help="section raw report text into a corpus file")
    parse.add_argument("--in", dest="input", required=True,
                       help="raw report file or directory of .txt files")
    parse.add_argument("--language", required=True, help="report language code")
    parse.add_argument("--out", dest="output", required=True, help="corpus JSONL to write")
    parse.add_argument("--source", default="", help="source label stored on each report")
    parse.set_defaults(func=cmd_corpus_parse)

    balance = corpus_sub.add_parser("balance",
                                    help="de-duplicate dominant summaries by capped downsampling")
    balance.add_argument("--in", dest="input", required=True, help="corpus JSONL to read")
    balance.add_argument("--out", dest="output", required=True, help="corpus JSONL to write")
    balance.add_argument("--cap", type=float, default=0.02,
                         help="maximum share per distinct summary (default 0.02)")
    balance.set_defaults(func=cmd_corpus_balance)

    split = corpus_sub.add_parser("split", help="assign train/validation/test splits")
    split.add_argument("--in", dest="input", required=True, help="corpus JSONL to read")
    split.add_argument("--out", dest="output", required=True, help="corpus JSONL to write")
    group = split.add_mutually_exclusive_group(required=True)
    group.add_argument("--counts", help="explicit sizes, e.g. 1591,200,200")
    group.add_argument("--ratios", help="fractions, e.g. 0.64,0.16,0.20")
    split.set_defaults(func=cmd_corpus_split)

    mix = corpus_sub.add_parser("mix",
                                help="combine monolingual corpora with equal per-language counts")
    mix.add_argument("--in", dest="inputs", nargs="+", required=True,
                     help="two or more monolingual corpus files")
    mix.add_argument("--out", dest="output", required=True, help="corpus JSONL to write")
    mix.add_argument("--per-language", type=int, default=None,
                     help="reports per language (default: size of the smallest corpus)")
    group = mix.add_mutually_exclusive_group(required=True)
    group.add_argument("--counts", help="per-language split sizes, e.g. 1591,200,200")
    group.add_argument("--ratios", help="per-language split fractions")
    mix.set_defaults(func=cmd_corpus_mix)

    # translate ---------------------------------------------------------------
    translate = commands.add_parser("translate",
                                    help="translate corpus fields to grow a low-resource language")
    translate.add_argument("--in", dest="input", required=True, help="corpus JSONL to read")
    translate.add_argument("--out", dest="output", required=True, help="corpus JSONL to write")
    translate.add_argument("--source-lang", required=True, help="language of the input corpus")
    translate.add_argument("--target-lang", required=True, help="language to translate into")
    translate.add_argument("--backend", choices=["table", "external", "model"],
                           default="table", help="translation backend")
    translate.add_argument("--fields", default="findings,impression",
                           help="comma-separated report fields to translate")
    translate.add_argument("--table", help="sentence-pair JSONL for --backend table")
    translate.add_argument("--endpoint", help="service URL for --backend external")
    translate.add_argument("--api-key-env", default=None,
                           help="name of the environment variable holding the API key")
    translate.add_argument("--provider", default=None,
                           help="workspace-registered provider whose key variable to use")
    translate.add_argument("--model-checkpoint", help="trained checkpoint for --backend model")
    translate.add_argument("--max-new-tokens", type=int, default=1000,
                           help="decoding cap for --backend model")
    translate.add_argument("--progress", default=None,
                           help="progress file enabling resume after interruption")
    translate.add_argument("--no-resume", action="store_true",
                           help="ignore any existing progress file")
    translate.add_argument("--max-workers", type=int, default=4,
                           help="concurrent translation requests")
    translate.set_defaults(func=cmd_translate)

    # train ---------------------------------------------------------------------
    train = commands.add_parser("train", help="run the staged fine-tuning pipeline")
    train.add_argument("--config", required=True, help="pipeline config JSON")
    train.add_argument("--stage", default=None,
                       help="train one stage (and its ancestors) instead of all")
    train.add_argument("--backend", choices=sorted(("null", "toy", "full")),
                       default="null", help="trainer backend")
    train.add_argument("--force", action="store_true",
                       help="retrain even when the cached artifact is current")
    train.set_defaults(func=cmd_train)

    # summarize -------------------------------------------------------------------
    summarize = commands.add_parser("summarize",
                                    help="generate summaries for a corpus with a trained checkpoint")
    summarize.add_argument("--checkpoint", required=True,
                           help="stage id (resolved via the workspace) or artifact path")
    summarize.add_argument("--in", dest="input", required=True, help="corpus JSONL to read")
    summarize.add_argument("--out", dest="output", required=True,
                           help="predictions JSONL to write")
    summarize.add_argument("--split", choices=[s.value for s in Split if s is not Split.UNASSIGNED],
                           default=None, help="restrict to one split")
    summarize.add_argument("--max-new-tokens", type=int, default=1000,
                           help="decoding cap per summary")
    summarize.set_defaults(func=cmd_summarize)

    # eval ---------------------------------------------------------------------
    evaluate = commands.add_parser("eval", help="score generated summaries")
    eval_sub = evaluate.add_subparsers(dest="subcommand", metavar="subcommand",
                                       required=True)
    rouge = eval_sub.add_parser("rouge", help="mean ROUGE-1/2/L/Lsum F1 over predictions")
    rouge.add_argument("--pred", dest="predictions", required=True,
                       help="predictions JSONL of generated/reference pairs")
    rouge.add_argument("--language", default=None,
                       help="language for sentence splitting (affects Lsum)")
    rouge.add_argument("--checkpoint", default="", help="label for the report row")
    rouge.add_argument("--corpus", default="", help="label for the report row")
    rouge.add_argument("--out", dest="output", default=None,
                       help="also write the full report as JSON")
    rouge.set_defaults(func=cmd_eval_rouge)

    # serve --------------------------------------------------------------------
    serve = commands.add_parser("serve", help="run long-lived services")
    serve_sub = serve.add_subparsers(dest="subcommand", metavar="subcommand",
                                     required=True)
    eval_api = serve_sub.add_parser("eval-api", help="HTTP API for blind human evaluation")
    eval_api.add_argument("--host", default="127.0.0.1", help="bind address")
    eval_api.add_argument("--port", type=int, default=8000, help="bind port")
    eval_api.set_defaults(func=cmd_serve_eval_api)

    return parser


_HANDLED_ERRORS = (
    CorpusError,
    translate_mod.TranslationError,
    pipeline_mod.PipelineError,
    rouge_mod.EmptyPredictions,
    summarize_mod.CheckpointNotFound,
    summarize_mod.InvalidRequest,
    summarize_mod.ProviderUnavailable,
    EvalServiceError,
    UnknownCommand,
    UnknownLanguage,
    ValueError,
    OSError,
)


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help and usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _HANDLED_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
