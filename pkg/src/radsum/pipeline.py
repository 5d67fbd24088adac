"""Staged fine-tuning orchestration.

A pipeline config declares stages (each fine-tuning on top of an external
checkpoint or an earlier stage), the datasets they train on, and the exact
hyperparameters per stage. Execution delegates gradient updates to a
pluggable trainer backend, persists per-epoch progress so interrupted runs
resume, and registers artifacts under content hashes so stale ancestors are
detected.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Protocol, Sequence

from filelock import FileLock

from .corpus import SchemaError


class Optimizer(str, Enum):
    ADAMW = "adamw"


class LRSchedule(str, Enum):
    LINEAR_DECAY_TO_ZERO = "linear_decay_to_zero"


class Task(str, Enum):
    SUMMARIZE = "summarize"
    TRANSLATE = "translate"


class PipelineError(Exception):
    pass


class UnknownStage(PipelineError):
    pass


class UnknownBase(PipelineError):
    pass


class CycleDetected(PipelineError):
    pass


class MissingArtifact(PipelineError):
    pass


class DatasetEmpty(PipelineError):
    pass


class DatasetMissing(PipelineError):
    pass


class InvalidStage(PipelineError):
    pass


class BackendFailure(PipelineError):
    pass


# ---------------------------------------------------------------------------
# Config types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingHyperparams:
    """Per-stage optimization settings. Deliberately permissive at
    construction; validate_config reports violations as diagnostics."""

    epochs: int
    batch_size: int
    max_new_tokens: int
    optimizer: Optimizer = Optimizer.ADAMW
    lr_max: float = 2e-5
    lr_schedule: LRSchedule = LRSchedule.LINEAR_DECAY_TO_ZERO
    early_stopping_patience: int | None = None

    def violations(self) -> list[str]:
        out = []
        if self.epochs < 1:
            out.append(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_new_tokens < 1:
            out.append(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if not self.lr_max > 0:
            out.append(f"lr_max must be > 0, got {self.lr_max}")
        if self.early_stopping_patience is not None and self.early_stopping_patience < 1:
            out.append(f"early_stopping_patience must be >= 1, got {self.early_stopping_patience}")
        return out

    def to_json_dict(self) -> dict:
        out = {
            "optimizer": self.optimizer.value,
            "lr_max": self.lr_max,
            "lr_schedule": self.lr_schedule.value,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "max_new_tokens": self.max_new_tokens,
        }
        if self.early_stopping_patience is not None:
            out["early_stopping_patience"] = self.early_stopping_patience
        return out

    @classmethod
    def from_json_dict(cls, raw: dict, *, where: str = "hyperparams") -> "TrainingHyperparams":
        known = {"optimizer", "lr_max", "lr_schedule", "epochs", "batch_size",
                 "max_new_tokens", "early_stopping_patience"}
        unknown = set(raw) - known
        if unknown:
            raise SchemaError(f"{where}: unknown keys {sorted(unknown)}")
        for key in ("epochs", "batch_size", "max_new_tokens"):
            if key not in raw:
                raise SchemaError(f"{where}: '{key}' is required")
        try:
            return cls(
                epochs=int(raw["epochs"]),
                batch_size=int(raw["batch_size"]),
                max_new_tokens=int(raw["max_new_tokens"]),
                optimizer=Optimizer(raw.get("optimizer", Optimizer.ADAMW.value)),
                lr_max=float(raw.get("lr_max", 2e-5)),
                lr_schedule=LRSchedule(raw.get("lr_schedule", LRSchedule.LINEAR_DECAY_TO_ZERO.value)),
                early_stopping_patience=(
                    int(raw["early_stopping_patience"])
                    if raw.get("early_stopping_patience") is not None else None
                ),
            )
        except ValueError as exc:
            raise SchemaError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class StageConfig:
    stage_id: str
    base: str
    dataset: str
    hyperparams: TrainingHyperparams
    task: Task = Task.SUMMARIZE
    input_field: str = "findings"
    target_field: str = "impression"

    def to_json_dict(self) -> dict:
        return {
            "id": self.stage_id,
            "base": self.base,
            "dataset": self.dataset,
            "task": self.task.value,
            "input_field": self.input_field,
            "target_field": self.target_field,
            "hyperparams": self.hyperparams.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, raw: dict) -> "StageConfig":
        known = {"id", "base", "dataset", "task", "input_field", "target_field", "hyperparams"}
        unknown = set(raw) - known
        where = f"stage {raw.get('id', '?')}"
        if unknown:
            raise SchemaError(f"{where}: unknown keys {sorted(unknown)}")
        for key in ("id", "base", "dataset", "hyperparams"):
            if key not in raw:
                raise SchemaError(f"{where}: '{key}' is required")
        try:
            task = Task(raw.get("task", Task.SUMMARIZE.value))
        except ValueError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
        return cls(
            stage_id=raw["id"],
            base=raw["base"],
            dataset=raw["dataset"],
            hyperparams=TrainingHyperparams.from_json_dict(raw["hyperparams"],
                                                           where=f"{where} hyperparams"),
            task=task,
            input_field=raw.get("input_field", "findings"),
            target_field=raw.get("target_field", "impression"),
        )


@dataclass(frozen=True)
class PipelineConfig:
    stages: tuple[StageConfig, ...]
    datasets: dict[str, str] = field(default_factory=dict)
    external_checkpoints: tuple[str, ...] = ()

    def stage(self, stage_id: str) -> StageConfig:
        for stage in self.stages:
            if stage.stage_id == stage_id:
                return stage
        raise UnknownStage(f"stage {stage_id!r} is not declared")

    def stage_ids(self) -> list[str]:
        return [s.stage_id for s in self.stages]

    def to_json_dict(self) -> dict:
        return {
            "external_checkpoints": list(self.external_checkpoints),
            "datasets": dict(self.datasets),
            "stages": [s.to_json_dict() for s in self.stages],
        }

    @classmethod
    def from_json_dict(cls, raw: dict) -> "PipelineConfig":
        known = {"stages", "datasets", "external_checkpoints"}
        unknown = set(raw) - known
        if unknown:
            raise SchemaError(f"pipeline config: unknown keys {sorted(unknown)}")
        if "stages" not in raw or not isinstance(raw["stages"], list):
            raise SchemaError("pipeline config: 'stages' list is required")
        return cls(
            stages=tuple(StageConfig.from_json_dict(s) for s in raw["stages"]),
            datasets=dict(raw.get("datasets", {})),
            external_checkpoints=tuple(raw.get("external_checkpoints", [])),
        )


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    return PipelineConfig.from_json_dict(raw)


# ---------------------------------------------------------------------------
# Validation and chain resolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    kind: str  # DuplicateStageId | CycleDetected | UnknownBase | UnknownDataset | HyperparamViolation
    stage_id: str
    message: str

    def __str__(self) -> str:
        return f"[{self.kind}] {self.stage_id}: {self.message}"


def resolve_checkpoint_chain(config: PipelineConfig, stage_id: str) -> list[str]:
    """Base-to-target dependency chain via `base` links, external checkpoint
    first. Branches that are not ancestors of stage_id are excluded."""
    by_id = {s.stage_id: s for s in config.stages}
    if stage_id not in by_id:
        raise UnknownStage(f"stage {stage_id!r} is not declared")
    chain: list[str] = []
    seen: set[str] = set()
    current = stage_id
    while True:
        if current in seen:
            raise CycleDetected(f"cycle through stage {current!r}")
        seen.add(current)
        chain.append(current)
        base = by_id[current].base
        if base in config.external_checkpoints:
            chain.append(base)
            break
        if base not in by_id:
            raise UnknownBase(f"stage {current!r} bases on unknown checkpoint {base!r}")
        current = base
    chain.reverse()
    return chain


def validate_config(config: PipelineConfig) -> list[Diagnostic]:
    """Static checks; empty list iff the config is runnable."""
    diagnostics: list[Diagnostic] = []
    seen_ids: set[str] = set()
    for stage in config.stages:
        if stage.stage_id in seen_ids:
            diagnostics.append(Diagnostic("DuplicateStageId", stage.stage_id,
                                          "stage id declared more than once"))
        seen_ids.add(stage.stage_id)

    by_id = {s.stage_id: s for s in config.stages}
    for stage in config.stages:
        for violation in stage.hyperparams.violations():
            diagnostics.append(Diagnostic("HyperparamViolation", stage.stage_id, violation))
        if stage.dataset not in config.datasets:
            diagnostics.append(Diagnostic("UnknownDataset", stage.stage_id,
                                          f"dataset {stage.dataset!r} is not declared"))
        if stage.base not in config.external_checkpoints and stage.base not in by_id:
            diagnostics.append(Diagnostic("UnknownBase", stage.stage_id,
                                          f"base {stage.base!r} is neither a stage nor an "
                                          f"external checkpoint"))

    # cycle detection over base links (externals terminate a path)
    state: dict[str, int] = {}  # 0 visiting, 1 safe

    def visit(sid: str, trail: list[str]) -> bool:
        if sid in config.external_checkpoints or sid not in by_id:
            return True
        if state.get(sid) == 1:
            return True
        if state.get(sid) == 0:
            diagnostics.append(Diagnostic("CycleDetected", sid,
                                          "cycle: " + " -> ".join(trail + [sid])))
            return False
        state[sid] = 0
        ok = visit(by_id[sid].base, trail + [sid])
        state[sid] = 1
        return ok

    for stage in config.stages:
        visit(stage.stage_id, [])
    return diagnostics


# ---------------------------------------------------------------------------
# Dataset loading
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingData:
    train: tuple[tuple[str, str], ...]
    validation: tuple[tuple[str, str], ...]
    test: tuple[tuple[str, str], ...]
    unassigned: tuple[tuple[str, str], ...]
    languages: tuple[str, ...]


def load_training_pairs(path: str | Path, input_field: str, target_field: str) -> TrainingData:
    """Read (input, target) pairs per split from a JSONL dataset file.

    Records may carry any field names (e.g. review_body/review_title);
    the stage config says which two to use. Records without a split land
    in 'unassigned' and are never trained on.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetMissing(f"dataset file not found: {path}")
    splits: dict[str, list[tuple[str, str]]] = {
        "train": [], "validation": [], "test": [], "unassigned": [],
    }
    languages: list[str] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            for name in (input_field, target_field):
                if name not in record:
                    raise SchemaError(f"{path}:{lineno}: missing field {name!r}")
            split = record.get("split", "unassigned")
            if split not in splits:
                raise SchemaError(f"{path}:{lineno}: unknown split {split!r}")
            splits[split].append((record[input_field], record[target_field]))
            language = record.get("language")
            if language and language not in languages:
                languages.append(language)
    return TrainingData(
        train=tuple(splits["train"]),
        validation=tuple(splits["validation"]),
        test=tuple(splits["test"]),
        unassigned=tuple(splits["unassigned"]),
        languages=tuple(languages),
    )


# ---------------------------------------------------------------------------
# Content hashing and the artifact registry
# ---------------------------------------------------------------------------

def _file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _resolve_dataset_path(config: PipelineConfig, dataset: str, workspace: Path) -> Path:
    raw = Path(config.datasets[dataset])
    return raw if raw.is_absolute() else workspace / raw


def stage_fingerprints(
    config: PipelineConfig, workspace: Path, seed: int, backend_name: str
) -> dict[str, str]:
    """Content hash per stage: its own definition, seed, backend, dataset
    bytes, and (recursively) its base's hash. A retrained ancestor therefore
    changes every descendant's expected hash."""
    by_id = {s.stage_id: s for s in config.stages}
    memo: dict[str, str] = {}

    def fingerprint(sid: str) -> str:
        if sid in memo:
            return memo[sid]
        stage = by_id[sid]
        base_fp = stage.base if stage.base in config.external_checkpoints else fingerprint(stage.base)
        dataset_path = _resolve_dataset_path(config, stage.dataset, workspace)
        if not dataset_path.exists():
            raise DatasetMissing(f"dataset file not found: {dataset_path}")
        payload = json.dumps({
            "stage": stage.to_json_dict(),
            "base": base_fp,
            "dataset_digest": _file_digest(dataset_path),
            "seed": seed,
            "backend": backend_name,
        }, sort_keys=True)
        memo[sid] = hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
        return memo[sid]

    for stage in config.stages:
        fingerprint(stage.stage_id)
    return memo


class Registry:
    """stage_id -> {content_hash, artifact, ...}; JSON file, atomic writes."""

    def __init__(self, path: Path, entries: dict[str, dict]):
        self.path = path
        self.entries = entries

    @classmethod
    def load(cls, workspace: Path) -> "Registry":
        path = workspace / "registry.json"
        entries = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
        return cls(path, entries)

    def get(self, stage_id: str) -> dict | None:
        return self.entries.get(stage_id)

    def set(self, stage_id: str, entry: dict) -> None:
        self.entries[stage_id] = entry
        tmp = self.path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.entries, indent=2, sort_keys=True), encoding="utf-8")
        tmp.replace(self.path)


# ---------------------------------------------------------------------------
# Trainer backend protocol
# ---------------------------------------------------------------------------

class TrainerBackend(Protocol):
    name: str

    def setup(self, stage: StageConfig, *, base_artifact: Path | None,
              train_pairs: Sequence[tuple[str, str]], val_pairs: Sequence[tuple[str, str]],
              state_dir: Path, seed: int) -> Any: ...

    def completed_epochs(self, state: Any) -> int: ...

    def run_epoch(self, state: Any, epoch: int) -> tuple[float, float | None]: ...

    def finalize(self, state: Any, artifact_dir: Path) -> dict: ...


# ---------------------------------------------------------------------------
# Stage execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageReport:
    stage_id: str
    backend: str
    artifact_path: Path
    content_hash: str
    epoch_metrics: tuple[tuple[int, float, float | None], ...]
    wall_time_s: float
    cached: bool
    invocation: dict


def _workspace_lock(workspace: Path, timeout: float) -> FileLock:
    workspace.mkdir(parents=True, exist_ok=True)
    return FileLock(str(workspace / "pipeline.lock"), timeout=timeout)


def _reset_dir(path: Path) -> None:
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def run_stage(
    config: PipelineConfig,
    stage_id: str,
    backend: TrainerBackend,
    workspace: str | Path,
    *,
    seed: int = 0,
    recursive: bool = False,
    force: bool = False,
    lock_timeout: float = -1,
) -> StageReport:
    """Train one stage (and, with recursive=True, any missing or stale
    ancestors). At most one stage executes at a time per workspace."""
    workspace = Path(workspace)
    with _workspace_lock(workspace, lock_timeout):
        return _run_stage_locked(config, stage_id, backend, workspace,
                                 seed=seed, recursive=recursive, force=force)


def _run_stage_locked(
    config: PipelineConfig,
    stage_id: str,
    backend: TrainerBackend,
    workspace: Path,
    *,
    seed: int,
    recursive: bool,
    force: bool,
) -> StageReport:
    chain = resolve_checkpoint_chain(config, stage_id)
    fingerprints = stage_fingerprints(config, workspace, seed, backend.name)
    registry = Registry.load(workspace)

    for ancestor in chain[:-1]:
        if ancestor in config.external_checkpoints:
            continue
        entry = registry.get(ancestor)
        current = entry is not None and entry["content_hash"] == fingerprints[ancestor]
        if current:
            continue
        if not recursive:
            reason = "is stale" if entry else "has not been trained"
            raise MissingArtifact(
                f"stage {stage_id!r} needs {ancestor!r}, which {reason}; "
                f"rerun with recursive=True"
            )
        _train_stage(config, ancestor, backend, workspace, registry,
                     fingerprints, seed=seed, force=False)

    return _train_stage(config, stage_id, backend, workspace, registry,
                        fingerprints, seed=seed, force=force)


def _train_stage(
    config: PipelineConfig,
    stage_id: str,
    backend: TrainerBackend,
    workspace: Path,
    registry: Registry,
    fingerprints: dict[str, str],
    *,
    seed: int,
    force: bool,
) -> StageReport:
    stage = config.stage(stage_id)
    violations = stage.hyperparams.violations()
    if violations:
        raise InvalidStage(f"stage {stage_id}: " + "; ".join(violations))

    expected_hash = fingerprints[stage_id]
    stage_dir = workspace / "stages" / stage_id
    state_dir = stage_dir / "state"
    artifact_dir = stage_dir / "artifact"
    progress_path = stage_dir / "progress.json"

    entry = registry.get(stage_id)
    if (not force and entry is not None and entry["content_hash"] == expected_hash
            and (workspace / entry["artifact"]).exists()):
        return StageReport(
            stage_id=stage_id,
            backend=backend.name,
            artifact_path=workspace / entry["artifact"],
            content_hash=expected_hash,
            epoch_metrics=tuple(tuple(m) for m in entry["epoch_metrics"]),
            wall_time_s=0.0,
            cached=True,
            invocation=entry["invocation"],
        )

    data = load_training_pairs(
        _resolve_dataset_path(config, stage.dataset, workspace),
        stage.input_field, stage.target_field,
    )
    train_pairs, val_pairs = data.train, data.validation
    if not train_pairs:
        raise DatasetEmpty(f"stage {stage_id}: dataset {stage.dataset!r} has an empty TRAIN split")

    # Throw away partial state from an older stage definition.
    progress: dict | None = None
    if progress_path.exists():
        progress = json.loads(progress_path.read_text(encoding="utf-8"))
        if progress.get("content_hash") != expected_hash:
            progress = None
    if progress is None or force:
        progress = None
        _reset_dir(state_dir)
    state_dir.mkdir(parents=True, exist_ok=True)
    stage_dir.mkdir(parents=True, exist_ok=True)

    base_artifact: Path | None = None
    if stage.base not in config.external_checkpoints:
        base_entry = registry.get(stage.base)
        assert base_entry is not None  # guaranteed by ancestor walk
        base_artifact = workspace / base_entry["artifact"]

    started = time.monotonic()
    state = backend.setup(stage, base_artifact=base_artifact, train_pairs=train_pairs,
                          val_pairs=val_pairs, state_dir=state_dir, seed=seed)
    start_epoch = backend.completed_epochs(state)
    metrics: list[tuple[int, float, float | None]] = []
    if progress is not None:
        metrics = [tuple(m) for m in progress["epoch_metrics"]][:start_epoch]
    if len(metrics) != start_epoch:
        # progress file and backend state disagree; trust the backend
        metrics = metrics[:start_epoch]
        start_epoch = len(metrics)

    hp = stage.hyperparams
    best_val = min((m[2] for m in metrics if m[2] is not None), default=float("inf"))
    since_best = 0
    for epoch in range(start_epoch, hp.epochs):
        try:
            train_loss, val_loss = backend.run_epoch(state, epoch)
        except Exception as exc:
            raise BackendFailure(f"stage {stage_id} failed at epoch {epoch}: {exc}") from exc
        metrics.append((epoch, train_loss, val_loss))
        progress_path.write_text(json.dumps({
            "content_hash": expected_hash,
            "epoch_metrics": metrics,
        }), encoding="utf-8")
        if hp.early_stopping_patience is not None and val_loss is not None:
            if val_loss < best_val:
                best_val = val_loss
                since_best = 0
            else:
                since_best += 1
                if since_best >= hp.early_stopping_patience:
                    break

    _reset_dir(artifact_dir)
    extra_meta = backend.finalize(state, artifact_dir)
    invocation = {
        "stage_id": stage_id,
        "task": stage.task.value,
        "base": stage.base,
        "dataset": stage.dataset,
        "input_field": stage.input_field,
        "target_field": stage.target_field,
        "n_train": len(train_pairs),
        "n_validation": len(val_pairs),
        "hyperparams": hp.to_json_dict(),
        "seed": seed,
        "backend": backend.name,
    }
    meta = {
        "stage_id": stage_id,
        "content_hash": expected_hash,
        "languages": list(data.languages),
        "invocation": invocation,
        **extra_meta,
    }
    (artifact_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True),
                                            encoding="utf-8")
    base_hash = (stage.base if stage.base in config.external_checkpoints
                 else fingerprints[stage.base])
    registry.set(stage_id, {
        "content_hash": expected_hash,
        "artifact": str(artifact_dir.relative_to(workspace)),
        "base": stage.base,
        "base_hash": base_hash,
        "backend": backend.name,
        "invocation": invocation,
        "epoch_metrics": metrics,
    })
    return StageReport(
        stage_id=stage_id,
        backend=backend.name,
        artifact_path=artifact_dir,
        content_hash=expected_hash,
        epoch_metrics=tuple(metrics),
        wall_time_s=time.monotonic() - started,
        cached=False,
        invocation=invocation,
    )


# ---------------------------------------------------------------------------
# Whole-pipeline execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineReport:
    records: tuple[dict, ...]

    def stage_records(self) -> list[dict]:
        return [r for r in self.records if r["kind"] == "stage"]


def run_pipeline(
    config: PipelineConfig,
    backend: TrainerBackend,
    workspace: str | Path,
    *,
    stage_id: str | None = None,
    seed: int = 0,
    force: bool = False,
    lock_timeout: float = -1,
) -> PipelineReport:
    """Run every stage (or the ancestors-plus-target of one stage) and return
    the run log: one record per external checkpoint materialized plus one per
    stage invocation, in execution order."""
    workspace = Path(workspace)
    diagnostics = validate_config(config)
    if diagnostics:
        raise InvalidStage("config is not runnable: " + "; ".join(map(str, diagnostics)))

    targets = [stage_id] if stage_id else config.stage_ids()
    externals: list[str] = []
    order: list[str] = []
    for target in targets:
        for sid in resolve_checkpoint_chain(config, target):
            if sid in config.external_checkpoints:
                if sid not in externals:
                    externals.append(sid)
            elif sid not in order:
                order.append(sid)

    records: list[dict] = [
        {"kind": "external_checkpoint", "id": name} for name in externals
    ]
    with _workspace_lock(workspace, lock_timeout):
        for sid in order:
            report = _run_stage_locked(config, sid, backend, workspace,
                                       seed=seed, recursive=True,
                                       force=force)
            records.append({
                "kind": "stage",
                "id": sid,
                "cached": report.cached,
                "invocation": report.invocation,
                "artifact": str(report.artifact_path),
                "epochs_completed": len(report.epoch_metrics),
            })
    return PipelineReport(records=tuple(records))
