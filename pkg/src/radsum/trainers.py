"""Trainer backends behind one interface.

NULL records invocations and trains nothing; TOY trains a tiny randomly
initialized GRU seq2seq on desk-scale data to prove the plumbing; FULL
fine-tunes a real pretrained checkpoint (needs the `full` extra and model
downloads). All three are epoch-resumable: state persisted after every
epoch, and a resumed run reproduces the uninterrupted one exactly.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from pathlib import Path
from typing import Sequence

from .pipeline import StageConfig
from .rouge import tokenize

Pair = tuple[str, str]

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


# ---------------------------------------------------------------------------
# NULL backend
# ---------------------------------------------------------------------------

class NullTrainer:
    """Records exactly what it would have been asked to train."""

    name = "null"

    def __init__(self):
        self.invocations: list[dict] = []

    def setup(self, stage: StageConfig, *, base_artifact, train_pairs, val_pairs,
              state_dir: Path, seed: int):
        state_dir.mkdir(parents=True, exist_ok=True)
        state_file = state_dir / "null_state.json"
        completed = 0
        if state_file.exists():
            completed = json.loads(state_file.read_text())["completed"]
        hp = stage.hyperparams
        self.invocations.append({
            "stage_id": stage.stage_id,
            "task": stage.task.value,
            "base": stage.base,
            "dataset": stage.dataset,
            "input_field": stage.input_field,
            "target_field": stage.target_field,
            "n_train": len(train_pairs),
            "n_validation": len(val_pairs),
            "optimizer": hp.optimizer.value,
            "lr_max": hp.lr_max,
            "lr_schedule": hp.lr_schedule.value,
            "epochs": hp.epochs,
            "batch_size": hp.batch_size,
            "max_new_tokens": hp.max_new_tokens,
            "resumed_at_epoch": completed,
        })
        return {"stage": stage, "file": state_file, "completed": completed}

    def completed_epochs(self, state) -> int:
        return state["completed"]

    def run_epoch(self, state, epoch: int) -> tuple[float, float | None]:
        state["completed"] = epoch + 1
        state["file"].write_text(json.dumps({"completed": state["completed"]}))
        # deterministic placeholder losses, a function of the epoch alone
        return round(1.0 / (1 + epoch), 6), round(1.2 / (1 + epoch), 6)

    def finalize(self, state, artifact_dir: Path) -> dict:
        artifact_dir.mkdir(parents=True, exist_ok=True)
        (artifact_dir / "model.json").write_text(json.dumps({"type": "null"}))
        return {"generator": "null", "max_new_tokens": state["stage"].hyperparams.max_new_tokens}


# ---------------------------------------------------------------------------
# TOY backend: tiny GRU seq2seq, word-level vocabulary
# ---------------------------------------------------------------------------

def build_vocab(pairs: Sequence[Pair], max_size: int = 8000) -> list[str]:
    counts = Counter(tok for pair in pairs for text in pair for tok in tokenize(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: max_size - len(SPECIALS)]
    return list(SPECIALS) + [word for word, _ in ranked]


def encode(text: str, stoi: dict[str, int], limit: int | None = None) -> list[int]:
    ids = [stoi.get(tok, UNK) for tok in tokenize(text)]
    return ids[:limit] if limit else ids


class ToyTrainer:
    """Trains a one-layer GRU encoder/decoder from scratch.

    No dropout anywhere, per-epoch shuffling draws from a seed derived only
    from (seed, epoch), and optimizer/scheduler state is saved each epoch —
    so an interrupted run resumed later walks the identical loss trajectory.
    """

    name = "toy"

    def __init__(self, embedding_dim: int = 32, hidden_dim: int = 64,
                 max_input_tokens: int = 128, vocab_size: int = 8000):
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.max_input_tokens = max_input_tokens
        self.vocab_size = vocab_size

    def _build_model(self, torch, vocab_size: int):
        from torch import nn

        class ToySeq2Seq(nn.Module):
            def __init__(self, n_vocab, emb, hidden):
                super().__init__()
                self.embed = nn.Embedding(n_vocab, emb, padding_idx=PAD)
                self.encoder = nn.GRU(emb, hidden, batch_first=True)
                self.decoder = nn.GRU(emb, hidden, batch_first=True)
                self.out = nn.Linear(hidden, n_vocab)

            def forward(self, src, tgt_in):
                _, h = self.encoder(self.embed(src))
                dec, _ = self.decoder(self.embed(tgt_in), h)
                return self.out(dec)

        return ToySeq2Seq(vocab_size, self.embedding_dim, self.hidden_dim)

    def setup(self, stage: StageConfig, *, base_artifact, train_pairs, val_pairs,
              state_dir: Path, seed: int):
        import torch

        state_dir.mkdir(parents=True, exist_ok=True)
        hp = stage.hyperparams

        if base_artifact is not None and (Path(base_artifact) / "model.pt").exists():
            # continue from the base stage's weights (and vocabulary)
            blob = torch.load(Path(base_artifact) / "model.pt", weights_only=False)
            vocab = blob["vocab"]
            torch.manual_seed(seed)
            model = self._build_model(torch, len(vocab))
            model.load_state_dict(blob["model"])
        else:
            vocab = build_vocab(train_pairs, self.vocab_size)
            torch.manual_seed(seed)
            model = self._build_model(torch, len(vocab))

        stoi = {word: i for i, word in enumerate(vocab)}
        steps_per_epoch = max(1, -(-len(train_pairs) // hp.batch_size))
        total_steps = hp.epochs * steps_per_epoch
        optimizer = torch.optim.AdamW(model.parameters(), lr=hp.lr_max)
        scheduler = torch.optim.lr_scheduler.LambdaLR(
            optimizer, lambda step: max(0.0, 1.0 - step / total_steps)
        )

        state = {
            "torch": torch,
            "stage": stage,
            "model": model,
            "optimizer": optimizer,
            "scheduler": scheduler,
            "vocab": vocab,
            "stoi": stoi,
            "train": train_pairs,
            "val": val_pairs,
            "seed": seed,
            "completed": 0,
            "state_file": state_dir / "state.pt",
        }
        if state["state_file"].exists():
            saved = torch.load(state["state_file"], weights_only=False)
            model.load_state_dict(saved["model"])
            optimizer.load_state_dict(saved["optimizer"])
            scheduler.load_state_dict(saved["scheduler"])
            state["completed"] = saved["completed"]
            state["vocab"] = saved["vocab"]
            state["stoi"] = {word: i for i, word in enumerate(saved["vocab"])}
        return state

    def completed_epochs(self, state) -> int:
        return state["completed"]

    def _batch(self, torch, pairs, stoi, mntp):
        src_ids = [encode(inp, stoi, self.max_input_tokens) or [UNK] for inp, _ in pairs]
        tgt_ids = [[BOS] + encode(tgt, stoi, mntp) + [EOS] for _, tgt in pairs]
        max_src = max(len(s) for s in src_ids)
        max_tgt = max(len(t) for t in tgt_ids)
        src = torch.full((len(pairs), max_src), PAD, dtype=torch.long)
        tgt = torch.full((len(pairs), max_tgt), PAD, dtype=torch.long)
        for i, s in enumerate(src_ids):
            src[i, : len(s)] = torch.tensor(s)
        for i, t in enumerate(tgt_ids):
            tgt[i, : len(t)] = torch.tensor(t)
        return src, tgt[:, :-1], tgt[:, 1:]

    def _loss(self, torch, model, pairs, stoi, mntp):
        from torch.nn import functional as F

        src, tgt_in, tgt_out = self._batch(torch, pairs, stoi, mntp)
        logits = model(src, tgt_in)
        return F.cross_entropy(logits.reshape(-1, logits.size(-1)),
                               tgt_out.reshape(-1), ignore_index=PAD)

    def run_epoch(self, state, epoch: int) -> tuple[float, float | None]:
        torch = state["torch"]
        stage: StageConfig = state["stage"]
        hp = stage.hyperparams
        model, stoi = state["model"], state["stoi"]

        order = list(range(len(state["train"])))
        random.Random(f"toy:{state['seed']}:{epoch}").shuffle(order)

        model.train()
        total, batches = 0.0, 0
        for start in range(0, len(order), hp.batch_size):
            batch = [state["train"][i] for i in order[start : start + hp.batch_size]]
            loss = self._loss(torch, model, batch, stoi, hp.max_new_tokens)
            state["optimizer"].zero_grad()
            loss.backward()
            state["optimizer"].step()
            state["scheduler"].step()
            total += float(loss.detach())
            batches += 1

        val_loss = None
        if state["val"]:
            model.eval()
            with torch.no_grad():
                val_loss = float(self._loss(torch, model, state["val"], stoi, hp.max_new_tokens))

        state["completed"] = epoch + 1
        torch.save({
            "model": model.state_dict(),
            "optimizer": state["optimizer"].state_dict(),
            "scheduler": state["scheduler"].state_dict(),
            "completed": state["completed"],
            "vocab": state["vocab"],
        }, state["state_file"])
        return total / batches, val_loss

    def finalize(self, state, artifact_dir: Path) -> dict:
        torch = state["torch"]
        artifact_dir.mkdir(parents=True, exist_ok=True)
        torch.save({
            "model": state["model"].state_dict(),
            "vocab": state["vocab"],
            "embedding_dim": self.embedding_dim,
            "hidden_dim": self.hidden_dim,
            "max_input_tokens": self.max_input_tokens,
        }, artifact_dir / "model.pt")
        return {"generator": "toy", "vocab_size": len(state["vocab"]),
                "max_new_tokens": state["stage"].hyperparams.max_new_tokens}


class ToyGenerator:
    """Greedy decoding for TOY artifacts; deterministic by construction."""

    def __init__(self, artifact_dir: str | Path):
        import torch

        blob = torch.load(Path(artifact_dir) / "model.pt", weights_only=False)
        trainer = ToyTrainer(embedding_dim=blob["embedding_dim"],
                             hidden_dim=blob["hidden_dim"],
                             max_input_tokens=blob["max_input_tokens"])
        self._torch = torch
        self.vocab: list[str] = blob["vocab"]
        self.stoi = {word: i for i, word in enumerate(self.vocab)}
        self.max_input_tokens = blob["max_input_tokens"]
        self.model = trainer._build_model(torch, len(self.vocab))
        self.model.load_state_dict(blob["model"])
        self.model.eval()

    def generate(self, text: str, max_new_tokens: int) -> str:
        torch = self._torch
        ids = encode(text, self.stoi, self.max_input_tokens) or [UNK]
        src = torch.tensor([ids], dtype=torch.long)
        words: list[str] = []
        with torch.no_grad():
            _, hidden = self.model.encoder(self.model.embed(src))
            token = torch.tensor([[BOS]], dtype=torch.long)
            for step in range(max_new_tokens):
                out, hidden = self.model.decoder(self.model.embed(token), hidden)
                logits = self.model.out(out[0, -1])
                logits[PAD] = logits[BOS] = logits[UNK] = float("-inf")
                if step == 0:
                    logits[EOS] = float("-inf")  # guarantee >= 1 generated token
                next_id = int(torch.argmax(logits))
                if next_id == EOS:
                    break
                words.append(self.vocab[next_id])
                token = torch.tensor([[next_id]], dtype=torch.long)
        return " ".join(words)


# ---------------------------------------------------------------------------
# FULL backend: real pretrained-checkpoint fine-tuning
# ---------------------------------------------------------------------------

class FullTrainer:
    """Fine-tunes a pretrained multilingual seq2seq checkpoint.

    Requires the `full` extra (transformers) and, for external bases,
    downloading the published weights; not exercised by the desk-scale
    test suite.
    """

    name = "full"

    EXTERNAL_MODELS = {"mt5-base": "google/mt5-base"}

    def __init__(self, device: str = "cpu"):
        self.device = device

    def _imports(self):
        try:
            import transformers
        except ImportError as exc:  # pragma: no cover - exercised via message test
            raise RuntimeError(
                "the 'full' trainer backend requires the transformers extra; "
                "install with: pip install 'radsum[full]'"
            ) from exc
        import torch

        return torch, transformers

    def setup(self, stage: StageConfig, *, base_artifact, train_pairs, val_pairs,
              state_dir: Path, seed: int):
        torch, transformers = self._imports()
        state_dir.mkdir(parents=True, exist_ok=True)
        source = (str(base_artifact) if base_artifact is not None
                  else self.EXTERNAL_MODELS.get(stage.base, stage.base))
        resume_dir = state_dir / "checkpoint"
        load_from = str(resume_dir) if (resume_dir / "config.json").exists() else source

        torch.manual_seed(seed)
        tokenizer = transformers.AutoTokenizer.from_pretrained(load_from)
        model = transformers.AutoModelForSeq2SeqLM.from_pretrained(load_from).to(self.device)

        hp = stage.hyperparams
        steps_per_epoch = max(1, -(-len(train_pairs) // hp.batch_size))
        optimizer = torch.optim.AdamW(model.parameters(), lr=hp.lr_max)
        scheduler = torch.optim.lr_scheduler.LambdaLR(
            optimizer, lambda step: max(0.0, 1.0 - step / (hp.epochs * steps_per_epoch))
        )
        completed = 0
        trainer_state = state_dir / "trainer_state.pt"
        if trainer_state.exists():
            saved = torch.load(trainer_state, weights_only=False)
            optimizer.load_state_dict(saved["optimizer"])
            scheduler.load_state_dict(saved["scheduler"])
            completed = saved["completed"]
        return {
            "torch": torch, "stage": stage, "model": model, "tokenizer": tokenizer,
            "optimizer": optimizer, "scheduler": scheduler, "train": train_pairs,
            "val": val_pairs, "seed": seed, "completed": completed,
            "state_dir": state_dir,
        }

    def completed_epochs(self, state) -> int:
        return state["completed"]

    def _step_loss(self, state, pairs):
        torch = state["torch"]
        hp = state["stage"].hyperparams
        tokenizer, model = state["tokenizer"], state["model"]
        inputs = tokenizer([p[0] for p in pairs], return_tensors="pt", padding=True,
                           truncation=True, max_length=512).to(self.device)
        labels = tokenizer([p[1] for p in pairs], return_tensors="pt", padding=True,
                           truncation=True, max_length=hp.max_new_tokens).input_ids
        labels[labels == tokenizer.pad_token_id] = -100
        return model(**inputs, labels=labels.to(self.device)).loss

    def run_epoch(self, state, epoch: int) -> tuple[float, float | None]:
        torch = state["torch"]
        hp = state["stage"].hyperparams
        order = list(range(len(state["train"])))
        random.Random(f"full:{state['seed']}:{epoch}").shuffle(order)
        state["model"].train()
        total, batches = 0.0, 0
        for start in range(0, len(order), hp.batch_size):
            batch = [state["train"][i] for i in order[start : start + hp.batch_size]]
            loss = self._step_loss(state, batch)
            state["optimizer"].zero_grad()
            loss.backward()
            state["optimizer"].step()
            state["scheduler"].step()
            total += float(loss.detach())
            batches += 1
        val_loss = None
        if state["val"]:
            state["model"].eval()
            with torch.no_grad():
                val_loss = float(self._step_loss(state, state["val"]))
        state["completed"] = epoch + 1
        checkpoint_dir = state["state_dir"] / "checkpoint"
        state["model"].save_pretrained(checkpoint_dir)
        state["tokenizer"].save_pretrained(checkpoint_dir)
        torch.save({
            "optimizer": state["optimizer"].state_dict(),
            "scheduler": state["scheduler"].state_dict(),
            "completed": state["completed"],
        }, state["state_dir"] / "trainer_state.pt")
        return total / batches, val_loss

    def finalize(self, state, artifact_dir: Path) -> dict:
        artifact_dir.mkdir(parents=True, exist_ok=True)
        state["model"].save_pretrained(artifact_dir)
        state["tokenizer"].save_pretrained(artifact_dir)
        return {"generator": "full",
                "max_new_tokens": state["stage"].hyperparams.max_new_tokens}


BACKENDS = {"null": NullTrainer, "toy": ToyTrainer, "full": FullTrainer}


def get_backend(name: str):
    try:
        return BACKENDS[name]()
    except KeyError:
        raise ValueError(f"unknown trainer backend {name!r}; choose from {sorted(BACKENDS)}")
