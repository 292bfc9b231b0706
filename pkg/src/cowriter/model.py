"""Autoregressive sequence models over the token vocabulary: a tiny
decoder-only transformer (trainable) and an exact n-gram counting model
(reference/baseline), behind one interface."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .anticipate import CONTROL_OFFSET, EOS, PAD, VOCAB, VOCAB_SIZE


class ModelError(Exception):
    pass


class DatasetEmpty(ModelError):
    pass


class DivergenceDetected(ModelError):
    """Training loss went non-finite; the model was restored to the last
    finite-loss snapshot before this was raised."""


class MaskEmpty(ModelError):
    pass


class CheckpointError(ModelError):
    pass


@runtime_checkable
class SequenceModel(Protocol):
    vocab_size: int
    context_length: int
    version: str

    def next_token_logits(self, prefix: Sequence[int]) -> np.ndarray: ...


@dataclass(frozen=True)
class Policy:
    temperature: float = 1.0
    top_p: float = 0.95

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature {self.temperature} negative")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")


def masked_sample(
    logits: np.ndarray,
    allowed: np.ndarray,
    policy: Policy,
    rng: np.random.Generator,
) -> int:
    """Sample one token: disallowed logits dropped, softmax at temperature,
    nucleus truncation, then draw. temperature 0 is argmax (ties resolve to
    the lowest token id)."""
    idx = np.flatnonzero(allowed) if allowed.dtype == bool else np.asarray(allowed)
    if idx.size == 0:
        raise MaskEmpty("no token allowed by mask")
    sub = np.asarray(logits, dtype=np.float64)[idx]
    if policy.temperature == 0:
        return int(idx[int(np.argmax(sub))])
    sub = sub / policy.temperature
    sub -= sub.max()
    probs = np.exp(sub)
    probs /= probs.sum()
    if policy.top_p < 1.0:
        order = np.argsort(-probs, kind="stable")
        csum = np.cumsum(probs[order])
        keep = order[: int(np.searchsorted(csum, policy.top_p) + 1)]
        trimmed = np.zeros_like(probs)
        trimmed[keep] = probs[keep]
        probs = trimmed / trimmed.sum()
    return int(idx[rng.choice(probs.size, p=probs)])


def sample_note_triple(
    model: SequenceModel,
    prefix: list[int],
    policy: Policy,
    mask_fn,
    rng: np.random.Generator,
) -> list[int]:
    """Sample a (time, duration, note) triple. mask_fn(position, partial)
    returns the boolean allowed-token vector for that position given the
    triple tokens sampled so far."""
    triple: list[int] = []
    for pos in range(3):
        logits = model.next_token_logits(prefix + triple)
        tok = masked_sample(logits, mask_fn(pos, triple), policy, rng)
        triple.append(tok)
    return triple


# --- n-gram ---------------------------------------------------------------

class NGramModel:
    """Add-k smoothed n-gram counts. Contexts are the last order-1 tokens
    (shorter at sequence starts, each length its own table entry)."""

    def __init__(self, order: int = 3, k: float = 0.01, vocab_size: int = VOCAB_SIZE):
        if order < 1:
            raise ValueError(f"order {order} must be >= 1")
        self.order = order
        self.k = k
        self.vocab_size = vocab_size
        self.context_length = order - 1
        self.counts: dict[tuple[int, ...], dict[int, int]] = {}
        self.version = f"ngram{order}-untrained"

    def _context(self, prefix: Sequence[int]) -> tuple[int, ...]:
        n = self.order - 1
        return tuple(prefix[-n:]) if n > 0 else ()

    def fit(self, sequences: list[list[int]]) -> "NGramModel":
        if not sequences:
            raise DatasetEmpty("no sequences to count")
        for seq in sequences:
            for i in range(1, len(seq)):
                ctx = self._context(seq[:i])
                self.counts.setdefault(ctx, {})
                self.counts[ctx][seq[i]] = self.counts[ctx].get(seq[i], 0) + 1
        self.version = f"ngram{self.order}-{len(sequences)}seqs"
        return self

    def next_token_logits(self, prefix: Sequence[int]) -> np.ndarray:
        ctx_counts = self.counts.get(self._context(prefix), {})
        total = sum(ctx_counts.values())
        probs = np.full(self.vocab_size, self.k, dtype=np.float64)
        for tok, c in ctx_counts.items():
            probs[tok] += c
        probs /= total + self.k * self.vocab_size
        return np.log(probs)


# --- tiny transformer -------------------------------------------------------

@dataclass(frozen=True)
class TinyTransformerConfig:
    layers: int = 2
    heads: int = 2
    model_dim: int = 64
    context_length: int = 512
    learning_rate: float = 3e-3
    batch_size: int = 16
    steps: int = 300
    loss_on_events_only: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.layers <= 4:
            raise ValueError(f"layers {self.layers} outside [2, 4]")
        if not 2 <= self.heads <= 4:
            raise ValueError(f"heads {self.heads} outside [2, 4]")
        if not 64 <= self.model_dim <= 256:
            raise ValueError(f"model_dim {self.model_dim} outside [64, 256]")
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {self.heads} heads")


class _Block(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.heads
        q, k, v = self.qkv(self.ln1(x)).split(d, dim=2)
        q = q.view(b, t, h, d // h).transpose(1, 2)
        k = k.view(b, t, h, d // h).transpose(1, 2)
        v = v.view(b, t, h, d // h).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / (d // h) ** 0.5
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        att = att.masked_fill(causal, float("-inf"))
        att = F.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.proj(y)
        return x + self.mlp(self.ln2(x))


class TinyTransformer(nn.Module):
    def __init__(self, config: TinyTransformerConfig, vocab_size: int = VOCAB_SIZE):
        super().__init__()
        torch.manual_seed(config.seed)
        self.config = config
        self.vocab_size = vocab_size
        self.context_length = config.context_length
        self.version = "tiny-untrained"
        self.tok_emb = nn.Embedding(vocab_size, config.model_dim)
        self.pos_emb = nn.Embedding(config.context_length, config.model_dim)
        self.blocks = nn.ModuleList(_Block(config.model_dim, config.heads) for _ in range(config.layers))
        self.ln_f = nn.LayerNorm(config.model_dim)
        self.head = nn.Linear(config.model_dim, vocab_size, bias=False)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        b, t = tokens.shape
        if t > self.context_length:
            raise ValueError(f"sequence length {t} exceeds context {self.context_length}")
        pos = torch.arange(t, device=tokens.device)
        x = self.tok_emb(tokens) + self.pos_emb(pos)[None]
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))

    @torch.no_grad()
    def next_token_logits(self, prefix: Sequence[int]) -> np.ndarray:
        self.eval()
        toks = list(prefix)[-self.context_length:]
        if not toks:
            toks = [PAD]
        t = torch.tensor([toks], dtype=torch.long)
        logits = self.forward(t)[0, -1]
        return logits.double().numpy()


def _event_loss_mask(targets: torch.Tensor) -> torch.Tensor:
    return (targets < CONTROL_OFFSET) | (targets == EOS)


def batch_loss(
    model: TinyTransformer, batch: list[list[int]], events_only: bool = False
) -> torch.Tensor:
    """Mean next-token cross-entropy over a ragged batch, PAD-ignored.
    Sequences longer than the context window keep their most recent tokens."""
    ctx = model.context_length
    clipped = [seq[-ctx:] for seq in batch]
    width = max(len(s) for s in clipped)
    dtype = next(model.parameters()).dtype
    toks = torch.full((len(clipped), width), PAD, dtype=torch.long)
    for i, seq in enumerate(clipped):
        toks[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
    logits = model(toks)[:, :-1]
    targets = toks[:, 1:].clone()
    if events_only:
        targets[~_event_loss_mask(targets)] = PAD
    return F.cross_entropy(
        logits.reshape(-1, model.vocab_size).to(dtype),
        targets.reshape(-1),
        ignore_index=PAD,
    )


SNAPSHOT_EVERY = 25


def train(
    model: TinyTransformer,
    sequences: list[list[int]],
    config: TinyTransformerConfig | None = None,
) -> list[float]:
    """Seeded SGD (Adam) next-token training. Returns the per-step loss
    curve. On a non-finite loss the model is restored to the last snapshot
    and DivergenceDetected is raised."""
    if not sequences:
        raise DatasetEmpty("no training sequences")
    config = config or model.config
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    losses: list[float] = []
    snapshot = copy.deepcopy(model.state_dict())
    model.train()
    for step in range(config.steps):
        pick = rng.integers(0, len(sequences), size=config.batch_size)
        batch = [sequences[i] for i in pick]
        loss = batch_loss(model, batch, events_only=config.loss_on_events_only)
        if not torch.isfinite(loss):
            model.load_state_dict(snapshot)
            raise DivergenceDetected(f"loss non-finite at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if (step + 1) % SNAPSHOT_EVERY == 0:
            snapshot = copy.deepcopy(model.state_dict())
    model.eval()
    model.version = f"tiny-{config.layers}x{config.model_dim}-s{config.steps}-seed{config.seed}"
    return losses


def evaluate_nll(model: SequenceModel, sequences: list[list[int]]) -> float:
    """Mean per-token negative log-likelihood (nats) under the model's
    next_token_logits, scanning every sequence position."""
    total, count = 0.0, 0
    for seq in sequences:
        for i in range(1, len(seq)):
            logits = np.asarray(model.next_token_logits(seq[:i]), dtype=np.float64)
            logz = np.logaddexp.reduce(logits)
            total += logz - logits[seq[i]]
            count += 1
    if count == 0:
        raise DatasetEmpty("no tokens to score")
    return total / count


# --- checkpoints ------------------------------------------------------------

CHECKPOINT_FORMAT_VERSION = 1


def checkpoint_save(model, path: str | Path) -> None:
    if isinstance(model, TinyTransformer):
        payload = {
            "kind": "tiny_transformer",
            "config": asdict(model.config),
            "state": model.state_dict(),
        }
    elif isinstance(model, NGramModel):
        payload = {
            "kind": "ngram",
            "config": {"order": model.order, "k": model.k, "vocab_size": model.vocab_size},
            "state": {str(ctx): dict(c) for ctx, c in model.counts.items()},
        }
    else:
        raise CheckpointError(f"cannot checkpoint {type(model).__name__}")
    payload["format_version"] = CHECKPOINT_FORMAT_VERSION
    payload["vocab_hash"] = VOCAB.hash()
    payload["version"] = model.version
    torch.save(payload, str(path))


def checkpoint_load(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(str(path), weights_only=False)
    except Exception as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}")
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a model checkpoint")
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {payload['format_version']} != "
            f"supported {CHECKPOINT_FORMAT_VERSION}"
        )
    if payload["vocab_hash"] != VOCAB.hash():
        raise CheckpointError("checkpoint was built against a different vocabulary")
    if payload["kind"] == "tiny_transformer":
        model = TinyTransformer(TinyTransformerConfig(**payload["config"]))
        model.load_state_dict(payload["state"])
        model.eval()
    elif payload["kind"] == "ngram":
        model = NGramModel(**payload["config"])
        model.counts = {_parse_ctx(s): dict(c) for s, c in payload["state"].items()}
    else:
        raise CheckpointError(f"unknown checkpoint kind {payload['kind']!r}")
    model.version = payload["version"]
    return model


def _parse_ctx(s: str) -> tuple[int, ...]:
    s = s.strip("()")
    if not s:
        return ()
    return tuple(int(x) for x in s.rstrip(",").split(",") if x.strip())
