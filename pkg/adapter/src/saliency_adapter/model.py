"""Toy TAG classifier: hashed token embeddings + 2-layer mean-aggregating GNN.

The checkpoint directory holds `config.json` (shape, labels, token budget)
and `weights.pt` (state dict). Token ids come from a process-stable hash
of the token string, so attribution is deterministic across runs and
machines. The activation is tanh: smooth everywhere, which keeps
finite-difference gradient checks well-conditioned.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn


class AdapterError(Exception):
    """Checkpoint, budget, or input problems surfaced to the operator."""


@dataclass(frozen=True)
class CheckpointConfig:
    vocab_buckets: int
    embed_dim: int
    hidden_dim: int
    labels: tuple[str, ...]
    max_tokens: int = 512

    @property
    def num_classes(self) -> int:
        return len(self.labels)


def token_bucket(token: str, buckets: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % buckets


class TagClassifier(nn.Module):
    def __init__(self, config: CheckpointConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.embedding = nn.Embedding(config.vocab_buckets, config.embed_dim, dtype=dtype)
        self.self1 = nn.Linear(config.embed_dim, config.hidden_dim, dtype=dtype)
        self.neigh1 = nn.Linear(config.embed_dim, config.hidden_dim, dtype=dtype)
        self.self2 = nn.Linear(config.hidden_dim, config.hidden_dim, dtype=dtype)
        self.neigh2 = nn.Linear(config.hidden_dim, config.hidden_dim, dtype=dtype)
        self.head = nn.Linear(config.hidden_dim, config.num_classes, dtype=dtype)

    def embed_tokens(self, node_tokens: list[list[str]]) -> list[torch.Tensor]:
        """One (n_tokens, embed_dim) tensor per node; empty nodes allowed."""
        dtype = self.embedding.weight.dtype
        out = []
        for tokens in node_tokens:
            if tokens:
                ids = torch.tensor(
                    [token_bucket(t, self.config.vocab_buckets) for t in tokens], dtype=torch.long
                )
                out.append(self.embedding(ids))
            else:
                out.append(torch.zeros((0, self.config.embed_dim), dtype=dtype))
        return out

    def logits_from_embeddings(
        self, token_embeds: list[torch.Tensor], neighbors: list[list[int]], root: int
    ) -> torch.Tensor:
        """Root-node class logits given token embeddings and adjacency."""
        dtype = self.embedding.weight.dtype
        zero = torch.zeros(self.config.embed_dim, dtype=dtype)
        node_vecs = [e.mean(dim=0) if e.shape[0] else zero for e in token_embeds]

        def layer(vecs, lin_self, lin_neigh):
            hidden_zero = torch.zeros(lin_self.out_features, dtype=dtype)
            out = []
            for i, vec in enumerate(vecs):
                if neighbors[i]:
                    agg = torch.stack([vecs[j] for j in neighbors[i]]).mean(dim=0)
                    pooled = lin_self(vec) + lin_neigh(agg)
                else:
                    pooled = lin_self(vec) + hidden_zero
                out.append(torch.tanh(pooled))
            return out

        h = layer(node_vecs, self.self1, self.neigh1)
        h = layer(h, self.self2, self.neigh2)
        return self.head(h[root])


def save_checkpoint(model: TagClassifier, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    config = model.config
    (path / "config.json").write_text(
        json.dumps(
            {
                "vocab_buckets": config.vocab_buckets,
                "embed_dim": config.embed_dim,
                "hidden_dim": config.hidden_dim,
                "labels": list(config.labels),
                "max_tokens": config.max_tokens,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    torch.save(model.state_dict(), path / "weights.pt")
    return path


def load_checkpoint(path: str | Path, dtype: torch.dtype = torch.float32) -> TagClassifier:
    path = Path(path)
    config_path = path / "config.json"
    weights_path = path / "weights.pt"
    if not config_path.is_file() or not weights_path.is_file():
        raise AdapterError(f"checkpoint at {path} needs config.json and weights.pt")
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
        config = CheckpointConfig(
            vocab_buckets=raw["vocab_buckets"],
            embed_dim=raw["embed_dim"],
            hidden_dim=raw["hidden_dim"],
            labels=tuple(raw["labels"]),
            max_tokens=raw.get("max_tokens", 512),
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise AdapterError(f"invalid checkpoint config: {exc}") from exc
    model = TagClassifier(config, dtype=dtype)
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict({k: v.to(dtype) for k, v in state.items()})
    except (RuntimeError, KeyError, ValueError) as exc:
        raise AdapterError(f"cannot load checkpoint weights: {exc}") from exc
    model.eval()
    return model


def random_checkpoint(
    path: str | Path,
    labels: tuple[str, ...],
    seed: int = 0,
    vocab_buckets: int = 512,
    embed_dim: int = 16,
    hidden_dim: int = 16,
    max_tokens: int = 512,
) -> Path:
    """A randomly initialized demo checkpoint (no training involved)."""
    torch.manual_seed(seed)
    config = CheckpointConfig(
        vocab_buckets=vocab_buckets,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        labels=labels,
        max_tokens=max_tokens,
    )
    return save_checkpoint(TagClassifier(config), path)
