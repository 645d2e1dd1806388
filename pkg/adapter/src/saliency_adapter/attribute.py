"""Gradient attribution over a TAG classifier, exported as interchange docs.

Token scores are a reduction of the predicted-class logit's gradient at
the token embedding (optionally multiplied elementwise by the embedding,
the input-times-gradient method); node scores are the sum of their token
scores. The input graph is restricted to the hop-k ego ball around the
root and relabeled densely before attribution, mirroring what the
classifier actually sees.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import torch

from .model import AdapterError, TagClassifier

METHODS = ("input_x_grad", "plain_gradient")
REDUCTIONS = ("abs_sum", "l2")


@dataclass(frozen=True)
class AttributionConfig:
    method: str = "input_x_grad"
    reduction: str = "abs_sum"
    hop_k: int = 2

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")
        if self.hop_k < 1:
            raise ValueError(f"hop_k must be >= 1, got {self.hop_k}")


@dataclass(frozen=True)
class GraphInput:
    """Bare graph: what the adapter needs before saliency exists."""

    node_tokens: list[list[str]]
    edges: list[tuple[int, int]]
    root: int
    instance_id: str


def parse_graph_document(raw: Mapping[str, Any]) -> GraphInput:
    """Accepts a bare graph document or a full interchange instance."""
    try:
        nodes = sorted(raw["nodes"], key=lambda n: n["id"])
        ids = [n["id"] for n in nodes]
        if ids != list(range(len(nodes))):
            raise AdapterError("node ids must be dense 0..N-1")
        return GraphInput(
            node_tokens=[list(n["tokens"]) for n in nodes],
            edges=[(min(u, v), max(u, v)) for u, v in raw["edges"]],
            root=raw["root"],
            instance_id=raw["instance_id"],
        )
    except (KeyError, TypeError) as exc:
        raise AdapterError(f"invalid graph document: {exc}") from exc


def restrict_to_ego(graph: GraphInput, hop_k: int) -> GraphInput:
    """Hop-limited ego subgraph, relabeled densely in ascending-id order."""
    neighbors: dict[int, set[int]] = {i: set() for i in range(len(graph.node_tokens))}
    for u, v in graph.edges:
        neighbors[u].add(v)
        neighbors[v].add(u)
    depth = {graph.root: 0}
    frontier = [graph.root]
    for d in range(1, hop_k + 1):
        frontier = [v for u in frontier for v in sorted(neighbors[u]) if v not in depth]
        for v in frontier:
            depth.setdefault(v, d)
        frontier = [v for v in frontier if depth[v] == d]
    retained = sorted(depth)
    relabel = {old: new for new, old in enumerate(retained)}
    edges = sorted(
        (relabel[u], relabel[v]) for u, v in graph.edges if u in relabel and v in relabel
    )
    return GraphInput(
        node_tokens=[graph.node_tokens[old] for old in retained],
        edges=edges,
        root=relabel[graph.root],
        instance_id=graph.instance_id,
    )


def token_attributions(
    model: TagClassifier, graph: GraphInput, config: AttributionConfig
) -> tuple[list[list[float]], str]:
    """Per-token scores for the model's own predicted class, plus the label."""
    total_tokens = sum(len(t) for t in graph.node_tokens)
    if total_tokens > model.config.max_tokens:
        raise AdapterError(
            f"{graph.instance_id}: {total_tokens} tokens exceed the model budget {model.config.max_tokens}"
        )
    neighbor_lists: list[list[int]] = [[] for _ in graph.node_tokens]
    for u, v in graph.edges:
        neighbor_lists[u].append(v)
        neighbor_lists[v].append(u)
    for lst in neighbor_lists:
        lst.sort()

    embeds = [e.detach().requires_grad_(True) for e in model.embed_tokens(graph.node_tokens)]
    logits = model.logits_from_embeddings(embeds, neighbor_lists, graph.root)
    predicted = int(torch.argmax(logits).item())
    grads = torch.autograd.grad(
        logits[predicted], [e for e in embeds if e.shape[0]], allow_unused=False
    )

    grads_iter = iter(grads)
    scores: list[list[float]] = []
    for embed in embeds:
        if embed.shape[0] == 0:
            scores.append([])
            continue
        grad = next(grads_iter)
        contribution = embed.detach() * grad if config.method == "input_x_grad" else grad
        if config.reduction == "abs_sum":
            per_token = contribution.abs().sum(dim=1)
        else:
            per_token = contribution.norm(dim=1)
        scores.append([float(s) for s in per_token])
    return scores, model.config.labels[predicted]


def attribute(
    model: TagClassifier, graph: GraphInput, config: AttributionConfig
) -> dict[str, Any]:
    """Full interchange document with computed saliency and prediction."""
    ego = restrict_to_ego(graph, config.hop_k)
    token_scores, label = token_attributions(model, ego, config)
    return {
        "nodes": [{"id": i, "tokens": tokens} for i, tokens in enumerate(ego.node_tokens)],
        "edges": [list(e) for e in ego.edges],
        "root": ego.root,
        "saliency": {
            "node_scores": {str(i): sum(s) for i, s in enumerate(token_scores)},
            "token_scores": {str(i): s for i, s in enumerate(token_scores)},
        },
        "prediction": {"label": label, "label_set": list(model.config.labels)},
        "instance_id": ego.instance_id,
    }


def attribute_file(
    model: TagClassifier, input_path: str | Path, output_path: str | Path, config: AttributionConfig
) -> Path:
    raw = json.loads(Path(input_path).read_text(encoding="utf-8"))
    document = attribute(model, parse_graph_document(raw), config)
    output_path = Path(output_path)
    output_path.write_text(
        json.dumps(document, sort_keys=True, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return output_path
