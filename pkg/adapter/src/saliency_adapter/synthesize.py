"""Synthetic saliency corpora: random graphs with planted important tokens.

A fixed fraction of tokens gets saliency drawn from a high band well
separated from the background band, so the planted set occupies exactly
the top saliency ranks. Output is deterministic per seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any

_WORDS = (
    "graph", "node", "model", "learning", "signal", "method", "policy",
    "search", "theory", "agent", "data", "neural", "field", "study",
)


@dataclass(frozen=True)
class ShapeParams:
    count: int = 10
    nodes: int = 5
    tokens_per_node: int = 6
    planted_fraction: float = 0.1
    n_labels: int = 3
    extra_edge_prob: float = 0.3

    def __post_init__(self) -> None:
        if self.count < 1 or self.nodes < 1 or self.tokens_per_node < 0:
            raise ValueError("count and nodes must be >= 1, tokens_per_node >= 0")
        if not (0 < self.planted_fraction <= 0.5):
            raise ValueError(f"planted_fraction must be in (0, 0.5], got {self.planted_fraction}")


def synthesize_document(rng: random.Random, params: ShapeParams, instance_id: str) -> dict[str, Any]:
    n = params.nodes
    edges: set[tuple[int, int]] = set()
    for i in range(1, n):
        j = rng.randrange(i)
        edges.add((j, i))
    for u in range(n):
        for v in range(u + 1, n):
            if (u, v) not in edges and rng.random() < params.extra_edge_prob / max(n - 1, 1):
                edges.add((u, v))

    node_tokens = [
        [rng.choice(_WORDS) for _ in range(params.tokens_per_node)] for _ in range(n)
    ]
    positions = [(i, t) for i in range(n) for t in range(len(node_tokens[i]))]
    total = len(positions)
    planted_count = max(1, round(params.planted_fraction * total)) if total else 0
    planted = set(rng.sample(positions, planted_count)) if total else set()

    token_scores = []
    for i in range(n):
        row = []
        for t in range(len(node_tokens[i])):
            if (i, t) in planted:
                row.append(round(rng.uniform(8.0, 10.0), 4))
            else:
                row.append(round(rng.uniform(0.0, 1.0), 4))
        token_scores.append(row)

    labels = [f"class{i}" for i in range(params.n_labels)]
    return {
        "nodes": [{"id": i, "tokens": node_tokens[i]} for i in range(n)],
        "edges": [list(e) for e in sorted(edges)],
        "root": rng.randrange(n),
        "saliency": {
            "node_scores": {str(i): round(sum(token_scores[i]), 4) for i in range(n)},
            "token_scores": {str(i): token_scores[i] for i in range(n)},
        },
        "prediction": {"label": rng.choice(labels), "label_set": labels},
        "instance_id": instance_id,
    }


def synthesize(seed: int, params: ShapeParams, out_dir: str | Path) -> list[Path]:
    """Write `params.count` instance files; byte-identical for equal seeds."""
    rng = random.Random(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(params.count):
        instance_id = f"synth-{seed}-{i:04d}"
        document = synthesize_document(rng, params, instance_id)
        path = out_dir / f"{instance_id}.json"
        path.write_text(
            json.dumps(document, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )
        paths.append(path)
    return paths
