"""Shared test utilities: instance builders and independent oracles.

The paragraph parser here is written against the documented rendering
rules only (headers, dotted paths, reference sentences); it shares no
code with the renderer so it can serve as a structure-reconstruction
oracle.
"""

from __future__ import annotations

import math
import random
import re
from typing import Sequence

from narrator.core import ExplanationInstance, load_instance


def make_document(
    nodes: Sequence[Sequence[str]],
    edges: Sequence[tuple[int, int]] = (),
    root: int = 0,
    token_scores: Sequence[Sequence[float]] | None = None,
    node_scores: Sequence[float] | None = None,
    label: str = "alpha",
    label_set: Sequence[str] = ("alpha", "beta"),
    instance_id: str = "inst-0",
) -> dict:
    if token_scores is None:
        token_scores = [[1.0 + 0.5 * i for i in range(len(tokens))] for tokens in nodes]
    if node_scores is None:
        node_scores = [sum(scores) for scores in token_scores]
    return {
        "nodes": [{"id": i, "tokens": list(tokens)} for i, tokens in enumerate(nodes)],
        "edges": [list(e) for e in edges],
        "root": root,
        "saliency": {
            "node_scores": {str(i): s for i, s in enumerate(node_scores)},
            "token_scores": {str(i): list(s) for i, s in enumerate(token_scores)},
        },
        "prediction": {"label": label, "label_set": list(label_set)},
        "instance_id": instance_id,
    }


def make_instance(*args, **kwargs) -> ExplanationInstance:
    return load_instance(make_document(*args, **kwargs))


_WORDS = (
    "graph", "model", "learning", "neural", "method", "data", "node",
    "field", "study", "signal", "theory", "search", "agent", "policy",
)


def random_instance(
    rng: random.Random,
    max_nodes: int = 12,
    max_tokens: int = 6,
    min_tokens: int = 0,
    extra_edge_prob: float = 0.3,
    n_labels: int = 3,
    instance_id: str = "rand-0",
    fixed_nodes: int | None = None,
    fixed_tokens: int | None = None,
) -> ExplanationInstance:
    """Random connected graph with random tokens and distinct-ish scores."""
    n = fixed_nodes if fixed_nodes is not None else rng.randint(1, max_nodes)
    edges: set[tuple[int, int]] = set()
    for i in range(1, n):
        j = rng.randrange(i)
        edges.add((j, i))
    for u in range(n):
        for v in range(u + 1, n):
            if (u, v) not in edges and rng.random() < extra_edge_prob / n:
                edges.add((u, v))
    nodes = []
    token_scores = []
    for _ in range(n):
        count = fixed_tokens if fixed_tokens is not None else rng.randint(min_tokens, max_tokens)
        nodes.append([rng.choice(_WORDS) for _ in range(count)])
        token_scores.append([round(rng.uniform(0.0, 10.0), 4) for _ in range(count)])
    labels = [f"label{i}" for i in range(n_labels)]
    return make_instance(
        nodes,
        sorted(edges),
        root=rng.randrange(n),
        token_scores=token_scores,
        label=rng.choice(labels),
        label_set=labels,
        instance_id=instance_id,
    )


def brute_force_rationale(instance: ExplanationInstance, doc_tokens, tau: float) -> set[tuple[int, int]]:
    """Independent sort-and-take over the serialized tokens."""
    total = len(doc_tokens)
    raw = tau * total
    nearest = round(raw)
    count = nearest if abs(raw - nearest) < 1e-9 else math.ceil(raw)
    scores = instance.saliency.token_scores
    ranked = sorted(doc_tokens, key=lambda t: (-scores[t[0]][t[1]], t[0], t[1]))
    return {(node, ti) for node, ti, _ in ranked[:count]}


# ---------------------------------------------------------------------------
# Paragraph structure oracle
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(r"^(?:ROOT|Node-([0-9]+(?:\.[0-9]+)*)):")
_REF_RE = re.compile(r"\[See (?:ROOT|Node-([0-9]+(?:\.[0-9]+)*))\.\]")


def parse_paragraph(text: str) -> tuple[list[str], dict[str, str], set[tuple[str, str]]]:
    """Reconstruct structure from rendered text in path space.

    Returns (paths in line order, parent map over non-root paths, set of
    cross edges as (source path, destination path)). Root path is "".
    """
    order: list[str] = []
    parents: dict[str, str] = {}
    cross: set[tuple[str, str]] = set()
    for line in text.splitlines():
        match = _HEADER_RE.match(line)
        assert match is not None, f"unparseable line: {line!r}"
        path = match.group(1) or ""
        if path:
            parents[path] = path.rsplit(".", 1)[0] if "." in path else ""
        order.append(path)
        for ref in _REF_RE.finditer(line):
            cross.add((path, ref.group(1) or ""))
    return order, parents, cross


def tree_structure_in_path_space(tree, paragraph) -> tuple[dict[str, str], set[tuple[str, str]]]:
    """The true parent relation and cross edges, mapped through section paths."""
    paths = paragraph.section_paths
    parents = {}
    for parent, kids in tree.children.items():
        for child in kids:
            parents[paths[child]] = paths[parent]
    cross = {(paths[u], paths[v]) for u, v in tree.cross_edges}
    return parents, cross
