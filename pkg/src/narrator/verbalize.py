"""Ego-graph verbalization: BFS tree, hierarchical paragraph, token masking.

The k-hop ego graph around an instance's root is decomposed into a BFS
tree; remaining in-scope edges become cross-edges rendered as reference
sentences. Pre-order traversal turns the tree into a line-per-node
document whose dotted section paths ("Node-1.2") encode the hierarchy, so
a reader (or parser) can reconstruct the exact graph structure.

All functions are pure and deterministic: BFS ties break by ascending
node id, giving byte-identical output for identical inputs.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Mapping

from .core import ExplanationInstance, adjacency

DEFAULT_HOP_K = 2
MASK_PLACEHOLDER = "<mask>"

TokenKey = tuple[int, int]  # (node id, token index)


@dataclass(frozen=True)
class BfsTree:
    root: int
    children: dict[int, tuple[int, ...]]
    cross_edges: tuple[tuple[int, int], ...]  # oriented earlier-visited -> later
    depth: dict[int, int]
    order: tuple[int, ...]  # BFS visit order, root first

    @property
    def nodes(self) -> tuple[int, ...]:
        return self.order


@dataclass(frozen=True)
class SaliencyParagraph:
    text: str
    section_paths: dict[int, str]  # root maps to "", others to "1", "1.2", ...
    with_scores: bool


@dataclass(frozen=True)
class MaskedInstance:
    rationale_tokens: tuple[tuple[int, int, str], ...]  # document order
    masked_document: str
    tau: float


def scaled_count(fraction: float, total: int) -> int:
    """ceil(fraction * total) with a snap to the nearest integer.

    Float products like 0.05 * 40 land a hair above the intended integer;
    snapping within 1e-9 keeps the count at the exact-arithmetic value.
    """
    raw = fraction * total
    nearest = round(raw)
    if abs(raw - nearest) < 1e-9:
        return nearest
    return math.ceil(raw)


def build_bfs_tree(instance: ExplanationInstance, k: int = DEFAULT_HOP_K) -> BfsTree:
    """BFS tree over the k-hop ego graph rooted at the instance root.

    Neighbors are visited in ascending node-id order. Every ego edge that
    is not a tree edge is recorded once as a cross-edge, oriented from the
    earlier-visited endpoint.
    """
    if k < 1:
        raise ValueError(f"hop count must be >= 1, got {k}")
    graph = instance.graph
    adj = adjacency(graph)
    root = graph.root

    depth: dict[int, int] = {root: 0}
    children: dict[int, tuple[int, ...]] = {}
    order: list[int] = []
    queue: deque[int] = deque([root])
    while queue:
        node = queue.popleft()
        order.append(node)
        if depth[node] >= k:
            children[node] = ()
            continue
        kids = []
        for neighbor in adj[node]:
            if neighbor not in depth:
                depth[neighbor] = depth[node] + 1
                kids.append(neighbor)
                queue.append(neighbor)
        children[node] = tuple(kids)

    visit_index = {node: i for i, node in enumerate(order)}
    tree_edges = {
        (min(p, c), max(p, c)) for p, kids in children.items() for c in kids
    }
    cross: list[tuple[int, int]] = []
    for u, v in graph.edges:
        if u in depth and v in depth and (u, v) not in tree_edges:
            if visit_index[u] <= visit_index[v]:
                cross.append((u, v))
            else:
                cross.append((v, u))
    cross.sort(key=lambda e: (visit_index[e[0]], visit_index[e[1]]))

    return BfsTree(root=root, children=children, cross_edges=tuple(cross), depth=depth, order=tuple(order))


def prune(tree: BfsTree, instance: ExplanationInstance, threshold: float) -> BfsTree:
    """Drop subtrees with no token saliency strictly above the threshold.

    A non-root node survives when its own max token score exceeds the
    threshold or any descendant survives, so the retained set is always a
    connected tree containing the root. Cross-edges touching dropped nodes
    go with them.
    """
    if threshold < 0:
        raise ValueError(f"prune threshold must be >= 0, got {threshold}")
    token_scores = instance.saliency.token_scores

    keep: dict[int, bool] = {}

    def visit(node: int) -> bool:
        kept_child = False
        for child in tree.children[node]:
            kept_child = visit(child) or kept_child
        scores = token_scores[node]
        important = bool(scores) and max(scores) > threshold
        keep[node] = node == tree.root or important or kept_child
        return keep[node]

    visit(tree.root)

    order = tuple(n for n in tree.order if keep[n])
    children = {n: tuple(c for c in tree.children[n] if keep[c]) for n in order}
    depth = {n: tree.depth[n] for n in order}
    cross = tuple((u, v) for u, v in tree.cross_edges if keep[u] and keep[v])
    return BfsTree(root=tree.root, children=children, cross_edges=cross, depth=depth, order=order)


def section_paths(tree: BfsTree) -> dict[int, str]:
    """Dotted path per retained node; the root's path is the empty string."""
    paths: dict[int, str] = {tree.root: ""}

    def visit(node: int) -> None:
        prefix = paths[node]
        for i, child in enumerate(tree.children[node], start=1):
            paths[child] = f"{prefix}.{i}" if prefix else str(i)
            visit(child)

    visit(tree.root)
    return paths


def _header(path: str) -> str:
    return "ROOT" if path == "" else f"Node-{path}"


def _preorder(tree: BfsTree) -> list[int]:
    out: list[int] = []

    def visit(node: int) -> None:
        out.append(node)
        for child in tree.children[node]:
            visit(child)

    visit(tree.root)
    return out


def render_paragraph(
    tree: BfsTree,
    instance: ExplanationInstance,
    with_scores: bool,
    omit: frozenset[TokenKey] = frozenset(),
    mask: Mapping[TokenKey, str] | None = None,
) -> SaliencyParagraph:
    """Pre-order rendering, one node per line.

    `omit` silently drops tokens (tail masking for prompts); `mask` swaps
    tokens for a placeholder while preserving positions (Eq.-style masked
    documents). Scores render with exactly two decimals.
    """
    paths = section_paths(tree)
    token_scores = instance.saliency.token_scores
    visit_index = {node: i for i, node in enumerate(tree.order)}

    outgoing: dict[int, list[int]] = {}
    for src, dst in tree.cross_edges:
        outgoing.setdefault(src, []).append(dst)
    for dsts in outgoing.values():
        dsts.sort(key=lambda d: visit_index[d])

    lines = []
    for node in _preorder(tree):
        parts = [f"{_header(paths[node])}:"]
        tokens = instance.graph.node(node).tokens
        scores = token_scores[node]
        for ti, token in enumerate(tokens):
            key = (node, ti)
            if key in omit:
                continue
            if mask is not None and key in mask:
                parts.append(mask[key])
            elif with_scores:
                parts.append(f"{token}({scores[ti]:.2f})")
            else:
                parts.append(token)
        for dst in outgoing.get(node, []):
            parts.append(f"[See {_header(paths[dst])}.]")
        lines.append(" ".join(parts))
    return SaliencyParagraph(text="\n".join(lines), section_paths=paths, with_scores=with_scores)


def serialize_plain(instance: ExplanationInstance, k: int = DEFAULT_HOP_K) -> str:
    """Score-free serialization of the whole k-hop ego graph (no pruning)."""
    return render_paragraph(build_bfs_tree(instance, k), instance, with_scores=False).text


def ego_token_order(tree: BfsTree, instance: ExplanationInstance) -> list[tuple[int, int, str]]:
    """(node, index, token) triples in document order for the retained tree."""
    out = []
    for node in _preorder(tree):
        for ti, token in enumerate(instance.graph.node(node).tokens):
            out.append((node, ti, token))
    return out


def build_masked_instance(
    instance: ExplanationInstance,
    k: int = DEFAULT_HOP_K,
    tau: float = 0.1,
    placeholder: str = MASK_PLACEHOLDER,
) -> MaskedInstance:
    """Mask the top ceil(tau*T) tokens of the ego graph by saliency.

    T is the token count of the serialized ego graph. Ties at the cutoff
    break toward lower node id, then lower token index. Rationale tokens
    come back in document order; the masked document keeps one placeholder
    per masked position, so token counts are conserved.
    """
    if not (0 < tau <= 1):
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    tree = build_bfs_tree(instance, k)
    doc_tokens = ego_token_order(tree, instance)
    total = len(doc_tokens)
    count = scaled_count(tau, total)

    token_scores = instance.saliency.token_scores
    ranked = sorted(doc_tokens, key=lambda t: (-token_scores[t[0]][t[1]], t[0], t[1]))
    selected = {(node, ti) for node, ti, _ in ranked[:count]}

    rationale = tuple(t for t in doc_tokens if (t[0], t[1]) in selected)
    masked = render_paragraph(
        tree, instance, with_scores=False, mask={key: placeholder for key in selected}
    )
    return MaskedInstance(rationale_tokens=rationale, masked_document=masked.text, tau=tau)
