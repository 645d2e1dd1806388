"""Data model for text-attributed graphs with saliency annotations.

Types here are immutable after construction and safe to share across
threads. Instances enter and leave the pipeline through a JSON interchange
format (one document per instance); `load_instance` verifies every
invariant before an instance object exists, so downstream code never sees
a half-valid graph.

Tokens are stored pre-tokenized by whatever produced the saliency scores;
nothing in this package re-tokenizes. Because rendered documents are
line-structured and token-accounted by whitespace splitting, tokens must
be non-empty and free of whitespace.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import AlignmentError, GraphReferenceError, SchemaError

DOCUMENT_KEYS = {"nodes", "edges", "root", "saliency", "prediction", "instance_id"}


@dataclass(frozen=True)
class NodeRecord:
    id: int
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class TextAttributedGraph:
    nodes: tuple[NodeRecord, ...]
    edges: tuple[tuple[int, int], ...]  # normalized: u < v, sorted
    root: int

    def node(self, node_id: int) -> NodeRecord:
        return self.nodes[node_id]

    @property
    def token_count(self) -> int:
        return sum(len(n.tokens) for n in self.nodes)


@dataclass(frozen=True)
class SaliencyAnnotation:
    graph_ref: str
    node_scores: Mapping[int, float]
    token_scores: Mapping[int, tuple[float, ...]]


@dataclass(frozen=True)
class PredictionRecord:
    label: str
    label_set: tuple[str, ...]


@dataclass(frozen=True)
class ExplanationInstance:
    graph: TextAttributedGraph
    saliency: SaliencyAnnotation
    prediction: PredictionRecord
    instance_id: str


def adjacency(graph: TextAttributedGraph) -> dict[int, list[int]]:
    """Neighbor lists with deterministic ascending order."""
    adj: dict[int, list[int]] = {node.id: [] for node in graph.nodes}
    for u, v in graph.edges:
        adj[u].append(v)
        adj[v].append(u)
    for neighbors in adj.values():
        neighbors.sort()
    return adj


def content_hash(graph: TextAttributedGraph) -> str:
    """Deterministic sha256 of the canonicalized graph.

    Stable across processes and under any node/edge listing order of the
    same graph, because the payload is canonicalized before hashing.
    """
    payload = {
        "nodes": [{"id": n.id, "tokens": list(n.tokens)} for n in sorted(graph.nodes, key=lambda n: n.id)],
        "edges": sorted((min(u, v), max(u, v)) for u, v in graph.edges),
        "root": graph.root,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Interchange format
# ---------------------------------------------------------------------------


def _require_keys(obj: Mapping[str, Any], keys: set[str], where: str) -> None:
    if not isinstance(obj, Mapping):
        raise SchemaError(f"{where}: expected an object, got {type(obj).__name__}")
    missing = keys - set(obj)
    extra = set(obj) - keys
    if missing:
        raise SchemaError(f"{where}: missing field(s) {sorted(missing)}")
    if extra:
        raise SchemaError(f"{where}: unexpected field(s) {sorted(extra)}")


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where}: expected an integer, got {value!r}")
    return value


def _as_score(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}: expected a number, got {value!r}")
    score = float(value)
    if not math.isfinite(score) or score < 0.0:
        raise SchemaError(f"{where}: scores must be finite and >= 0, got {score!r}")
    return score


def _parse_nodes(raw: Any) -> tuple[NodeRecord, ...]:
    if not isinstance(raw, list) or not raw:
        raise SchemaError("nodes: expected a non-empty array")
    records = []
    for i, entry in enumerate(raw):
        _require_keys(entry, {"id", "tokens"}, f"nodes[{i}]")
        node_id = _as_int(entry["id"], f"nodes[{i}].id")
        tokens = entry["tokens"]
        if not isinstance(tokens, list):
            raise SchemaError(f"nodes[{i}].tokens: expected an array")
        for j, tok in enumerate(tokens):
            if not isinstance(tok, str):
                raise SchemaError(f"nodes[{i}].tokens[{j}]: expected a string")
            if not tok or any(ch.isspace() for ch in tok):
                raise SchemaError(
                    f"nodes[{i}].tokens[{j}]: tokens must be non-empty and whitespace-free, got {tok!r}"
                )
        records.append(NodeRecord(id=node_id, tokens=tuple(tokens)))
    ids = [r.id for r in records]
    if sorted(ids) != list(range(len(records))):
        raise SchemaError(f"nodes: ids must be unique dense integers 0..{len(records) - 1}")
    records.sort(key=lambda r: r.id)
    return tuple(records)


def _parse_edges(raw: Any, node_count: int) -> tuple[tuple[int, int], ...]:
    if not isinstance(raw, list):
        raise SchemaError("edges: expected an array")
    seen: set[tuple[int, int]] = set()
    for i, pair in enumerate(raw):
        if not isinstance(pair, list) or len(pair) != 2:
            raise SchemaError(f"edges[{i}]: expected a pair [u, v]")
        u = _as_int(pair[0], f"edges[{i}][0]")
        v = _as_int(pair[1], f"edges[{i}][1]")
        if u == v:
            raise SchemaError(f"edges[{i}]: self-loop at node {u}")
        if not (0 <= u < node_count) or not (0 <= v < node_count):
            raise GraphReferenceError(f"edges[{i}]: endpoint ({u}, {v}) references a missing node")
        edge = (min(u, v), max(u, v))
        if edge in seen:
            raise SchemaError(f"edges[{i}]: duplicate edge {edge}")
        seen.add(edge)
    return tuple(sorted(seen))


def _parse_saliency(raw: Any, graph: TextAttributedGraph) -> SaliencyAnnotation:
    _require_keys(raw, {"node_scores", "token_scores"}, "saliency")
    node_scores_raw = raw["node_scores"]
    token_scores_raw = raw["token_scores"]
    if not isinstance(node_scores_raw, Mapping) or not isinstance(token_scores_raw, Mapping):
        raise SchemaError("saliency: node_scores and token_scores must be objects")

    def parse_key(key: Any, where: str) -> int:
        try:
            node_id = int(key)
        except (TypeError, ValueError):
            raise SchemaError(f"{where}: key {key!r} is not a node id") from None
        if not (0 <= node_id < len(graph.nodes)):
            raise GraphReferenceError(f"{where}: key {key!r} references a missing node")
        return node_id

    node_scores: dict[int, float] = {}
    for key, value in node_scores_raw.items():
        node_id = parse_key(key, "saliency.node_scores")
        node_scores[node_id] = _as_score(value, f"saliency.node_scores[{key}]")

    token_scores: dict[int, tuple[float, ...]] = {}
    for key, values in token_scores_raw.items():
        node_id = parse_key(key, "saliency.token_scores")
        if not isinstance(values, list):
            raise SchemaError(f"saliency.token_scores[{key}]: expected an array")
        scores = tuple(_as_score(v, f"saliency.token_scores[{key}][{i}]") for i, v in enumerate(values))
        expected = len(graph.node(node_id).tokens)
        if len(scores) != expected:
            raise AlignmentError(
                f"saliency.token_scores[{key}]: {len(scores)} scores for {expected} tokens"
            )
        token_scores[node_id] = scores

    for node in graph.nodes:
        if node.id not in node_scores:
            raise SchemaError(f"saliency.node_scores: node {node.id} missing")
        if node.id not in token_scores:
            raise SchemaError(f"saliency.token_scores: node {node.id} missing")

    return SaliencyAnnotation(
        graph_ref=content_hash(graph), node_scores=node_scores, token_scores=token_scores
    )


def _parse_prediction(raw: Any) -> PredictionRecord:
    _require_keys(raw, {"label", "label_set"}, "prediction")
    label = raw["label"]
    label_set = raw["label_set"]
    if not isinstance(label, str) or not label:
        raise SchemaError("prediction.label: expected a non-empty string")
    if not isinstance(label_set, list) or not label_set:
        raise SchemaError("prediction.label_set: expected a non-empty array")
    for i, entry in enumerate(label_set):
        if not isinstance(entry, str) or not entry:
            raise SchemaError(f"prediction.label_set[{i}]: expected a non-empty string")
    if len(set(label_set)) != len(label_set):
        raise SchemaError("prediction.label_set: labels must be unique")
    if label not in label_set:
        raise SchemaError(f"prediction.label: {label!r} not in label_set")
    return PredictionRecord(label=label, label_set=tuple(label_set))


def load_instance(document: str | Mapping[str, Any]) -> ExplanationInstance:
    """Parse and fully validate one interchange document.

    Raises SchemaError, AlignmentError, or GraphReferenceError; never
    returns a partially constructed instance.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"document is not valid JSON: {exc}") from exc
    _require_keys(document, DOCUMENT_KEYS, "document")

    nodes = _parse_nodes(document["nodes"])
    edges = _parse_edges(document["edges"], len(nodes))
    root = _as_int(document["root"], "root")
    if not (0 <= root < len(nodes)):
        raise GraphReferenceError(f"root: node {root} does not exist")
    graph = TextAttributedGraph(nodes=nodes, edges=edges, root=root)

    saliency = _parse_saliency(document["saliency"], graph)
    prediction = _parse_prediction(document["prediction"])

    instance_id = document["instance_id"]
    if not isinstance(instance_id, str) or not instance_id:
        raise SchemaError("instance_id: expected a non-empty string")

    return ExplanationInstance(
        graph=graph, saliency=saliency, prediction=prediction, instance_id=instance_id
    )


def load_instance_file(path: str | Path) -> ExplanationInstance:
    return load_instance(Path(path).read_text(encoding="utf-8"))


def instance_document(instance: ExplanationInstance) -> dict[str, Any]:
    """Canonical interchange payload: sorted keys, node/edge order."""
    graph = instance.graph
    return {
        "nodes": [{"id": n.id, "tokens": list(n.tokens)} for n in graph.nodes],
        "edges": [list(e) for e in graph.edges],
        "root": graph.root,
        "saliency": {
            "node_scores": {str(n.id): instance.saliency.node_scores[n.id] for n in graph.nodes},
            "token_scores": {str(n.id): list(instance.saliency.token_scores[n.id]) for n in graph.nodes},
        },
        "prediction": {
            "label": instance.prediction.label,
            "label_set": list(instance.prediction.label_set),
        },
        "instance_id": instance.instance_id,
    }


def save_instance(instance: ExplanationInstance) -> str:
    """Canonical serialization; numbers keep full precision."""
    return json.dumps(instance_document(instance), sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def save_instance_file(instance: ExplanationInstance, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(save_instance(instance), encoding="utf-8")
    return path


def load_corpus(paths: Iterable[str | Path]) -> dict[str, ExplanationInstance]:
    """Load many instance files, keyed by instance id."""
    corpus: dict[str, ExplanationInstance] = {}
    for path in paths:
        instance = load_instance_file(path)
        if instance.instance_id in corpus:
            raise SchemaError(f"duplicate instance_id {instance.instance_id!r} in corpus")
        corpus[instance.instance_id] = instance
    return corpus
