"""Adapter acceptance: validity of exports, gradient fidelity, determinism."""

from __future__ import annotations

import torch

from narrator.core import content_hash, load_instance_file

from saliency_adapter.attribute import (
    AttributionConfig,
    attribute_file,
    parse_graph_document,
    token_attributions,
)
from saliency_adapter.model import CheckpointConfig, TagClassifier, load_checkpoint, random_checkpoint
from saliency_adapter.synthesize import ShapeParams, synthesize


def report(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


def test_100_attributed_instances_pass_primary_validation(tmp_path):
    random_checkpoint(tmp_path / "ckpt", labels=("class0", "class1", "class2"), seed=13)
    model = load_checkpoint(tmp_path / "ckpt")
    sources = synthesize(99, ShapeParams(count=100, nodes=6, tokens_per_node=5), tmp_path / "src")
    out_dir = tmp_path / "attributed"
    out_dir.mkdir()
    for src in sources:
        out = attribute_file(model, src, out_dir / src.name, AttributionConfig())
        instance = load_instance_file(out)
        assert instance.saliency.graph_ref == content_hash(instance.graph)
    report("100 attributed instances pass interchange validation")


def test_finite_difference_agreement_within_1e3(tmp_path):
    torch.manual_seed(21)
    config = CheckpointConfig(vocab_buckets=64, embed_dim=4, hidden_dim=4, labels=("a", "b"))
    model = TagClassifier(config, dtype=torch.float64)
    graph = parse_graph_document(
        {
            "nodes": [{"id": 0, "tokens": ["alpha", "beta"]}],
            "edges": [],
            "root": 0,
            "instance_id": "fd",
        }
    )
    analytic, label = token_attributions(model, graph, AttributionConfig())
    predicted = config.labels.index(label)
    base = [e.detach().clone() for e in model.embed_tokens(graph.node_tokens)]

    def logit(embeds):
        return model.logits_from_embeddings(embeds, [[]], 0)[predicted].item()

    h = 1e-6
    worst = 0.0
    for t in range(2):
        fd_score = 0.0
        for d in range(config.embed_dim):
            plus = [e.clone() for e in base]
            minus = [e.clone() for e in base]
            plus[0][t, d] += h
            minus[0][t, d] -= h
            grad = (logit(plus) - logit(minus)) / (2 * h)
            fd_score += abs(base[0][t, d].item() * grad)
        rel = abs(fd_score - analytic[0][t]) / max(abs(fd_score), 1e-12)
        worst = max(worst, rel)
        assert rel < 1e-3
    report(f"finite-difference agreement, worst relative error {worst:.2e}")


def test_synthetic_generator_deterministic_per_seed(tmp_path):
    params = ShapeParams(count=10)
    a = synthesize(7, params, tmp_path / "a")
    b = synthesize(7, params, tmp_path / "b")
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    report("synthetic generator byte-identical per seed")
