from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrator.core import (
    content_hash,
    load_instance,
    load_instance_file,
    save_instance,
    save_instance_file,
)
from narrator.errors import AlignmentError, GraphReferenceError, SchemaError

from helpers import make_document, make_instance, random_instance


def test_minimal_instance_loads():
    instance = make_instance([["a", "b", "c"]], token_scores=[[1.0, 2.0, 3.0]])
    assert len(instance.graph.nodes) == 1
    assert instance.graph.node(0).tokens == ("a", "b", "c")
    assert instance.saliency.token_scores[0] == (1.0, 2.0, 3.0)
    assert instance.saliency.graph_ref == content_hash(instance.graph)


def test_token_score_length_mismatch_is_alignment_error():
    doc = make_document([["a", "b", "c"]], token_scores=[[1.0, 2.0, 3.0]])
    doc["saliency"]["token_scores"]["0"] = [1.0, 2.0]
    with pytest.raises(AlignmentError):
        load_instance(doc)


def test_path_graph_round_trips_to_identical_bytes(tmp_path):
    instance = make_instance(
        [["a"], ["b", "c"], ["d"], ["e", "f", "g"], ["h"]],
        edges=[(0, 1), (1, 2), (2, 3), (3, 4)],
        token_scores=[[0.5], [1.25, 7.75], [3.125], [0.1, 9.9, 4.5], [2.0]],
        instance_id="path-5",
    )
    path = save_instance_file(instance, tmp_path / "inst.json")
    reloaded = load_instance_file(path)
    assert save_instance(reloaded) == path.read_text(encoding="utf-8")
    assert content_hash(reloaded.graph) == content_hash(instance.graph)


def test_content_hash_ignores_edge_and_node_order():
    doc_a = make_document([["a"], ["b"], ["c"]], edges=[(0, 1), (1, 2)])
    doc_b = make_document([["a"], ["b"], ["c"]], edges=[(1, 2), (0, 1)])
    doc_b["edges"] = [[2, 1], [1, 0]]
    doc_b["nodes"] = list(reversed(doc_b["nodes"]))
    assert content_hash(load_instance(doc_a).graph) == content_hash(load_instance(doc_b).graph)


def test_content_hash_changes_with_one_token():
    base = make_instance([["a", "b"]], token_scores=[[1.0, 2.0]])
    changed = make_instance([["a", "c"]], token_scores=[[1.0, 2.0]])
    assert content_hash(base.graph) != content_hash(changed.graph)


def test_same_document_loaded_twice_hashes_identically():
    doc = make_document([["a"], ["b"]], edges=[(0, 1)])
    assert content_hash(load_instance(doc).graph) == content_hash(load_instance(json.dumps(doc)).graph)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_round_trip_structural_equality(seed):
    rng = random.Random(seed)
    instance = random_instance(rng, max_nodes=50, instance_id=f"rt-{seed}")
    assert load_instance(save_instance(instance)) == instance


@pytest.mark.parametrize(
    "mutate, error",
    [
        (lambda d: d.pop("root"), SchemaError),
        (lambda d: d.update(unexpected=1), SchemaError),
        (lambda d: d["edges"].append([0, 5]), GraphReferenceError),
        (lambda d: d.update(root=9), GraphReferenceError),
        (lambda d: d["edges"].append([0, 0]), SchemaError),
        (lambda d: d["edges"].extend([[0, 1], [1, 0]]), SchemaError),
        (lambda d: d["nodes"].__setitem__(0, {"id": 7, "tokens": ["a"]}), SchemaError),
        (lambda d: d["nodes"][0]["tokens"].append("two words"), SchemaError),
        (lambda d: d["nodes"][0]["tokens"].append("new\nline"), SchemaError),
        (lambda d: d["nodes"][0]["tokens"].append(""), SchemaError),
        (lambda d: d["saliency"]["node_scores"].pop("1"), SchemaError),
        (lambda d: d["saliency"]["node_scores"].update({"1": -0.5}), SchemaError),
        (lambda d: d["saliency"]["node_scores"].update({"9": 1.0}), GraphReferenceError),
        (lambda d: d["saliency"]["token_scores"]["0"].__setitem__(0, float("nan")), SchemaError),
        (lambda d: d["saliency"].update(extra={}), SchemaError),
        (lambda d: d["prediction"].update(label="missing"), SchemaError),
        (lambda d: d["prediction"].update(label_set=[]), SchemaError),
        (lambda d: d["prediction"].update(label_set=["alpha", "alpha"]), SchemaError),
        (lambda d: d.update(instance_id=""), SchemaError),
        (lambda d: d.update(root=True), SchemaError),
    ],
)
def test_malformed_documents_raise_typed_errors(mutate, error):
    doc = make_document([["a", "b"], ["c"]], edges=[(0, 1)])
    mutate(doc)
    with pytest.raises(error):
        load_instance(doc)


def test_invalid_json_is_schema_error():
    with pytest.raises(SchemaError):
        load_instance("{not json")


def test_saliency_graph_ref_matches_graph():
    instance = make_instance([["a"], ["b"]], edges=[(0, 1)])
    assert instance.saliency.graph_ref == content_hash(instance.graph)
