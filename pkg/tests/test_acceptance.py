"""Acceptance suite: one test per release criterion, at stated tolerances.

Each test prints a single PASS line when its criterion holds (run with
`pytest -s tests/test_acceptance.py` to see them); any assertion failure
is the corresponding FAIL.
"""

from __future__ import annotations

import json
import math
import random
import re
import subprocess
import sys
import time
from pathlib import Path

import pytest

from narrator.backend import (
    MockBackend,
    MockConfig,
    extend_context,
    format_quality_marker,
)
from narrator.backend import GenerationRequest, LogProbQuery
from narrator.core import save_instance_file
from narrator.evaluation import EvalRecord, simulatability
from narrator.iteration import (
    ExplanationCandidate,
    IterationConfig,
    IterationState,
    SelectionStrategy,
    run_loop,
    select,
)
from narrator.measures import (
    ScoreTriple,
    ScoringContext,
    TauDistribution,
    mask_labels,
    score_input_faithfulness,
    score_prediction_faithfulness,
)
from narrator.verbalize import build_bfs_tree, build_masked_instance, ego_token_order, render_paragraph

from helpers import (
    brute_force_rationale,
    make_instance,
    parse_paragraph,
    random_instance,
    tree_structure_in_path_space,
)

TAUS = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30)


def report(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


def test_verbalization_round_trip_200_graphs():
    rng = random.Random(2024)
    start = time.monotonic()
    for i in range(200):
        instance = random_instance(
            rng, max_nodes=50, extra_edge_prob=2.5, instance_id=f"vrt-{i}"
        )
        k = rng.randint(1, 3)
        tree = build_bfs_tree(instance, k)
        paragraph = render_paragraph(tree, instance, with_scores=rng.random() < 0.5)
        _, parsed_parents, parsed_cross = parse_paragraph(paragraph.text)
        true_parents, true_cross = tree_structure_in_path_space(tree, paragraph)
        assert parsed_parents == true_parents, f"graph {i}: parent mismatch"
        assert parsed_cross == true_cross, f"graph {i}: cross-edge mismatch"
    elapsed = time.monotonic() - start
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    report(f"verbalization round-trip on 200 graphs in {elapsed:.2f}s")


def test_masking_oracle_200_instances():
    rng = random.Random(77)
    for i in range(200):
        instance = random_instance(rng, max_nodes=20, min_tokens=1, instance_id=f"mask-{i}")
        tree = build_bfs_tree(instance, 2)
        doc_tokens = ego_token_order(tree, instance)
        for tau in TAUS:
            masked = build_masked_instance(instance, 2, tau)
            got = {(n, ti) for n, ti, _ in masked.rationale_tokens}
            assert got == brute_force_rationale(instance, doc_tokens, tau), (i, tau)
    report("masking matches brute force on 200 instances x 6 taus")


def test_logprob_decomposition_1000_triples_bitwise():
    rng = random.Random(5150)
    backend = MockBackend(seed=31)
    vocabulary = ["alpha", "beta", "gamma", "delta", "mask", "token", "x1", "zz"]
    for _ in range(1000):
        context = " ".join(rng.choice(vocabulary) for _ in range(rng.randint(1, 12)))
        y1 = tuple(rng.choice(vocabulary) for _ in range(rng.randint(1, 5)))
        y2 = tuple(rng.choice(vocabulary) for _ in range(rng.randint(1, 5)))
        combined = backend.log_prob(LogProbQuery(context, y1 + y2, "m"))
        split = backend.log_prob(LogProbQuery(context, y1, "m")) + backend.log_prob(
            LogProbQuery(extend_context(context, y1), y2, "m")
        )
        assert combined == split
    report("log-prob decomposition bitwise on 1000 triples")


def staged_instance():
    return make_instance(
        [[f"w{i}" for i in range(10)]],
        token_scores=[[10.0 - i for i in range(10)]],
        label="alpha",
        label_set=("alpha", "beta", "gamma"),
        instance_id="staged",
    )


def test_eq2_quadrature_50_staged_tables():
    rng = random.Random(404)
    instance = staged_instance()
    grid = (0.1, 0.2, 0.3)  # rationale lengths 1, 2, 3
    ctx = ScoringContext(scoring_model="s", tau_dist=TauDistribution.uniform(grid))
    for _ in range(50):
        probs = {n: (rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)) for n in (1, 2, 3)}
        backend = MockBackend(seed=0, config=MockConfig(fill_probs_by_len=probs))
        expected = 0.0
        for weight, n in zip((1 / 3, 1 / 3, 1 / 3), (1, 2, 3)):
            expected += weight * (math.log(probs[n][0]) - math.log(probs[n][1]))
        got = score_input_faithfulness(backend, instance, "explanation", ctx)
        assert abs(got - expected) < 1e-12
    independence = score_input_faithfulness(
        MockBackend(seed=9), instance, "marker-free explanation", ctx
    )
    assert independence == 0.0
    report("Eq.-2 quadrature within 1e-12 on 50 staged tables; independence exactly 0")


def test_eq3_log_ratio_and_label_masking_audit():
    rng = random.Random(808)
    instance = staged_instance()
    ctx = ScoringContext(scoring_model="s", tau_dist=TauDistribution.uniform((0.1,)))
    for _ in range(50):
        p_with = rng.uniform(0.05, 0.95)
        p_without = rng.uniform(0.05, 0.95)
        backend = MockBackend(seed=0, config=MockConfig(label_probs=(p_with, p_without)))
        got = score_prediction_faithfulness(backend, instance, "mentions alpha", ctx)
        assert abs(got - (math.log(p_with) - math.log(p_without))) < 1e-12

    hits = 0
    for i in range(200):
        labels = tuple(f"cls{j}x{i % 7}" for j in range(rng.randint(1, 6)))
        words = ["stuff", "about", "graphs"] + [rng.choice(labels) for _ in range(rng.randint(0, 5))]
        rng.shuffle(words)
        masked = mask_labels(" ".join(words), labels, "<mask>")
        for label in labels:
            hits += len(re.findall(re.escape(label), masked, re.IGNORECASE))
    assert hits == 0
    report("Eq.-3 log-ratio within 1e-12; label-mask audit found 0 leaks")


def test_selection_brute_force_500_pools():
    rng = random.Random(1234)

    def candidate(i, trial):
        return ExplanationCandidate(
            instance_id=f"p{trial}-{i}",
            text="t",
            iteration=0,
            model_ref="m",
            prompt_sha256="x",
            sample_index=i,
            temperature=1.0,
            max_tokens=64,
            scores=ScoreTriple(rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 1)),
        )

    mismatches = 0
    for trial in range(500):
        pool = [candidate(i, trial) for i in range(rng.randint(1, 64))]
        strategy = SelectionStrategy.balanced(fraction=0.5, quota=len(pool))
        selected = {id(c) for c in select(pool, strategy)}
        k = max(1, math.ceil(round(0.5 * len(pool), 9)))
        expected = set()
        for c in pool:
            above_s = sum(1 for x in pool if x.scores.f_s > c.scores.f_s)
            above_f = sum(1 for x in pool if x.scores.f_f > c.scores.f_f)
            below_b = sum(1 for x in pool if x.scores.f_b < c.scores.f_b)
            if above_s < k and above_f < k and below_b < k:
                expected.add(id(c))
        if selected != expected:
            mismatches += 1
    assert mismatches == 0
    report("balanced selection equals brute force on 500 pools")


def trend_corpus(count=8, tokens=6, seed=1000):
    rng = random.Random(seed)
    corpus = {}
    for i in range(count):
        inst = random_instance(
            rng,
            fixed_nodes=4,
            fixed_tokens=tokens,
            extra_edge_prob=1.0,
            instance_id=f"trend-{i:02d}",
        )
        corpus[inst.instance_id] = inst
    return corpus


def trend_ctx():
    return ScoringContext(scoring_model="s", tau_dist=TauDistribution.uniform((0.1, 0.2, 0.3)))


def test_single_objective_trends_20_seeds(tmp_path):
    corpus = trend_corpus()
    increasing_ok = 0
    decreasing_ok = 0
    seeds = range(20)
    for seed in seeds:
        up_state = run_loop(
            MockBackend(seed=seed),
            corpus,
            IterationState.initial("m0"),
            IterationConfig(
                strategy=SelectionStrategy.single("f_s", quota=8),
                candidates_per_instance=4,
                tail_mask_fraction=0.0,
            ),
            trend_ctx(),
            tmp_path / f"up-{seed}",
            iterations=3,
        )
        ups = [s.f_s for s in up_state.score_stats]
        if ups[0] < ups[1] < ups[2]:
            increasing_ok += 1

        down_state = run_loop(
            MockBackend(seed=seed),
            corpus,
            IterationState.initial("m0"),
            IterationConfig(
                strategy=SelectionStrategy.single("f_b", quota=8),
                candidates_per_instance=4,
                tail_mask_fraction=0.0,
            ),
            trend_ctx(),
            tmp_path / f"down-{seed}",
            iterations=3,
        )
        downs = [s.f_b for s in down_state.score_stats]
        if downs[0] > downs[1] > downs[2]:
            decreasing_ok += 1

    assert increasing_ok >= 19, f"f_s strictly increased in only {increasing_ok}/20 runs"
    assert decreasing_ok >= 19, f"f_b strictly decreased in only {decreasing_ok}/20 runs"
    report(
        f"single-objective trends: f_s up {increasing_ok}/20, f_b down {decreasing_ok}/20 seeded runs"
    )


def test_balanced_expert_iteration_trend_10_seeds(tmp_path):
    corpus = trend_corpus(count=15, tokens=6, seed=2000)
    config = IterationConfig(
        strategy=SelectionStrategy.balanced(fraction=0.5, quota=50),
        candidates_per_instance=8,
        tail_mask_fraction=0.0,
    )
    for seed in range(10):
        state = run_loop(
            MockBackend(seed=seed),
            corpus,
            IterationState.initial("m0"),
            config,
            trend_ctx(),
            tmp_path / f"bal-{seed}",
            iterations=5,
        )
        f_s = [s.f_s for s in state.score_stats]
        f_f = [s.f_f for s in state.score_stats]
        assert all(b >= a for a, b in zip(f_s, f_s[1:])), f"seed {seed}: f_s dipped: {f_s}"
        assert all(b >= a for a, b in zip(f_f, f_f[1:])), f"seed {seed}: f_f dipped: {f_f}"
        assert all(s.selected <= 50 for s in state.score_stats)
    report("balanced strategy: f_s and f_f non-decreasing over 5 iterations, 10 seeds")


# ---------------------------------------------------------------------------
# End-to-end smoke
# ---------------------------------------------------------------------------


def _smoke_workspace(root: Path) -> Path:
    corpus_dir = root / "corpus"
    corpus_dir.mkdir(parents=True)
    rng = random.Random(31337)
    for i in range(10):
        instance = random_instance(
            rng, fixed_nodes=4, fixed_tokens=5, extra_edge_prob=1.0, instance_id=f"smoke-{i:02d}"
        )
        save_instance_file(instance, corpus_dir / f"smoke-{i:02d}.json")
    config = {
        "paths": {
            "corpus_dir": "corpus",
            "output_dir": "out",
            "state_file": "state.json",
        },
        "backend": {"kind": "mock", "seed": 11, "generation_model": "gen0", "scoring_model": "s"},
        "verbalizer": {"hop_k": 2, "prune_threshold": 0.0, "tail_mask_fraction": 0.05},
        "measures": {"tau_grid": [0.1, 0.2, 0.3]},
        "iteration": {
            "strategy": {"kind": "balanced_top_fraction", "fraction": 0.5, "quota": 50},
            "candidates_per_instance": 4,
            "iterations": 2,
        },
    }
    (root / "config.json").write_text(json.dumps(config, indent=2))
    return root


def _run_smoke(root: Path) -> float:
    config = str(root / "config.json")
    start = time.monotonic()

    def cli(*args):
        result = subprocess.run(
            [sys.executable, "-m", "narrator.cli", "--config", config, *args],
            capture_output=True,
            text=True,
            cwd=root,
        )
        assert result.returncode == 0, result.stderr + result.stdout
        return result

    cli("iterate")
    cli("export-distill")
    state = json.loads((root / "state.json").read_text())["payload"]
    records = [
        {"instance_id": c["instance_id"], "method": "generator", "explanation": c["text"]}
        for c in state["accumulated"]
    ]
    records_path = root / "records.jsonl"
    records_path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    cli("evaluate", "--records", str(records_path))
    return time.monotonic() - start


def test_end_to_end_smoke_deterministic(tmp_path):
    run_a = _smoke_workspace(tmp_path / "a")
    run_b = _smoke_workspace(tmp_path / "b")
    elapsed_a = _run_smoke(run_a)
    elapsed_b = _run_smoke(run_b)
    assert elapsed_a < 60 and elapsed_b < 60

    produced = sorted(p.relative_to(run_a) for p in run_a.rglob("*") if p.is_file())
    expected_outputs = {
        Path("state.json"),
        Path("out/distill.jsonl"),
        Path("out/metrics.json"),
        Path("out/metrics_table.txt"),
        Path("out/audit.jsonl"),
        Path("out/finetune_000.jsonl"),
        Path("out/finetune_001.jsonl"),
    }
    assert expected_outputs <= set(produced)
    skip = {Path("out/resolved_config.json")}  # carries absolute paths
    for rel in produced:
        if rel in skip:
            continue
        other = run_b / rel
        assert other.is_file(), f"missing {rel} in second run"
        assert (run_a / rel).read_bytes() == other.read_bytes(), f"bytes differ: {rel}"
    state = json.loads((run_a / "state.json").read_text())["payload"]
    assert state["iteration"] == 2
    assert len(state["score_stats"]) == 2
    report(f"end-to-end smoke deterministic; runs took {elapsed_a:.1f}s and {elapsed_b:.1f}s")


def test_simulatability_calibration():
    labels = tuple(f"label{i}" for i in range(7))
    ctx = ScoringContext(scoring_model="s", tau_dist=TauDistribution.uniform((0.1,)))

    oracle_corpus = {}
    oracle_records = []
    for i in range(100):
        label = labels[i % 7]
        inst = make_instance(
            [[f"w{j}" for j in range(6)]],
            label=label,
            label_set=labels,
            instance_id=f"oracle-{i}",
        )
        oracle_corpus[inst.instance_id] = inst
        oracle_records.append(EvalRecord(inst.instance_id, f"the prediction is {label}", "oracle"))
    oracle_backend = MockBackend(seed=0, config=MockConfig(oracle_labels=True))
    assert simulatability(oracle_backend, oracle_records, oracle_corpus, ctx) == 1.0

    uniform_corpus = {}
    uniform_records = []
    for i in range(700):
        inst = make_instance(
            [[f"w{j}" for j in range(6)]],
            label=labels[i % 7],
            label_set=labels,
            instance_id=f"uni-{i}",
        )
        uniform_corpus[inst.instance_id] = inst
        uniform_records.append(EvalRecord(inst.instance_id, f"free text number {i}", "uniform"))
    accuracy = simulatability(MockBackend(seed=321), uniform_records, uniform_corpus, ctx)
    p = 1 / 7
    sigma = math.sqrt(p * (1 - p) / 700)
    assert abs(accuracy - p) <= 3 * sigma, f"accuracy {accuracy:.4f} vs {p:.4f} +- {3 * sigma:.4f}"
    report(f"simulatability calibration: oracle 1.0, uniform {accuracy:.4f} within 3 sigma of 1/7")
