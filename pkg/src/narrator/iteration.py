"""Expert-iteration loop: generate candidates, score, select, fine-tune.

Each iteration generates n explanation candidates per instance with the
current generator model, scores every candidate, selects a high-quality
subset under a configurable strategy (pool-level quantile thresholds,
z-scored weighted sum, or a single objective), exports the selections as
a chat fine-tune file, and submits a fine-tune job that yields the next
generator model. Selections accumulate across iterations into the
distillation dataset.

A checkpoint is written after scoring and selection but before the
fine-tune submission, so a failed job resumes without re-scoring.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import statistics
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import prompts
from .backend import Backend, GenerationRequest
from .core import ExplanationInstance
from .errors import GraphReferenceError, SchemaError
from .finetune_format import dump_record, validate_finetune_file
from .measures import InstanceScorer, ScoreTriple, ScoringContext
from .verbalize import (
    build_bfs_tree,
    ego_token_order,
    prune,
    render_paragraph,
    scaled_count,
    serialize_plain,
)

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("balanced_top_fraction", "weighted_sum", "single_objective")
OBJECTIVES = ("f_s", "f_f", "f_b")


@dataclass(frozen=True)
class ExplanationCandidate:
    instance_id: str
    text: str
    iteration: int
    model_ref: str
    prompt_sha256: str
    sample_index: int
    temperature: float
    max_tokens: int
    scores: ScoreTriple | None = None


@dataclass(frozen=True)
class CandidateBatch:
    instance_id: str
    candidates: tuple[ExplanationCandidate, ...]
    iteration: int
    generator_model: str

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("candidate batch must be non-empty")


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str
    quota: int = 50
    fraction: float | None = None
    lambdas: tuple[float, float, float] | None = None
    objective: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.quota < 1:
            raise ValueError(f"quota must be >= 1, got {self.quota}")
        required = {
            "balanced_top_fraction": ("fraction",),
            "weighted_sum": ("lambdas",),
            "single_objective": ("objective",),
        }[self.kind]
        for name in ("fraction", "lambdas", "objective"):
            value = getattr(self, name)
            if name in required and value is None:
                raise ValueError(f"{self.kind} requires {name}")
            if name not in required and value is not None:
                raise ValueError(f"{self.kind} does not take {name}")
        if self.fraction is not None and not (0 < self.fraction <= 1):
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.objective is not None and self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")

    @classmethod
    def balanced(cls, fraction: float = 0.5, quota: int = 50) -> SelectionStrategy:
        return cls(kind="balanced_top_fraction", fraction=fraction, quota=quota)

    @classmethod
    def weighted(cls, lambdas: tuple[float, float, float] = (1.0, 1.0, 1.0), quota: int = 50) -> SelectionStrategy:
        return cls(kind="weighted_sum", lambdas=lambdas, quota=quota)

    @classmethod
    def single(cls, objective: str, quota: int = 50) -> SelectionStrategy:
        return cls(kind="single_objective", objective=objective, quota=quota)


@dataclass(frozen=True)
class IterationStats:
    f_s: float
    f_f: float
    f_b: float
    candidates: int
    selected: int


@dataclass(frozen=True)
class IterationState:
    iteration: int
    generator_model: str
    accumulated: tuple[ExplanationCandidate, ...] = ()
    score_stats: tuple[IterationStats, ...] = ()

    @classmethod
    def initial(cls, generator_model: str) -> IterationState:
        return cls(iteration=0, generator_model=generator_model)


@dataclass(frozen=True)
class IterationConfig:
    strategy: SelectionStrategy
    candidates_per_instance: int = 4
    hop_k: int = 2
    prune_threshold: float = 0.0
    tail_mask_fraction: float = 0.05
    max_tokens: int = 512
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.candidates_per_instance < 1:
            raise ValueError("candidates_per_instance must be >= 1")
        if not (0 <= self.tail_mask_fraction < 1):
            raise ValueError(f"tail_mask_fraction must be in [0, 1), got {self.tail_mask_fraction}")


# ---------------------------------------------------------------------------
# Prompt construction and candidate generation
# ---------------------------------------------------------------------------


def _tail_drop_count(fraction: float, total: int) -> int:
    """floor(fraction * total) with the same near-integer snap as masking."""
    raw = fraction * total
    nearest = round(raw)
    if abs(raw - nearest) < 1e-9:
        return nearest
    return math.floor(raw)


def build_generation_prompt(
    instance: ExplanationInstance,
    with_scores: bool,
    tail_mask_fraction: float = 0.05,
    hop_k: int = 2,
    prune_threshold: float = 0.0,
) -> str:
    """One-shot generation prompt around the (tail-trimmed) saliency paragraph.

    The lowest-saliency fraction of paragraph tokens is removed before
    rendering; they are mostly stop words and would only dilute the hint.
    """
    if not (0 <= tail_mask_fraction < 1):
        raise ValueError(f"tail_mask_fraction must be in [0, 1), got {tail_mask_fraction}")
    tree = prune(build_bfs_tree(instance, hop_k), instance, prune_threshold)
    doc_tokens = ego_token_order(tree, instance)
    drop = _tail_drop_count(tail_mask_fraction, len(doc_tokens))
    token_scores = instance.saliency.token_scores
    ranked = sorted(doc_tokens, key=lambda t: (token_scores[t[0]][t[1]], t[0], t[1]))
    omit = frozenset((node, ti) for node, ti, _ in ranked[:drop])
    paragraph = render_paragraph(tree, instance, with_scores=with_scores, omit=omit).text
    return prompts.generation_prompt(
        paragraph, instance.prediction.label, instance.prediction.label_set, with_scores
    )


def generate_candidates(
    backend: Backend,
    instance: ExplanationInstance,
    n: int,
    state: IterationState,
    config: IterationConfig,
) -> CandidateBatch:
    """n unscored candidates from the current generator model, all-or-nothing."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    prompt = build_generation_prompt(
        instance,
        with_scores=True,
        tail_mask_fraction=config.tail_mask_fraction,
        hop_k=config.hop_k,
        prune_threshold=config.prune_threshold,
    )
    prompt_sha = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
    completions = backend.generate(
        GenerationRequest(
            prompt=prompt,
            model_ref=state.generator_model,
            n=n,
            max_tokens=config.max_tokens,
            temperature=config.temperature,
        )
    )
    candidates = tuple(
        ExplanationCandidate(
            instance_id=instance.instance_id,
            text=text,
            iteration=state.iteration,
            model_ref=state.generator_model,
            prompt_sha256=prompt_sha,
            sample_index=i,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
        )
        for i, text in enumerate(completions)
    )
    return CandidateBatch(
        instance_id=instance.instance_id,
        candidates=candidates,
        iteration=state.iteration,
        generator_model=state.generator_model,
    )


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


def _require_scored(pool: Sequence[ExplanationCandidate]) -> None:
    for candidate in pool:
        if candidate.scores is None:
            raise ValueError(f"candidate {candidate.instance_id}#{candidate.sample_index} is unscored")


def _zscores(values: Sequence[float]) -> list[float]:
    mean = statistics.fmean(values)
    std = statistics.pstdev(values)
    if std == 0:
        return [0.0 for _ in values]
    return [(v - mean) / std for v in values]


def _composite(pool: Sequence[ExplanationCandidate], lambdas: tuple[float, float, float]) -> list[float]:
    zs = _zscores([c.scores.f_s for c in pool])
    zf = _zscores([c.scores.f_f for c in pool])
    zb = _zscores([c.scores.f_b for c in pool])
    ls, lf, lb = lambdas
    return [ls * a + lf * b - lb * c for a, b, c in zip(zs, zf, zb)]


def select(pool: Sequence[ExplanationCandidate], strategy: SelectionStrategy) -> list[ExplanationCandidate]:
    """Pick at most `quota` candidates; ties always break by pool order."""
    _require_scored(pool)
    if not pool:
        return []

    if strategy.kind == "single_objective":
        values = [getattr(c.scores, strategy.objective) for c in pool]
        reverse = strategy.objective != "f_b"
        order = sorted(range(len(pool)), key=lambda i: -values[i] if reverse else values[i])
        return [pool[i] for i in order[: strategy.quota]]

    if strategy.kind == "weighted_sum":
        composite = _composite(pool, strategy.lambdas)
        order = sorted(range(len(pool)), key=lambda i: -composite[i])
        return [pool[i] for i in order[: strategy.quota]]

    # balanced_top_fraction
    k = max(1, scaled_count(strategy.fraction, len(pool)))
    hi_s = sorted((c.scores.f_s for c in pool), reverse=True)[k - 1]
    hi_f = sorted((c.scores.f_f for c in pool), reverse=True)[k - 1]
    lo_b = sorted(c.scores.f_b for c in pool)[k - 1]
    passing = [
        i
        for i, c in enumerate(pool)
        if c.scores.f_s >= hi_s and c.scores.f_f >= hi_f and c.scores.f_b <= lo_b
    ]
    if not passing:
        logger.warning("balanced selection matched no candidates (pool of %d)", len(pool))
        return []
    composite = _composite(pool, (1.0, 1.0, 1.0))
    passing.sort(key=lambda i: -composite[i])
    return [pool[i] for i in passing[: strategy.quota]]


def verify_selection(
    pool: Sequence[ExplanationCandidate],
    strategy: SelectionStrategy,
    selected: Sequence[ExplanationCandidate],
) -> None:
    """Independent re-check that every selected candidate satisfies the
    strategy predicate; raises on any violation."""
    if len(selected) > strategy.quota:
        raise RuntimeError(f"selection of {len(selected)} exceeds quota {strategy.quota}")
    if strategy.kind == "balanced_top_fraction":
        k = max(1, scaled_count(strategy.fraction, len(pool)))
        for cand in selected:
            above_s = sum(1 for c in pool if c.scores.f_s > cand.scores.f_s)
            above_f = sum(1 for c in pool if c.scores.f_f > cand.scores.f_f)
            below_b = sum(1 for c in pool if c.scores.f_b < cand.scores.f_b)
            if above_s >= k or above_f >= k or below_b >= k:
                raise RuntimeError(
                    f"candidate {cand.instance_id}#{cand.sample_index} fails the balanced predicate"
                )
    elif strategy.kind == "single_objective":
        sign = 1.0 if strategy.objective == "f_b" else -1.0
        best = sorted(sign * getattr(c.scores, strategy.objective) for c in pool)
        best = best[: min(strategy.quota, len(pool))]
        chosen = sorted(sign * getattr(c.scores, strategy.objective) for c in selected)
        if chosen != best:
            raise RuntimeError("single-objective selection does not match the best pool values")
    # weighted_sum is verified by construction: ranking is its own predicate


# ---------------------------------------------------------------------------
# Fine-tune export
# ---------------------------------------------------------------------------

EXPORT_STYLES = ("generator", "distillation")


def export_finetune_dataset(
    candidates: Sequence[ExplanationCandidate],
    corpus: Mapping[str, ExplanationInstance],
    config: IterationConfig,
    style: str,
    path: str | Path,
) -> Path:
    """Write one chat record per candidate; deterministic bytes.

    Generator style pairs the saliency-scored prompt with the explanation;
    distillation style pairs the score-free serialization prompt with the
    explanation (the student never sees saliency).
    """
    if style not in EXPORT_STYLES:
        raise ValueError(f"style must be one of {EXPORT_STYLES}, got {style!r}")
    if not candidates:
        raise ValueError("cannot export an empty candidate set")
    ordered = sorted(candidates, key=lambda c: (c.iteration, c.instance_id, c.sample_index))
    lines = []
    for candidate in ordered:
        if candidate.instance_id not in corpus:
            raise GraphReferenceError(f"candidate references unknown instance {candidate.instance_id!r}")
        instance = corpus[candidate.instance_id]
        if style == "generator":
            user = build_generation_prompt(
                instance,
                with_scores=True,
                tail_mask_fraction=config.tail_mask_fraction,
                hop_k=config.hop_k,
                prune_threshold=config.prune_threshold,
            )
        else:
            user = prompts.generation_prompt(
                serialize_plain(instance, config.hop_k),
                instance.prediction.label,
                instance.prediction.label_set,
                with_scores=False,
            )
        lines.append(dump_record([
            {"role": "user", "content": user},
            {"role": "assistant", "content": candidate.text},
        ]))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    validate_finetune_file(path)
    return path


# ---------------------------------------------------------------------------
# State persistence
# ---------------------------------------------------------------------------


def _candidate_to_dict(c: ExplanationCandidate) -> dict[str, Any]:
    return {
        "instance_id": c.instance_id,
        "text": c.text,
        "iteration": c.iteration,
        "model_ref": c.model_ref,
        "prompt_sha256": c.prompt_sha256,
        "sample_index": c.sample_index,
        "temperature": c.temperature,
        "max_tokens": c.max_tokens,
        "scores": None if c.scores is None else {"f_s": c.scores.f_s, "f_f": c.scores.f_f, "f_b": c.scores.f_b},
    }


def _candidate_from_dict(d: Mapping[str, Any]) -> ExplanationCandidate:
    scores = d["scores"]
    return ExplanationCandidate(
        instance_id=d["instance_id"],
        text=d["text"],
        iteration=d["iteration"],
        model_ref=d["model_ref"],
        prompt_sha256=d["prompt_sha256"],
        sample_index=d["sample_index"],
        temperature=d["temperature"],
        max_tokens=d["max_tokens"],
        scores=None if scores is None else ScoreTriple(**scores),
    )


def _state_to_dict(state: IterationState) -> dict[str, Any]:
    return {
        "iteration": state.iteration,
        "generator_model": state.generator_model,
        "accumulated": [_candidate_to_dict(c) for c in state.accumulated],
        "score_stats": [
            {"f_s": s.f_s, "f_f": s.f_f, "f_b": s.f_b, "candidates": s.candidates, "selected": s.selected}
            for s in state.score_stats
        ],
    }


def _state_from_dict(d: Mapping[str, Any]) -> IterationState:
    return IterationState(
        iteration=d["iteration"],
        generator_model=d["generator_model"],
        accumulated=tuple(_candidate_from_dict(c) for c in d["accumulated"]),
        score_stats=tuple(IterationStats(**s) for s in d["score_stats"]),
    )


def _hashed_payload(payload: dict[str, Any]) -> str:
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    digest = hashlib.sha256(blob.encode("utf-8")).hexdigest()
    return json.dumps({"payload": payload, "sha256": digest}, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def _load_hashed_payload(text: str, what: str) -> dict[str, Any]:
    document = json.loads(text)
    if set(document) != {"payload", "sha256"}:
        raise SchemaError(f"{what}: expected payload + sha256 wrapper")
    payload = document["payload"]
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    digest = hashlib.sha256(blob.encode("utf-8")).hexdigest()
    if digest != document["sha256"]:
        raise SchemaError(f"{what}: content hash mismatch")
    return payload


def save_state(state: IterationState, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(_hashed_payload(_state_to_dict(state)), encoding="utf-8")
    return path


def load_state(path: str | Path) -> IterationState:
    return _state_from_dict(_load_hashed_payload(Path(path).read_text(encoding="utf-8"), "state file"))


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------


def _checkpoint_path(out_dir: Path, iteration: int) -> Path:
    return out_dir / f"checkpoint_{iteration:03d}.json"


def run_iteration(
    backend: Backend,
    corpus: Mapping[str, ExplanationInstance],
    state: IterationState,
    config: IterationConfig,
    ctx: ScoringContext,
    out_dir: str | Path,
    resume: bool = False,
) -> IterationState:
    """One full generate -> score -> select -> fine-tune cycle."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = _checkpoint_path(out_dir, state.iteration)
    finetune_path = out_dir / f"finetune_{state.iteration:03d}.jsonl"

    if resume and checkpoint.exists():
        payload = _load_hashed_payload(checkpoint.read_text(encoding="utf-8"), "checkpoint")
        if payload["generator_model"] != state.generator_model or payload["iteration"] != state.iteration:
            raise SchemaError("checkpoint does not match the current state")
        pool = [_candidate_from_dict(c) for c in payload["pool"]]
        selected = [_candidate_from_dict(c) for c in payload["selected"]]
        logger.info("resumed iteration %d from checkpoint (%d scored candidates)", state.iteration, len(pool))
    else:
        pool = []
        for instance_id in sorted(corpus):
            instance = corpus[instance_id]
            batch = generate_candidates(backend, instance, config.candidates_per_instance, state, config)
            scorer = InstanceScorer(backend, instance, ctx)
            pool.extend(replace(c, scores=scorer.score_all(c.text)) for c in batch.candidates)
        selected = select(pool, config.strategy)
        verify_selection(pool, config.strategy, selected)
        if selected:
            export_finetune_dataset(selected, corpus, config, "generator", finetune_path)
        checkpoint.write_text(
            _hashed_payload(
                {
                    "iteration": state.iteration,
                    "generator_model": state.generator_model,
                    "pool": [_candidate_to_dict(c) for c in pool],
                    "selected": [_candidate_to_dict(c) for c in selected],
                }
            ),
            encoding="utf-8",
        )

    if selected:
        if not finetune_path.exists():
            export_finetune_dataset(selected, corpus, config, "generator", finetune_path)
        new_model = backend.submit_finetune(finetune_path, state.generator_model)
    else:
        logger.warning("iteration %d selected nothing; generator model unchanged", state.iteration)
        new_model = state.generator_model

    stats = IterationStats(
        f_s=statistics.fmean(c.scores.f_s for c in pool),
        f_f=statistics.fmean(c.scores.f_f for c in pool),
        f_b=statistics.fmean(c.scores.f_b for c in pool),
        candidates=len(pool),
        selected=len(selected),
    )
    return IterationState(
        iteration=state.iteration + 1,
        generator_model=new_model,
        accumulated=state.accumulated + tuple(selected),
        score_stats=state.score_stats + (stats,),
    )


def run_loop(
    backend: Backend,
    corpus: Mapping[str, ExplanationInstance],
    state: IterationState,
    config: IterationConfig,
    ctx: ScoringContext,
    out_dir: str | Path,
    iterations: int,
    state_file: str | Path | None = None,
    resume: bool = False,
) -> IterationState:
    for _ in range(iterations):
        state = run_iteration(backend, corpus, state, config, ctx, out_dir, resume=resume)
        resume = False
        if state_file is not None:
            save_state(state, state_file)
    return state
