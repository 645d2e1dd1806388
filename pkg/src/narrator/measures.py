"""Explanation quality measurements: input faithfulness, prediction
faithfulness, and brevity.

Input faithfulness is a PMI between the explanation and the high-saliency
rationale tokens, estimated by masked-token prediction: for each fraction
tau on a grid, the top tau of tokens are masked out of the ego-graph
serialization and the backend scores the rationale's conditional
log-probability with and without the explanation in context. The integral
over tau is realized as a deterministic weighted sum over the grid.

Prediction faithfulness is the PMI between the explanation and the
predicted label, with every label string masked out of the explanation
first so the score cannot come from answer leakage.

Brevity is the whitespace-token length ratio of explanation to
serialized ego graph.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from . import prompts
from .backend import Backend, LogProbQuery
from .core import ExplanationInstance
from .errors import DivisionDomainError, InstanceTooLargeError
from .verbalize import DEFAULT_HOP_K, MASK_PLACEHOLDER, MaskedInstance, build_masked_instance, serialize_plain

DEFAULT_TAU_GRID = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30)


@dataclass(frozen=True)
class TauDistribution:
    grid: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.grid) != len(self.weights) or not self.grid:
            raise ValueError("grid and weights must be non-empty and equal length")
        if any(not (0 < t < 1) for t in self.grid):
            raise ValueError(f"grid values must lie in (0, 1), got {self.grid}")
        if any(t2 <= t1 for t1, t2 in zip(self.grid, self.grid[1:])):
            raise ValueError(f"grid must be strictly increasing, got {self.grid}")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)}")

    @classmethod
    def uniform(cls, grid: tuple[float, ...] = DEFAULT_TAU_GRID) -> TauDistribution:
        return cls(grid=tuple(grid), weights=tuple(1.0 / len(grid) for _ in grid))

    @classmethod
    def point(cls, tau: float) -> TauDistribution:
        return cls(grid=(tau,), weights=(1.0,))


@dataclass(frozen=True)
class ScoreTriple:
    f_s: float
    f_f: float
    f_b: float

    def __post_init__(self) -> None:
        for name, value in (("f_s", self.f_s), ("f_f", self.f_f), ("f_b", self.f_b)):
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.f_b < 0:
            raise ValueError(f"f_b must be >= 0, got {self.f_b}")


@dataclass(frozen=True)
class ScoringContext:
    scoring_model: str
    tau_dist: TauDistribution = field(default_factory=TauDistribution.uniform)
    hop_k: int = DEFAULT_HOP_K
    mask_placeholder: str = MASK_PLACEHOLDER
    max_context_tokens: int = 8192
    parallel_tau: bool = False

    def __post_init__(self) -> None:
        if self.hop_k < 1:
            raise ValueError(f"hop_k must be >= 1, got {self.hop_k}")


def mask_labels(text: str, label_set: tuple[str, ...], placeholder: str = MASK_PLACEHOLDER) -> str:
    """Replace every case-insensitive label occurrence, longest label first."""
    for label in sorted(label_set, key=len, reverse=True):
        text = re.compile(re.escape(label), re.IGNORECASE).sub(placeholder, text)
    return text


class InstanceScorer:
    """Scores many explanations against one instance.

    Masked documents and the plain serialization depend only on the
    instance, so they are built once and reused across candidates.
    """

    def __init__(self, backend: Backend, instance: ExplanationInstance, ctx: ScoringContext):
        self.backend = backend
        self.instance = instance
        self.ctx = ctx
        self._plain: str | None = None
        self._masked: dict[float, MaskedInstance] = {}

    @property
    def plain_serialization(self) -> str:
        if self._plain is None:
            self._plain = serialize_plain(self.instance, self.ctx.hop_k)
        return self._plain

    def _masked_for(self, tau: float) -> MaskedInstance:
        if tau not in self._masked:
            self._masked[tau] = build_masked_instance(
                self.instance, self.ctx.hop_k, tau, self.ctx.mask_placeholder
            )
        return self._masked[tau]

    def _check_budget(self, prompt: str) -> None:
        size = len(prompt.split())
        if size > self.ctx.max_context_tokens:
            raise InstanceTooLargeError(
                f"prompt of {size} tokens exceeds context budget {self.ctx.max_context_tokens}"
            )

    def _pmi_at_tau(self, tau: float, explanation: str) -> float:
        masked = self._masked_for(tau)
        tokens = tuple(tok for _, _, tok in masked.rationale_tokens)
        if not tokens:
            return 0.0
        with_e = prompts.mask_fill_prompt(masked.masked_document, explanation)
        without_e = prompts.mask_fill_prompt(masked.masked_document)
        self._check_budget(with_e)
        self._check_budget(without_e)
        lp_with = self.backend.log_prob(LogProbQuery(with_e, tokens, self.ctx.scoring_model))
        lp_without = self.backend.log_prob(LogProbQuery(without_e, tokens, self.ctx.scoring_model))
        return lp_with - lp_without

    def input_faithfulness(self, explanation: str) -> float:
        if not explanation:
            raise ValueError("explanation must be non-empty")
        dist = self.ctx.tau_dist
        if self.ctx.parallel_tau and len(dist.grid) > 1:
            with ThreadPoolExecutor(max_workers=len(dist.grid)) as pool:
                pmis = list(pool.map(lambda tau: self._pmi_at_tau(tau, explanation), dist.grid))
        else:
            pmis = [self._pmi_at_tau(tau, explanation) for tau in dist.grid]
        total = 0.0
        for weight, pmi in zip(dist.weights, pmis):
            total += weight * pmi
        return total

    def prediction_faithfulness(self, explanation: str) -> float:
        prediction = self.instance.prediction
        masked_explanation = mask_labels(explanation, prediction.label_set, self.ctx.mask_placeholder)
        with_e = prompts.classification_prompt(prediction.label_set, masked_explanation)
        without_e = prompts.classification_prompt(prediction.label_set)
        tokens = tuple(prediction.label.split())
        lp_with = self.backend.log_prob(LogProbQuery(with_e, tokens, self.ctx.scoring_model))
        lp_without = self.backend.log_prob(LogProbQuery(without_e, tokens, self.ctx.scoring_model))
        return lp_with - lp_without

    def brevity(self, explanation: str) -> float:
        if self.instance.graph.token_count == 0:
            raise DivisionDomainError(
                f"instance {self.instance.instance_id!r} has no text tokens to measure against"
            )
        return len(explanation.split()) / len(self.plain_serialization.split())

    def score_all(self, explanation: str) -> ScoreTriple:
        triple = ScoreTriple(
            f_s=self.input_faithfulness(explanation),
            f_f=self.prediction_faithfulness(explanation),
            f_b=self.brevity(explanation),
        )
        self.backend.audit.append(
            {
                "kind": "score",
                "instance_id": self.instance.instance_id,
                "model": self.ctx.scoring_model,
                "f_s": triple.f_s,
                "f_f": triple.f_f,
                "f_b": triple.f_b,
                "template_sha256": prompts.templates_digest(),
            }
        )
        return triple


def score_input_faithfulness(
    backend: Backend, instance: ExplanationInstance, explanation: str, ctx: ScoringContext
) -> float:
    return InstanceScorer(backend, instance, ctx).input_faithfulness(explanation)


def score_prediction_faithfulness(
    backend: Backend, instance: ExplanationInstance, explanation: str, ctx: ScoringContext
) -> float:
    return InstanceScorer(backend, instance, ctx).prediction_faithfulness(explanation)


def score_brevity(
    backend: Backend, instance: ExplanationInstance, explanation: str, ctx: ScoringContext
) -> float:
    return InstanceScorer(backend, instance, ctx).brevity(explanation)


def score_all(
    backend: Backend, instance: ExplanationInstance, explanation: str, ctx: ScoringContext
) -> ScoreTriple:
    return InstanceScorer(backend, instance, ctx).score_all(explanation)


def pmi_at_k(
    backend: Backend,
    instance: ExplanationInstance,
    explanation: str,
    k_percent: int,
    ctx: ScoringContext,
) -> float:
    """Single-tau input faithfulness at tau = k_percent / 100."""
    if k_percent not in (10, 20, 30):
        raise ValueError(f"k_percent must be one of 10, 20, 30, got {k_percent}")
    point_ctx = replace(ctx, tau_dist=TauDistribution.point(k_percent / 100))
    return score_input_faithfulness(backend, instance, explanation, point_ctx)
