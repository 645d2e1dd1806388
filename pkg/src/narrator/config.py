"""Run configuration: one JSON file, validated into typed settings.

Command-line flags override individual fields; every command writes the
resolved configuration beside its outputs so a run can be reproduced
from its artifacts alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .backend import AuditLog, Backend, BackendBudget, HttpBackend, MockBackend
from .errors import ConfigError
from .iteration import IterationConfig, SelectionStrategy
from .measures import DEFAULT_TAU_GRID, ScoringContext, TauDistribution

BACKEND_KINDS = ("mock", "http")


@dataclass(frozen=True)
class RunConfig:
    corpus_dir: Path
    output_dir: Path
    state_file: Path
    backend_kind: str
    seed: int
    base_url: str | None
    generation_model: str
    scoring_model: str
    budget: BackendBudget
    hop_k: int
    prune_threshold: float
    tail_mask_fraction: float
    tau: TauDistribution
    strategy: SelectionStrategy
    candidates_per_instance: int
    iterations: int
    max_tokens: int
    temperature: float


_SECTION_KEYS = {"paths", "backend", "verbalizer", "measures", "iteration"}


def _section(raw: Mapping[str, Any], name: str, allowed: set[str]) -> dict[str, Any]:
    section = raw.get(name, {})
    if not isinstance(section, Mapping):
        raise ConfigError(f"{name}: expected an object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {sorted(unknown)}")
    return dict(section)


def parse_config(raw: Mapping[str, Any], base_dir: Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    overrides = overrides or {}
    unknown = set(raw) - _SECTION_KEYS
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}")

    paths = _section(raw, "paths", {"corpus_dir", "output_dir", "state_file"})
    for key in ("corpus_dir", "output_dir", "state_file"):
        if key not in paths:
            raise ConfigError(f"paths.{key} is required")

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else base_dir / path

    corpus_dir = resolve(paths["corpus_dir"])
    output_dir = resolve(paths["output_dir"])
    state_file = resolve(paths["state_file"])
    if not corpus_dir.is_dir():
        raise ConfigError(f"paths.corpus_dir does not exist: {corpus_dir}")

    backend = _section(
        raw,
        "backend",
        {
            "kind", "seed", "base_url", "generation_model", "scoring_model",
            "max_concurrent", "max_retries", "retry_backoff", "request_timeout",
        },
    )
    kind = overrides.get("backend", backend.get("kind", "mock"))
    if kind not in BACKEND_KINDS:
        raise ConfigError(f"backend.kind must be one of {BACKEND_KINDS}, got {kind!r}")
    seed = overrides.get("seed", backend.get("seed", 0))
    try:
        budget = BackendBudget(
            max_concurrent=backend.get("max_concurrent", 1),
            max_retries=backend.get("max_retries", 2),
            retry_backoff=tuple(backend.get("retry_backoff", (0.5, 1.0, 2.0))),
            request_timeout=backend.get("request_timeout", 60.0),
        )
    except ValueError as exc:
        raise ConfigError(f"backend: {exc}") from exc

    verbalizer = _section(raw, "verbalizer", {"hop_k", "prune_threshold", "tail_mask_fraction"})
    hop_k = verbalizer.get("hop_k", 2)
    prune_threshold = verbalizer.get("prune_threshold", 0.0)
    tail_mask_fraction = verbalizer.get("tail_mask_fraction", 0.05)
    if hop_k < 1:
        raise ConfigError(f"verbalizer.hop_k must be >= 1, got {hop_k}")
    if prune_threshold < 0:
        raise ConfigError(f"verbalizer.prune_threshold must be >= 0, got {prune_threshold}")
    if not (0 <= tail_mask_fraction < 1):
        raise ConfigError(f"verbalizer.tail_mask_fraction must be in [0, 1), got {tail_mask_fraction}")

    measures = _section(raw, "measures", {"tau_grid", "tau_weights"})
    grid = tuple(measures.get("tau_grid", DEFAULT_TAU_GRID))
    weights = measures.get("tau_weights")
    try:
        if weights is None:
            tau = TauDistribution.uniform(grid)
        else:
            tau = TauDistribution(grid=grid, weights=tuple(weights))
    except ValueError as exc:
        raise ConfigError(f"measures: {exc}") from exc

    iteration = _section(
        raw, "iteration", {"strategy", "candidates_per_instance", "iterations", "max_tokens", "temperature"}
    )
    strategy_raw = iteration.get("strategy", {"kind": "balanced_top_fraction", "fraction": 0.5, "quota": 50})
    if not isinstance(strategy_raw, Mapping):
        raise ConfigError("iteration.strategy: expected an object")
    try:
        strategy = SelectionStrategy(
            kind=strategy_raw.get("kind", "balanced_top_fraction"),
            quota=strategy_raw.get("quota", 50),
            fraction=strategy_raw.get("fraction"),
            lambdas=tuple(strategy_raw["lambdas"]) if "lambdas" in strategy_raw else None,
            objective=strategy_raw.get("objective"),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"iteration.strategy: {exc}") from exc
    iterations = iteration.get("iterations", 5)
    if iterations < 1:
        raise ConfigError(f"iteration.iterations must be >= 1, got {iterations}")

    return RunConfig(
        corpus_dir=corpus_dir,
        output_dir=output_dir,
        state_file=state_file,
        backend_kind=kind,
        seed=seed,
        base_url=backend.get("base_url"),
        generation_model=backend.get("generation_model", "mock-generator"),
        scoring_model=backend.get("scoring_model", "mock-scorer"),
        budget=budget,
        hop_k=hop_k,
        prune_threshold=prune_threshold,
        tail_mask_fraction=tail_mask_fraction,
        tau=tau,
        strategy=strategy,
        candidates_per_instance=iteration.get("candidates_per_instance", 4),
        iterations=iterations,
        max_tokens=iteration.get("max_tokens", 512),
        temperature=iteration.get("temperature", 1.0),
    )


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw, base_dir=path.parent.resolve(), overrides=overrides)


def resolved_dict(config: RunConfig) -> dict[str, Any]:
    return {
        "paths": {
            "corpus_dir": str(config.corpus_dir),
            "output_dir": str(config.output_dir),
            "state_file": str(config.state_file),
        },
        "backend": {
            "kind": config.backend_kind,
            "seed": config.seed,
            "base_url": config.base_url,
            "generation_model": config.generation_model,
            "scoring_model": config.scoring_model,
            "max_concurrent": config.budget.max_concurrent,
            "max_retries": config.budget.max_retries,
            "retry_backoff": list(config.budget.retry_backoff),
            "request_timeout": config.budget.request_timeout,
        },
        "verbalizer": {
            "hop_k": config.hop_k,
            "prune_threshold": config.prune_threshold,
            "tail_mask_fraction": config.tail_mask_fraction,
        },
        "measures": {"tau_grid": list(config.tau.grid), "tau_weights": list(config.tau.weights)},
        "iteration": {
            "strategy": {
                "kind": config.strategy.kind,
                "quota": config.strategy.quota,
                **({"fraction": config.strategy.fraction} if config.strategy.fraction is not None else {}),
                **({"lambdas": list(config.strategy.lambdas)} if config.strategy.lambdas is not None else {}),
                **({"objective": config.strategy.objective} if config.strategy.objective is not None else {}),
            },
            "candidates_per_instance": config.candidates_per_instance,
            "iterations": config.iterations,
            "max_tokens": config.max_tokens,
            "temperature": config.temperature,
        },
    }


def make_backend(config: RunConfig, audit: AuditLog | None = None) -> Backend:
    if config.backend_kind == "mock":
        return MockBackend(seed=config.seed, budget=config.budget, audit=audit)
    return HttpBackend(base_url=config.base_url, budget=config.budget, audit=audit)


def scoring_context(config: RunConfig) -> ScoringContext:
    return ScoringContext(
        scoring_model=config.scoring_model,
        tau_dist=config.tau,
        hop_k=config.hop_k,
    )


def iteration_config(config: RunConfig) -> IterationConfig:
    return IterationConfig(
        strategy=config.strategy,
        candidates_per_instance=config.candidates_per_instance,
        hop_k=config.hop_k,
        prune_threshold=config.prune_threshold,
        tail_mask_fraction=config.tail_mask_fraction,
        max_tokens=config.max_tokens,
        temperature=config.temperature,
    )
