"""Language-model backends: deterministic mock and OpenAI-compatible HTTP.

Both backends expose the same three operations: sample completions,
score a continuation's conditional log-probability, and submit a
fine-tune job. Every request/response pair is appended to a JSONL audit
log with a request id shared across retry attempts, so a retried request
is never double-counted.

The mock backend is a pure function of (seed, request). Its conditional
log-probs are dyadic rationals (multiples of 2^-10), which makes the
token-level decomposition log P(Y|X) = sum_i log P(y_i | X, y_0..y_{i-1})
hold bitwise under any split of Y. The mock also simulates a quality-
responsive generator: completions carry an embedded quality marker,
scoring reads the marker back as a log-prob lift, and a fine-tune job
shifts the tuned model's quality toward the mean of its training set --
enough behavior to drive the whole expert-iteration loop offline.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import prompts
from .errors import (
    BackendRefusal,
    BudgetError,
    JobFailedError,
    TransportError,
    UnsupportedError,
)
from .finetune_format import validate_finetune_file

LOGPROB_SENTINEL = -1e9

API_KEY_ENV = "NARRATOR_API_KEY"
API_BASE_ENV = "NARRATOR_API_BASE"


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    model_ref: str
    n: int = 1
    max_tokens: int = 512
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


@dataclass(frozen=True)
class LogProbQuery:
    context: str
    continuation: tuple[str, ...]
    model_ref: str

    def __post_init__(self) -> None:
        if not self.continuation:
            raise ValueError("continuation must be non-empty")


@dataclass(frozen=True)
class BackendBudget:
    max_concurrent: int = 1
    max_retries: int = 2
    retry_backoff: tuple[float, ...] = (0.5, 1.0, 2.0)
    request_timeout: float = 60.0

    def __post_init__(self) -> None:
        if self.max_concurrent < 1:
            raise ValueError(f"max_concurrent must be >= 1, got {self.max_concurrent}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")


def extend_context(context: str, tokens: tuple[str, ...] | list[str]) -> str:
    """Concatenation rule used for the token-level decomposition."""
    out = context
    for token in tokens:
        out = f"{out} {token}"
    return out


class AuditLog:
    """Append-only JSONL log shared by backends and scorers."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._seq = 0

    def append(self, record: dict[str, Any]) -> None:
        with self._lock:
            record = {"seq": self._seq, **record}
            self._seq += 1
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _stable_u64(*parts: object) -> int:
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "big")


class Backend:
    """Common retry, concurrency, and audit plumbing."""

    def __init__(self, budget: BackendBudget | None = None, audit: AuditLog | None = None):
        self.budget = budget or BackendBudget()
        self.audit = audit or AuditLog()
        self._semaphore = threading.Semaphore(self.budget.max_concurrent)
        self._request_counter = 0
        self._counter_lock = threading.Lock()

    def _next_request_id(self, kind: str, payload_sha: str) -> str:
        with self._counter_lock:
            self._request_counter += 1
            counter = self._request_counter
        return hashlib.blake2b(
            f"{kind}|{payload_sha}|{counter}".encode("utf-8"), digest_size=12
        ).hexdigest()

    def _call(self, kind: str, request_id: str, meta: dict[str, Any], attempt_fn: Callable[[], Any]) -> Any:
        """Run with retries; one audit line per attempt, same request id."""
        with self._semaphore:
            last: Exception | None = None
            for attempt in range(self.budget.max_retries + 1):
                try:
                    result = attempt_fn()
                except BudgetError:
                    self.audit.append(
                        {"kind": kind, "request_id": request_id, "attempt": attempt, "status": "timeout", **meta}
                    )
                    raise
                except TransportError as exc:
                    last = exc
                    self.audit.append(
                        {"kind": kind, "request_id": request_id, "attempt": attempt, "status": "error", **meta}
                    )
                    if attempt < self.budget.max_retries:
                        backoff = self.budget.retry_backoff
                        delay = backoff[min(attempt, len(backoff) - 1)] if backoff else 0.0
                        if delay > 0:
                            time.sleep(delay)
                    continue
                self.audit.append(
                    {"kind": kind, "request_id": request_id, "attempt": attempt, "status": "ok", **meta}
                )
                return result
            raise TransportError(f"{kind} failed after {self.budget.max_retries + 1} attempts") from last

    # Interface ----------------------------------------------------------

    def generate(self, req: GenerationRequest) -> list[str]:
        raise NotImplementedError

    def log_prob(self, query: LogProbQuery) -> float:
        raise NotImplementedError

    def submit_finetune(self, dataset: str | Path, base_model: str) -> str:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Deterministic mock
# ---------------------------------------------------------------------------

_QUALITY_MARKER_RE = re.compile(r"\[\[q s=([0-9.]+) f=([0-9.]+) b=([0-9.]+)\]\]")

_FILLER_WORDS = (
    "signal", "term", "structure", "neighbor", "evidence", "pattern",
    "feature", "context", "weight", "region", "cluster", "topic",
)


def format_quality_marker(q_s: float, q_f: float, q_b: float) -> str:
    return f"[[q s={q_s:.4f} f={q_f:.4f} b={q_b:.4f}]]"


def parse_quality_marker(text: str) -> tuple[float, float, float] | None:
    match = _QUALITY_MARKER_RE.search(text)
    if match is None:
        return None
    return float(match.group(1)), float(match.group(2)), float(match.group(3))


@dataclass(frozen=True)
class QualityProfile:
    """Latent generation quality of one simulated model."""

    mu_s: float = 0.35
    mu_f: float = 0.35
    mu_b: float = 0.55


def _quantize(value: float) -> float:
    """Snap to a multiple of 2^-10 so mock log-prob sums are exact."""
    return round(value * 1024.0) / 1024.0


@dataclass
class MockConfig:
    """Optional staged behaviors layered over the default hash path."""

    generation_table: dict[str, list[str]] | None = None
    logprob_table: dict[tuple[str, str], float] | None = None  # (context, token) -> prob
    fill_probs: tuple[float, float] | None = None  # (with E, without E), sequence-level
    fill_probs_by_len: dict[int, tuple[float, float]] | None = None
    label_probs: tuple[float, float] | None = None
    label_probs_by_label: dict[str, float] | None = None
    oracle_labels: bool = False
    fail_generate: int = 0  # transient TransportErrors to inject
    fail_submit: int = 0
    quality_spread: float = 0.12
    brevity_spread: float = 0.08
    lift_input: float = 1.0  # per-token log-prob lift scale for q_s
    # Kept below 1 so the conditioned label log-prob rarely clamps at 0,
    # which would flatten f_f and stall selection pressure on it.
    lift_label: float = 0.75


class MockBackend(Backend):
    def __init__(
        self,
        seed: int = 0,
        base_profile: QualityProfile | None = None,
        config: MockConfig | None = None,
        budget: BackendBudget | None = None,
        audit: AuditLog | None = None,
    ):
        super().__init__(budget=budget or BackendBudget(retry_backoff=()), audit=audit)
        self.seed = seed
        self.base_profile = base_profile or QualityProfile()
        self.config = config or MockConfig()
        self._models: dict[str, QualityProfile] = {}
        self._models_lock = threading.Lock()

    # generation ---------------------------------------------------------

    def generate(self, req: GenerationRequest) -> list[str]:
        request_id = self._next_request_id("generate", _sha(req.prompt))
        meta = {"model": req.model_ref, "n": req.n, "prompt_sha256": _sha(req.prompt)}

        def attempt() -> list[str]:
            if self.config.fail_generate > 0:
                self.config.fail_generate -= 1
                raise TransportError("injected transient failure")
            return self._generate_once(req)

        completions = self._call("generate", request_id, meta, attempt)
        self.audit.append(
            {
                "kind": "generate_result",
                "request_id": request_id,
                "completions_sha256": _sha("\x1e".join(completions)),
            }
        )
        return completions

    def _generate_once(self, req: GenerationRequest) -> list[str]:
        table = self.config.generation_table
        if table is not None:
            entries = table.get(req.prompt)
            if entries is None:
                raise BackendRefusal(f"mock has no completions for prompt {_sha(req.prompt)[:12]}")
            if len(entries) < req.n:
                raise BackendRefusal(f"mock has {len(entries)} completions, {req.n} requested")
            return list(entries[: req.n])
        return [self._simulate_completion(req, i) for i in range(req.n)]

    def _profile(self, model_ref: str) -> QualityProfile:
        with self._models_lock:
            return self._models.get(model_ref, self.base_profile)

    def _simulate_completion(self, req: GenerationRequest, index: int) -> str:
        import random

        profile = self._profile(req.model_ref)
        rng = random.Random(_stable_u64(self.seed, "gen", req.model_ref, req.prompt, req.n, index))
        spread = self.config.quality_spread
        q_s = min(1.0, max(0.0, rng.gauss(profile.mu_s, spread)))
        q_f = min(1.0, max(0.0, rng.gauss(profile.mu_f, spread)))
        q_b = min(1.5, max(0.05, rng.gauss(profile.mu_b, self.config.brevity_spread)))

        document = prompts.extract_task_document(req.prompt)
        doc_tokens = len(document.split()) if document else 40
        label = prompts.extract_task_label(req.prompt) or "the label"

        words = [format_quality_marker(q_s, q_f, q_b)]
        words += f"Points to {label} .".split()
        target = max(len(words), round(q_b * doc_tokens))
        while len(words) < target:
            words.append(rng.choice(_FILLER_WORDS))
        return " ".join(words[:target])

    # scoring ------------------------------------------------------------

    def log_prob(self, query: LogProbQuery) -> float:
        request_id = self._next_request_id("log_prob", _sha(query.context))
        meta = {
            "model": query.model_ref,
            "context_sha256": _sha(query.context),
            "continuation_tokens": len(query.continuation),
        }
        value = self._call("log_prob", request_id, meta, lambda: self._log_prob_once(query))
        return value

    def _log_prob_once(self, query: LogProbQuery) -> float:
        ctx, tokens = query.context, query.continuation
        staged = self._staged_log_prob(ctx, tokens)
        if staged is not None:
            return staged

        canon = prompts.strip_explanation_section(ctx)
        lift = self._lift_for(ctx)
        table = self.config.logprob_table

        total = 0.0
        running_ctx = ctx
        running_canon = canon
        for token in tokens:
            if table is not None and (running_ctx, token) in table:
                prob = table[(running_ctx, token)]
                total += math.log(prob) if prob > 0 else LOGPROB_SENTINEL
            else:
                h = _stable_u64(self.seed, "lp", running_canon, token)
                base = -(1 + h % 8191) / 1024.0
                total += min(0.0, base + lift)
            running_ctx = f"{running_ctx} {token}"
            running_canon = f"{running_canon} {token}"
        return max(total, LOGPROB_SENTINEL)

    def _staged_log_prob(self, ctx: str, tokens: tuple[str, ...]) -> float | None:
        cfg = self.config
        has_explanation = prompts.extract_explanation_section(ctx) is not None

        def log_of(pair: tuple[float, float]) -> float:
            prob = pair[0] if has_explanation else pair[1]
            return math.log(prob) if prob > 0 else LOGPROB_SENTINEL

        if ctx.startswith(prompts.MASK_FILL_HEADER):
            if cfg.fill_probs_by_len and len(tokens) in cfg.fill_probs_by_len:
                return log_of(cfg.fill_probs_by_len[len(tokens)])
            if cfg.fill_probs is not None:
                return log_of(cfg.fill_probs)
        if ctx.startswith(prompts.CLASSIFY_HEADER):
            label = " ".join(tokens)
            if cfg.oracle_labels:
                explanation = prompts.extract_explanation_section(ctx) or ""
                return 0.0 if label.lower() in explanation.lower() else LOGPROB_SENTINEL
            if cfg.label_probs_by_label is not None and label in cfg.label_probs_by_label:
                prob = cfg.label_probs_by_label[label]
                return math.log(prob) if prob > 0 else LOGPROB_SENTINEL
            if cfg.label_probs is not None:
                return log_of(cfg.label_probs)
        return None

    def _lift_for(self, ctx: str) -> float:
        explanation = prompts.extract_explanation_section(ctx)
        if explanation is None:
            return 0.0
        marker = parse_quality_marker(explanation)
        if marker is None:
            return 0.0
        q_s, q_f, _ = marker
        if ctx.startswith(prompts.MASK_FILL_HEADER):
            return _quantize(q_s * self.config.lift_input)
        if ctx.startswith(prompts.CLASSIFY_HEADER):
            return _quantize(q_f * self.config.lift_label)
        return 0.0

    # fine-tuning --------------------------------------------------------

    def submit_finetune(self, dataset: str | Path, base_model: str) -> str:
        records = validate_finetune_file(dataset)
        dataset_sha = _sha(Path(dataset).read_text(encoding="utf-8"))
        request_id = self._next_request_id("finetune", dataset_sha)
        meta = {"model": base_model, "records": len(records), "dataset_sha256": dataset_sha}

        def attempt() -> str:
            if self.config.fail_submit > 0:
                self.config.fail_submit -= 1
                raise TransportError("injected transient submit failure")
            new_ref = f"{base_model}@ft{base_model.count('@ft') + 1}"
            qualities = [
                marker
                for record in records
                for message in record["messages"]
                if message["role"] == "assistant"
                and (marker := parse_quality_marker(message["content"])) is not None
            ]
            if qualities:
                profile = QualityProfile(
                    mu_s=sum(q[0] for q in qualities) / len(qualities),
                    mu_f=sum(q[1] for q in qualities) / len(qualities),
                    mu_b=sum(q[2] for q in qualities) / len(qualities),
                )
            else:
                profile = self._profile(base_model)
            with self._models_lock:
                self._models[new_ref] = profile
            return new_ref

        return self._call("finetune", request_id, meta, attempt)


# ---------------------------------------------------------------------------
# OpenAI-compatible HTTP backend
# ---------------------------------------------------------------------------


class HttpBackend(Backend):
    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        budget: BackendBudget | None = None,
        audit: AuditLog | None = None,
        poll_interval: float = 5.0,
    ):
        super().__init__(budget=budget, audit=audit)
        self.base_url = (base_url or os.environ.get(API_BASE_ENV, "")).rstrip("/")
        if not self.base_url:
            raise ValueError(f"no base URL: pass base_url or set {API_BASE_ENV}")
        self.api_key = api_key or os.environ.get(API_KEY_ENV, "")
        self.poll_interval = poll_interval

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        import httpx

        try:
            response = httpx.post(
                f"{self.base_url}{path}",
                json=payload,
                headers=self._headers(),
                timeout=self.budget.request_timeout,
            )
        except httpx.TimeoutException as exc:
            raise BudgetError(f"request to {path} timed out") from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {path} failed: {exc}") from exc
        if 400 <= response.status_code < 500:
            raise BackendRefusal(f"{response.status_code}: {response.text}")
        if response.status_code >= 500:
            raise TransportError(f"{response.status_code}: {response.text}")
        return response.json()

    def generate(self, req: GenerationRequest) -> list[str]:
        request_id = self._next_request_id("generate", _sha(req.prompt))
        meta = {"model": req.model_ref, "n": req.n, "prompt_sha256": _sha(req.prompt)}

        def attempt() -> list[str]:
            body = self._post(
                "/v1/chat/completions",
                {
                    "model": req.model_ref,
                    "messages": [{"role": "user", "content": req.prompt}],
                    "n": req.n,
                    "max_tokens": req.max_tokens,
                    "temperature": req.temperature,
                },
            )
            completions = [choice["message"]["content"] for choice in body.get("choices", [])]
            if len(completions) != req.n:
                raise BackendRefusal(f"backend returned {len(completions)} completions, {req.n} requested")
            return completions

        return self._call("generate", request_id, meta, attempt)

    def log_prob(self, query: LogProbQuery) -> float:
        request_id = self._next_request_id("log_prob", _sha(query.context))
        meta = {"model": query.model_ref, "context_sha256": _sha(query.context)}

        def attempt() -> float:
            full_text = extend_context(query.context, query.continuation)
            body = self._post(
                "/v1/completions",
                {
                    "model": query.model_ref,
                    "prompt": full_text,
                    "max_tokens": 0,
                    "echo": True,
                    "logprobs": 0,
                },
            )
            choice = body.get("choices", [{}])[0]
            logprobs = choice.get("logprobs")
            if not logprobs or "token_logprobs" not in logprobs or "text_offset" not in logprobs:
                raise UnsupportedError("backend does not echo token log-probs")
            boundary = len(query.context)
            total = 0.0
            for offset, lp in zip(logprobs["text_offset"], logprobs["token_logprobs"]):
                if offset >= boundary and lp is not None:
                    total += lp
            return max(total, LOGPROB_SENTINEL)

        return self._call("log_prob", request_id, meta, attempt)

    def submit_finetune(self, dataset: str | Path, base_model: str) -> str:
        import httpx

        records = validate_finetune_file(dataset)
        dataset_sha = _sha(Path(dataset).read_text(encoding="utf-8"))
        request_id = self._next_request_id("finetune", dataset_sha)
        meta = {"model": base_model, "records": len(records), "dataset_sha256": dataset_sha}

        def attempt() -> str:
            try:
                upload = httpx.post(
                    f"{self.base_url}/v1/files",
                    files={"file": (Path(dataset).name, Path(dataset).read_bytes())},
                    data={"purpose": "fine-tune"},
                    headers={"Authorization": f"Bearer {self.api_key}"} if self.api_key else {},
                    timeout=self.budget.request_timeout,
                )
            except httpx.HTTPError as exc:
                raise TransportError(f"file upload failed: {exc}") from exc
            if upload.status_code >= 400:
                raise BackendRefusal(f"{upload.status_code}: {upload.text}")
            file_id = upload.json()["id"]

            job = self._post(
                "/v1/fine_tuning/jobs",
                {"model": base_model, "training_file": file_id, "hyperparameters": {"n_epochs": 3}},
            )
            job_id = job["id"]
            while True:
                status = self._get(f"/v1/fine_tuning/jobs/{job_id}")
                state = status.get("status")
                if state == "succeeded":
                    return status["fine_tuned_model"]
                if state in ("failed", "cancelled"):
                    raise JobFailedError(str(status.get("error") or state))
                time.sleep(self.poll_interval)

        return self._call("finetune", request_id, meta, attempt)

    def _get(self, path: str) -> dict[str, Any]:
        import httpx

        try:
            response = httpx.get(
                f"{self.base_url}{path}", headers=self._headers(), timeout=self.budget.request_timeout
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {path} failed: {exc}") from exc
        if response.status_code >= 400:
            raise BackendRefusal(f"{response.status_code}: {response.text}")
        return response.json()
