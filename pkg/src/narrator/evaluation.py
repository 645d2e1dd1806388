"""Corpus-level automatic metrics: PMI-10/20/30%, Simulatability, Brevity.

Simulatability asks the scoring model to pick one label from the label
set given only the explanation; the pick is the argmax of label
log-probs, which sidesteps free-form answer parsing. Per-instance values
are kept in the report so re-analysis never needs the backend again.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import prompts
from .backend import Backend, LogProbQuery
from .core import ExplanationInstance
from .errors import GraphReferenceError, SchemaError
from .measures import InstanceScorer, ScoringContext, pmi_at_k

PMI_LEVELS = (10, 20, 30)


@dataclass(frozen=True)
class EvalRecord:
    instance_id: str
    explanation: str
    method: str


@dataclass(frozen=True)
class MethodMetrics:
    pmi_10: float
    pmi_20: float
    pmi_30: float
    simulatability: float
    brevity: float
    count: int
    per_instance: tuple[dict[str, Any], ...]

    def __post_init__(self) -> None:
        if not (0.0 <= self.simulatability <= 1.0):
            raise ValueError(f"simulatability must be in [0, 1], got {self.simulatability}")
        if self.brevity < 0:
            raise ValueError(f"brevity must be >= 0, got {self.brevity}")


@dataclass(frozen=True)
class MetricReport:
    methods: dict[str, MethodMetrics]


def load_records(path: str | Path) -> list[EvalRecord]:
    records = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"records line {line_no}: invalid JSON: {exc}") from exc
        if not isinstance(raw, dict) or set(raw) != {"instance_id", "method", "explanation"}:
            raise SchemaError(f"records line {line_no}: expected instance_id, method, explanation")
        records.append(EvalRecord(raw["instance_id"], raw["explanation"], raw["method"]))
    return records


def _resolve(record: EvalRecord, corpus: Mapping[str, ExplanationInstance]) -> ExplanationInstance:
    if record.instance_id not in corpus:
        raise GraphReferenceError(f"record references unknown instance {record.instance_id!r}")
    return corpus[record.instance_id]


def infer_label(
    backend: Backend, instance: ExplanationInstance, explanation: str, ctx: ScoringContext
) -> str:
    """Label the scoring model deems most likely given only the explanation."""
    label_set = instance.prediction.label_set
    prompt = prompts.classification_prompt(label_set, explanation)
    best_label, best_lp = label_set[0], None
    for label in label_set:
        lp = backend.log_prob(LogProbQuery(prompt, tuple(label.split()), ctx.scoring_model))
        if best_lp is None or lp > best_lp:
            best_label, best_lp = label, lp
    return best_label


def simulatability(
    backend: Backend,
    records: Sequence[EvalRecord],
    corpus: Mapping[str, ExplanationInstance],
    ctx: ScoringContext,
) -> float:
    if not records:
        raise ValueError("cannot compute simulatability over an empty record set")
    hits = 0
    for record in records:
        instance = _resolve(record, corpus)
        if infer_label(backend, instance, record.explanation, ctx) == instance.prediction.label:
            hits += 1
    return hits / len(records)


def brevity_corpus(
    backend: Backend,
    records: Sequence[EvalRecord],
    corpus: Mapping[str, ExplanationInstance],
    ctx: ScoringContext,
) -> float:
    if not records:
        raise ValueError("cannot compute brevity over an empty record set")
    values = [
        InstanceScorer(backend, _resolve(r, corpus), ctx).brevity(r.explanation) for r in records
    ]
    return statistics.fmean(values)


def compute_report(
    backend: Backend,
    corpus: Mapping[str, ExplanationInstance],
    records: Sequence[EvalRecord],
    ctx: ScoringContext,
) -> MetricReport:
    if not records:
        raise ValueError("cannot evaluate an empty record set")
    by_method: dict[str, list[EvalRecord]] = {}
    for record in records:
        by_method.setdefault(record.method, []).append(record)

    methods: dict[str, MethodMetrics] = {}
    for method in sorted(by_method):
        rows = []
        for record in by_method[method]:
            instance = _resolve(record, corpus)
            scorer = InstanceScorer(backend, instance, ctx)
            pmis = {
                k: pmi_at_k(backend, instance, record.explanation, k, ctx) for k in PMI_LEVELS
            }
            choice = infer_label(backend, instance, record.explanation, ctx)
            rows.append(
                {
                    "instance_id": record.instance_id,
                    "pmi_10": pmis[10],
                    "pmi_20": pmis[20],
                    "pmi_30": pmis[30],
                    "predicted": choice,
                    "correct": choice == instance.prediction.label,
                    "brevity": scorer.brevity(record.explanation),
                }
            )
        methods[method] = MethodMetrics(
            pmi_10=statistics.fmean(r["pmi_10"] for r in rows),
            pmi_20=statistics.fmean(r["pmi_20"] for r in rows),
            pmi_30=statistics.fmean(r["pmi_30"] for r in rows),
            simulatability=sum(r["correct"] for r in rows) / len(rows),
            brevity=statistics.fmean(r["brevity"] for r in rows),
            count=len(rows),
            per_instance=tuple(rows),
        )
    return MetricReport(methods=methods)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

_TABLE_COLUMNS = ("Simul. (↑)", "PMI-10% (↑)", "PMI-20% (↑)", "PMI-30% (↑)", "Brevity (↓)")


def format_table(report: MetricReport) -> str:
    name_width = max([len("Method")] + [len(m) for m in report.methods])
    header = "Method".ljust(name_width) + "".join(f"  {c:>12}" for c in _TABLE_COLUMNS)
    lines = [header]
    for method in sorted(report.methods):
        metrics = report.methods[method]
        cells = (
            f"{metrics.simulatability:.2f}",
            f"{metrics.pmi_10:.3f}",
            f"{metrics.pmi_20:.3f}",
            f"{metrics.pmi_30:.3f}",
            f"{metrics.brevity:.3f}",
        )
        lines.append(method.ljust(name_width) + "".join(f"  {c:>12}" for c in cells))
    return "\n".join(lines) + "\n"


def report_to_dict(report: MetricReport) -> dict[str, Any]:
    return {
        "template_sha256": prompts.templates_digest(),
        "methods": {
            name: {
                "pmi_10": m.pmi_10,
                "pmi_20": m.pmi_20,
                "pmi_30": m.pmi_30,
                "simulatability": m.simulatability,
                "brevity": m.brevity,
                "count": m.count,
                "per_instance": list(m.per_instance),
            }
            for name, m in report.methods.items()
        },
    }


def report_from_dict(payload: Mapping[str, Any]) -> MetricReport:
    methods = {}
    for name, m in payload["methods"].items():
        methods[name] = MethodMetrics(
            pmi_10=m["pmi_10"],
            pmi_20=m["pmi_20"],
            pmi_30=m["pmi_30"],
            simulatability=m["simulatability"],
            brevity=m["brevity"],
            count=m["count"],
            per_instance=tuple(m["per_instance"]),
        )
    return MetricReport(methods=methods)


def emit_report(report: MetricReport, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.json"
    table_path = out_dir / "metrics_table.txt"
    metrics_path.write_text(
        json.dumps(report_to_dict(report), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    table_path.write_text(format_table(report), encoding="utf-8")
    return metrics_path, table_path


def load_report(path: str | Path) -> MetricReport:
    return report_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
