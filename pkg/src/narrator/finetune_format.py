"""Chat fine-tune file format: one {"messages": [...]} record per line.

Shared between the exporter (which writes these files) and the backends
(which validate before submitting a job).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .errors import ValidationError

ROLES = ("user", "assistant")


def validate_record(record: Any, line: int) -> dict[str, Any]:
    if not isinstance(record, dict) or set(record) != {"messages"}:
        raise ValidationError("expected an object with a single 'messages' key", line)
    messages = record["messages"]
    if not isinstance(messages, list) or len(messages) < 2 or len(messages) % 2 != 0:
        raise ValidationError("messages must be a non-empty even-length array", line)
    for i, message in enumerate(messages):
        if not isinstance(message, dict) or set(message) != {"role", "content"}:
            raise ValidationError(f"messages[{i}] must have exactly role and content", line)
        expected_role = ROLES[i % 2]
        if message["role"] != expected_role:
            raise ValidationError(f"messages[{i}].role must be {expected_role!r}", line)
        if not isinstance(message["content"], str) or not message["content"]:
            raise ValidationError(f"messages[{i}].content must be a non-empty string", line)
    return record


def validate_finetune_file(path: str | Path) -> list[dict[str, Any]]:
    """Parse and validate every line; raises ValidationError with line number."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"fine-tune dataset not found: {path}")
    records = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            raise ValidationError("blank line", line_no)
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON: {exc}", line_no) from exc
        records.append(validate_record(record, line_no))
    if not records:
        raise ValidationError(f"fine-tune dataset is empty: {path}")
    return records


def dump_record(messages: list[dict[str, str]]) -> str:
    return json.dumps({"messages": messages}, sort_keys=True, ensure_ascii=False)
