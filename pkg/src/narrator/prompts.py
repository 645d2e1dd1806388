"""Versioned prompt templates for scoring and candidate generation.

Scoring prompts (mask-filling and label classification) use fixed section
headers so the deterministic mock backend can locate the explanation block
and so the no-explanation variant differs from the conditioned variant by
exactly one section. `templates_digest()` fingerprints all template text;
score logs record it so results stay attributable to a template version.
"""

from __future__ import annotations

import hashlib
import re

MASK_FILL_HEADER = "Fill in the masked tokens of the document."
CLASSIFY_HEADER = "Choose the single best label for the prediction."

_EXPLANATION_SECTION = "### Explanation"
_MASK_TAIL_SECTION = "### Masked tokens in order"
_LABEL_TAIL_SECTION = "### Label"


def mask_fill_prompt(masked_document: str, explanation: str | None = None) -> str:
    parts = [MASK_FILL_HEADER, "", "### Document", masked_document]
    if explanation is not None:
        parts += ["", _EXPLANATION_SECTION, explanation]
    parts += ["", _MASK_TAIL_SECTION, ""]
    return "\n".join(parts)


def classification_prompt(label_set: tuple[str, ...], explanation: str | None = None) -> str:
    parts = [CLASSIFY_HEADER, "", "### Labels", ", ".join(label_set)]
    if explanation is not None:
        parts += ["", _EXPLANATION_SECTION, explanation]
    parts += ["", _LABEL_TAIL_SECTION, ""]
    return "\n".join(parts)


_STRIP_RE = re.compile(
    rf"\n{re.escape(_EXPLANATION_SECTION)}\n.*?\n({re.escape(_MASK_TAIL_SECTION)}|{re.escape(_LABEL_TAIL_SECTION)})\n",
    re.DOTALL,
)
_EXTRACT_RE = re.compile(
    rf"\n{re.escape(_EXPLANATION_SECTION)}\n(.*?)\n\n(?:{re.escape(_MASK_TAIL_SECTION)}|{re.escape(_LABEL_TAIL_SECTION)})\n",
    re.DOTALL,
)


def strip_explanation_section(prompt: str) -> str:
    """Scoring prompt with its explanation block removed.

    The conditioned and unconditioned prompt variants canonicalize to the
    same string, which is what lets the mock backend produce a PMI of
    exactly zero for explanation-independent conditionals.
    """
    return _STRIP_RE.sub(lambda m: f"\n{m.group(1)}\n", prompt)


def extract_explanation_section(prompt: str) -> str | None:
    match = _EXTRACT_RE.search(prompt)
    return match.group(1).strip() if match else None


# ---------------------------------------------------------------------------
# Candidate-generation templates (one-shot, with and without saliency scores)
# ---------------------------------------------------------------------------

_EXEMPLAR_LABEL = "Renewable Energy"
_EXEMPLAR_TOKENS: list[tuple[str, list[tuple[str, float]], str]] = [
    (
        "ROOT",
        [
            ("title", 3.10), ("solar", 8.42), ("panel", 7.96), ("efficiency", 6.88),
            ("gains", 2.11), ("abstract", 2.95), ("improved", 3.33), ("cell", 5.47),
            ("coatings", 4.90),
        ],
        "",
    ),
    (
        "Node-1",
        [
            ("title", 2.05), ("grid", 6.12), ("storage", 5.73), ("batteries", 4.41),
            ("abstract", 1.87), ("load", 2.66), ("balancing", 2.31),
        ],
        "",
    ),
    (
        "Node-2",
        [
            ("title", 1.44), ("wind", 3.05), ("turbine", 2.88), ("siting", 1.62),
            ("abstract", 1.20), ("coastal", 1.71), ("surveys", 1.10),
        ],
        " [See Node-1.]",
    ),
]

_EXEMPLAR_REASONING = """\
0. Graph Structure Reconstruction:

The ROOT node (first line) is the target for classification.
Single-digit indexed nodes are direct neighbors of ROOT.
The reference sentence in Node-2 records an extra edge to Node-1.

1. Word-Level Evaluation:
Keywords such as 'solar', 'panel', and 'storage' are strongly tied to the label 'Renewable Energy' and carry the highest importance.

2. Graph-Level Aggregation:
Both neighbors discuss energy infrastructure, reinforcing the classification of ROOT."""

_EXEMPLAR_EXPLANATION = """\
The classification of ROOT node into the "Renewable Energy" category can be explained as follows:

ROOT: High-importance keywords like "solar", "panel", and "efficiency" show the paper centers on renewable generation technology.
  - Node-1: This neighbor covers grid "storage" and "batteries", supporting infrastructure for renewables, which reinforces the classification.
  - Node-2: Wind "turbine" siting is a further renewable topic, and its link back to Node-1 ties the neighborhood together.

In summary, the dominant renewable-energy vocabulary in ROOT and its neighbors supports the classification."""


def _exemplar_graph(with_scores: bool) -> str:
    lines = []
    for header, tokens, suffix in _EXEMPLAR_TOKENS:
        if with_scores:
            body = " ".join(f"{tok}({score:.2f})" for tok, score in tokens)
        else:
            body = " ".join(tok for tok, _ in tokens)
        lines.append(f"{header}: {body}{suffix}")
    return "\n".join(lines)


_PS_WITH_SCORES = """\
(P.S.: 1. make sure to complete both the reasoning section and then Free-Text Explanation section with the same structure as exemplified above.
2. make good use of the importance (saliency) score behind each word as your guidance to generate the better explanation. However, it is not necessary to directly quote the saliency score.
3. use the whole graph structure you constructed during reasoning for the format of the explanation. Indents and node indexes are necessary, which represent the hierarchy of the graph.)"""

_PS_WITHOUT_SCORES = """\
(P.S.: 1. make sure to complete both the reasoning section and then Free-Text Explanation section with the same structure as exemplified above.
2. use the whole graph structure you constructed during reasoning for the format of the explanation. Indents and node indexes are necessary, which represent the hierarchy of the graph.)"""


def generation_prompt(document: str, label: str, label_set: tuple[str, ...], with_scores: bool) -> str:
    categories = "[" + ", ".join(f"'{name}'" for name in label_set) + "]"
    if with_scores:
        intro = (
            "The following verbalized graph contains important words in the text of each node. "
            "These words (each with corresponding importance score in the bracket) contribute to "
            f"the classification of Node 0 into one of the {len(label_set)} possible categories ({categories})."
        )
        postscript = _PS_WITH_SCORES
    else:
        intro = (
            "The following verbalized graph contains important words in the text of each node. "
            f"These words contribute to the classification of Node 0 into one of the {len(label_set)} "
            f"possible categories ({categories})."
        )
        postscript = _PS_WITHOUT_SCORES
    guidance = (
        "Generate a concise, human-readable explanation that justifies the classification result of "
        "Node 0 by identifying and explaining the relevant inner-node features (i.e., keywords) and "
        "inter-node relationships (i.e., graph structure). The explanation should focus on how these "
        "factors contribute to the classification label."
    )
    return "\n".join(
        [
            intro,
            guidance,
            "",
            "## Example",
            "",
            "### Verbalized Graph",
            "<verbalized-graph>",
            _exemplar_graph(with_scores),
            "</verbalized-graph>",
            "",
            "### Classification Label",
            _EXEMPLAR_LABEL,
            "",
            "### Reasoning",
            _EXEMPLAR_REASONING,
            "",
            "### Free-Text Explanation",
            _EXEMPLAR_EXPLANATION,
            "",
            "## Task",
            "",
            "### Verbalized Graph",
            "<verbalized-graph>",
            document,
            "</verbalized-graph>",
            "",
            "### Classification Label",
            label,
            "",
            "### Reasoning",
            "",
            "### Free-Text Explanation",
            "",
            postscript,
        ]
    )


_TASK_DOC_RE = re.compile(r"<verbalized-graph>\n(.*?)\n</verbalized-graph>", re.DOTALL)
_TASK_LABEL_RE = re.compile(r"### Classification Label\n(.*?)\n")


def extract_task_document(prompt: str) -> str | None:
    """Document block of the task section (the last verbalized graph)."""
    blocks = _TASK_DOC_RE.findall(prompt)
    return blocks[-1] if blocks else None


def extract_task_label(prompt: str) -> str | None:
    labels = _TASK_LABEL_RE.findall(prompt)
    return labels[-1] if labels else None


def templates_digest() -> str:
    corpus = "\x1e".join(
        [
            mask_fill_prompt("<doc>", "<expl>"),
            mask_fill_prompt("<doc>"),
            classification_prompt(("<a>", "<b>"), "<expl>"),
            classification_prompt(("<a>", "<b>")),
            generation_prompt("<doc>", "<label>", ("<a>", "<b>"), with_scores=True),
            generation_prompt("<doc>", "<label>", ("<a>", "<b>"), with_scores=False),
        ]
    )
    return hashlib.sha256(corpus.encode("utf-8")).hexdigest()
