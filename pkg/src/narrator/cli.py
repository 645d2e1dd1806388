"""Operator command surface: verbalize, score, iterate, evaluate, export-distill."""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from pathlib import Path

import click

from . import evaluation, prompts
from .backend import AuditLog
from .config import (
    RunConfig,
    iteration_config,
    load_config,
    make_backend,
    resolved_dict,
    scoring_context,
)
from .core import load_corpus, load_instance_file
from .errors import NarratorError
from .iteration import IterationState, export_finetune_dataset, load_state, run_loop, save_state
from .measures import InstanceScorer
from .verbalize import build_bfs_tree, prune, render_paragraph

logger = logging.getLogger(__name__)


def _write_resolved_config(config: RunConfig) -> None:
    config.output_dir.mkdir(parents=True, exist_ok=True)
    path = config.output_dir / "resolved_config.json"
    path.write_text(
        json.dumps(resolved_dict(config), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def _load_config(ctx: click.Context) -> RunConfig:
    params = ctx.obj
    overrides = {}
    if params["backend"] is not None:
        overrides["backend"] = params["backend"]
    if params["seed"] is not None:
        overrides["seed"] = params["seed"]
    return load_config(params["config"], overrides)


def _corpus_files(config: RunConfig) -> list[Path]:
    return sorted(config.corpus_dir.glob("*.json"))


@click.group()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True), help="Run configuration file.")
@click.option("--backend", type=click.Choice(["mock", "http"]), default=None, help="Override backend kind.")
@click.option("--seed", type=int, default=None, help="Override mock backend seed.")
@click.option("--dry-run", is_flag=True, help="Validate config, print the resolved plan, make no backend calls.")
@click.option("-v", "--verbose", is_flag=True, help="Verbose logging.")
@click.pass_context
def main(ctx: click.Context, config_path: str, backend: str | None, seed: int | None, dry_run: bool, verbose: bool) -> None:
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config": config_path, "backend": backend, "seed": seed, "dry_run": dry_run}


def _dry_run_exit(ctx: click.Context, config: RunConfig, plan: str) -> bool:
    if ctx.obj["dry_run"]:
        click.echo(json.dumps(resolved_dict(config), sort_keys=True, indent=2))
        click.echo(plan)
        return True
    return False


@main.command()
@click.argument("instance_files", nargs=-1, type=click.Path())
@click.option("--scores", "scores_mode", type=click.Choice(["both", "with", "without"]), default="both")
@click.pass_context
def verbalize(ctx: click.Context, instance_files: tuple[str, ...], scores_mode: str) -> None:
    """Render saliency paragraphs for instance files."""
    config = _load_config(ctx)
    if _dry_run_exit(ctx, config, f"plan: verbalize {len(instance_files)} file(s), scores={scores_mode}"):
        return
    _write_resolved_config(config)
    failures = []
    for file in instance_files:
        try:
            instance = load_instance_file(file)
            tree = prune(build_bfs_tree(instance, config.hop_k), instance, config.prune_threshold)
            if scores_mode in ("both", "with"):
                text = render_paragraph(tree, instance, with_scores=True).text
                (config.output_dir / f"{instance.instance_id}.saliency.txt").write_text(text + "\n", encoding="utf-8")
            if scores_mode in ("both", "without"):
                text = render_paragraph(tree, instance, with_scores=False).text
                (config.output_dir / f"{instance.instance_id}.plain.txt").write_text(text + "\n", encoding="utf-8")
        except NarratorError as exc:
            failures.append((file, str(exc)))
    if failures:
        for file, message in failures:
            click.echo(f"error: {file}: {message}", err=True)
        raise SystemExit(1)


@main.command()
@click.argument("instance_files", nargs=-1, type=click.Path(exists=True))
@click.option("--explanations-dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory with one <instance_id>.txt explanation per instance.")
@click.pass_context
def score(ctx: click.Context, instance_files: tuple[str, ...], explanations_dir: str) -> None:
    """Score (instance, explanation) pairs; output is resumable JSONL."""
    config = _load_config(ctx)
    if _dry_run_exit(ctx, config, f"plan: score {len(instance_files)} pair(s)"):
        return
    _write_resolved_config(config)

    pairs = []
    for file in instance_files:
        instance = load_instance_file(file)
        explanation_path = Path(explanations_dir) / f"{instance.instance_id}.txt"
        if not explanation_path.is_file():
            raise click.UsageError(f"missing explanation file {explanation_path}")
        pairs.append((instance, explanation_path.read_text(encoding="utf-8").strip()))

    out_path = config.output_dir / "scores.jsonl"
    done: set[str] = set()
    if out_path.exists():
        for line in out_path.read_text(encoding="utf-8").splitlines():
            done.add(json.loads(line)["instance_id"])

    audit = AuditLog(config.output_dir / "audit.jsonl")
    backend = make_backend(config, audit)
    ctx_score = scoring_context(config)
    template_sha = prompts.templates_digest()
    with out_path.open("a", encoding="utf-8") as out:
        for instance, explanation in pairs:
            if instance.instance_id in done:
                continue
            triple = InstanceScorer(backend, instance, ctx_score).score_all(explanation)
            record = {
                "instance_id": instance.instance_id,
                "f_s": triple.f_s,
                "f_f": triple.f_f,
                "f_b": triple.f_b,
                "explanation_sha256": hashlib.sha256(explanation.encode("utf-8")).hexdigest(),
                "template_sha256": template_sha,
            }
            out.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            out.flush()


@main.command()
@click.option("--resume", is_flag=True, help="Resume from state file and pending checkpoint.")
@click.option("--iterations", "iterations_override", type=int, default=None, help="Override iteration count.")
@click.pass_context
def iterate(ctx: click.Context, resume: bool, iterations_override: int | None) -> None:
    """Run the expert-iteration loop over the corpus."""
    config = _load_config(ctx)
    total = iterations_override if iterations_override is not None else config.iterations
    if _dry_run_exit(ctx, config, f"plan: iterate {total} iteration(s) over corpus {config.corpus_dir}"):
        return
    _write_resolved_config(config)

    corpus = load_corpus(_corpus_files(config))
    if not corpus:
        raise click.UsageError(f"no instance files in {config.corpus_dir}")

    if resume and config.state_file.exists():
        state = load_state(config.state_file)
    else:
        state = IterationState.initial(config.generation_model)
    remaining = total - state.iteration
    if remaining <= 0:
        click.echo(f"state already at iteration {state.iteration}; nothing to do")
        return

    audit = AuditLog(config.output_dir / "audit.jsonl")
    backend = make_backend(config, audit)
    state = run_loop(
        backend,
        corpus,
        state,
        iteration_config(config),
        scoring_context(config),
        config.output_dir,
        iterations=remaining,
        state_file=config.state_file,
        resume=resume,
    )
    save_state(state, config.state_file)
    for i, stats in enumerate(state.score_stats):
        click.echo(
            f"iteration {i}: mean f_s={stats.f_s:.4f} f_f={stats.f_f:.4f} f_b={stats.f_b:.4f} "
            f"({stats.selected}/{stats.candidates} selected)"
        )


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path(exists=True),
              help="JSONL of {instance_id, method, explanation}.")
@click.pass_context
def evaluate(ctx: click.Context, records_path: str) -> None:
    """Compute corpus metrics and emit report files."""
    config = _load_config(ctx)
    if _dry_run_exit(ctx, config, f"plan: evaluate records from {records_path}"):
        return
    _write_resolved_config(config)

    corpus = load_corpus(_corpus_files(config))
    records = evaluation.load_records(records_path)
    audit = AuditLog(config.output_dir / "audit.jsonl")
    backend = make_backend(config, audit)
    report = evaluation.compute_report(backend, corpus, records, scoring_context(config))
    metrics_path, table_path = evaluation.emit_report(report, config.output_dir)
    click.echo(table_path.read_text(encoding="utf-8"), nl=False)
    click.echo(f"wrote {metrics_path} and {table_path}")


@main.command("export-distill")
@click.option("--output", "output_path", type=click.Path(), default=None,
              help="Destination file (default: <output_dir>/distill.jsonl).")
@click.pass_context
def export_distill(ctx: click.Context, output_path: str | None) -> None:
    """Export the accumulated selections as a distillation dataset."""
    config = _load_config(ctx)
    destination = Path(output_path) if output_path else config.output_dir / "distill.jsonl"
    if _dry_run_exit(ctx, config, f"plan: export distillation dataset to {destination}"):
        return
    _write_resolved_config(config)

    if not config.state_file.exists():
        raise click.UsageError(f"no state file at {config.state_file}; run iterate first")
    state = load_state(config.state_file)
    if not state.accumulated:
        raise click.UsageError("state has no accumulated candidates to export")
    corpus = load_corpus(_corpus_files(config))
    export_finetune_dataset(state.accumulated, corpus, iteration_config(config), "distillation", destination)
    click.echo(f"wrote {len(state.accumulated)} records to {destination}")


if __name__ == "__main__":
    main(prog_name="narrator")
