"""Standalone commands: attribute instance graphs, synthesize corpora."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .attribute import AttributionConfig, attribute_file
from .model import AdapterError, load_checkpoint, random_checkpoint
from .synthesize import ShapeParams, synthesize


@click.group()
def main() -> None:
    """Saliency adapter for the narrator interchange format."""


@main.command()
@click.argument("input_files", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--method", type=click.Choice(["input_x_grad", "plain_gradient"]), default="input_x_grad")
@click.option("--reduction", type=click.Choice(["abs_sum", "l2"]), default="abs_sum")
@click.option("--hop-k", type=int, default=2)
def attribute(input_files, checkpoint, out_dir, method, reduction, hop_k) -> None:
    """Compute saliency for graph files and write interchange instances."""
    config = AttributionConfig(method=method, reduction=reduction, hop_k=hop_k)
    model = load_checkpoint(checkpoint)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for file in input_files:
        try:
            written = attribute_file(model, file, out / Path(file).name, config)
            click.echo(f"wrote {written}")
        except AdapterError as exc:
            failures += 1
            click.echo(f"error: {file}: {exc}", err=True)
    if failures:
        sys.exit(1)


@main.command()
@click.option("--seed", type=int, default=0)
@click.option("--count", type=int, default=10)
@click.option("--nodes", type=int, default=5)
@click.option("--tokens", "tokens_per_node", type=int, default=6)
@click.option("--planted-fraction", type=float, default=0.1)
@click.option("--labels", "n_labels", type=int, default=3)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def synthesize_cmd(seed, count, nodes, tokens_per_node, planted_fraction, n_labels, out_dir) -> None:
    """Generate a deterministic synthetic corpus with planted saliency."""
    params = ShapeParams(
        count=count,
        nodes=nodes,
        tokens_per_node=tokens_per_node,
        planted_fraction=planted_fraction,
        n_labels=n_labels,
    )
    paths = synthesize(seed, params, out_dir)
    click.echo(f"wrote {len(paths)} instances to {out_dir}")


main.add_command(synthesize_cmd, name="synthesize")


@main.command("init-checkpoint")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0)
@click.option("--labels", "labels_csv", default="class0,class1,class2")
@click.option("--embed-dim", type=int, default=16)
@click.option("--hidden-dim", type=int, default=16)
@click.option("--max-tokens", type=int, default=512)
def init_checkpoint(out_dir, seed, labels_csv, embed_dim, hidden_dim, max_tokens) -> None:
    """Create a randomly initialized demo checkpoint."""
    labels = tuple(name.strip() for name in labels_csv.split(",") if name.strip())
    path = random_checkpoint(
        out_dir,
        labels=labels,
        seed=seed,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        max_tokens=max_tokens,
    )
    click.echo(f"wrote checkpoint to {path}")


if __name__ == "__main__":
    main(prog_name="saliency-adapter")
