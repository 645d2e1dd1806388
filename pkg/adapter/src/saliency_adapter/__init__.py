"""Gradient saliency annotations and synthetic corpora for narrator instances."""

from .attribute import AttributionConfig, GraphInput, attribute, attribute_file, parse_graph_document
from .model import (
    AdapterError,
    CheckpointConfig,
    TagClassifier,
    load_checkpoint,
    random_checkpoint,
    save_checkpoint,
)
from .synthesize import ShapeParams, synthesize

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "AttributionConfig",
    "CheckpointConfig",
    "GraphInput",
    "ShapeParams",
    "TagClassifier",
    "attribute",
    "attribute_file",
    "load_checkpoint",
    "parse_graph_document",
    "random_checkpoint",
    "save_checkpoint",
    "synthesize",
]
