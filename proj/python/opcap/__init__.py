"""Change captioning with a scene-graph auxiliary head."""

import json

from ._opcap import (
    Captioner,
    ConfigError,
    Error,
    LoadError,
    ShapeError,
    TrainingError,
    bleu,
    cider,
    corpus_bleu,
    normalize_caption,
    render_sample,
    rouge_l,
    run_cli,
)
from . import _opcap

__all__ = [
    "Captioner",
    "ConfigError",
    "Error",
    "LoadError",
    "ShapeError",
    "TrainingError",
    "bleu",
    "cider",
    "corpus_bleu",
    "default_config",
    "normalize_caption",
    "render_sample",
    "resolve_config",
    "rouge_l",
    "run_cli",
]


def default_config():
    """The built-in experiment configuration as a dict."""
    return json.loads(_opcap.default_config_json())


def resolve_config(partial):
    """Merges a partial config dict onto the defaults and validates it."""
    return json.loads(_opcap.resolve_config_json(json.dumps(partial)))
