"""Dynamic ensemble of low-fidelity experts for ranking neural architectures."""

import json

from ._dynens import (
    BenchmarkError,
    Model,
    NonFiniteGradient,
    SearchError,
    Table,
    cli,
    fuse,
    gen_synthetic,
    hinge_ranking_loss,
    kendall_tau,
    load_model,
    load_table,
    softmax,
    table_from_jsonl,
    topk,
)
from . import _dynens

__all__ = [
    "BenchmarkError",
    "Model",
    "NonFiniteGradient",
    "SearchError",
    "Table",
    "cli",
    "fuse",
    "gen_synthetic",
    "hinge_ranking_loss",
    "kendall_tau",
    "load_model",
    "load_table",
    "run_search",
    "softmax",
    "table_from_jsonl",
    "topk",
    "train",
]


def train(table, **config):
    """Train one predictor; keys follow the train config JSON (mode, seed,
    gt_fraction, epochs_pretrain, ...). Returns (model, report dict)."""
    model, report = _dynens._train(table, json.dumps(config))
    return model, json.loads(report)


def run_search(table, mode="dynamic", train=None, **config):
    """Budgeted search; keys follow the search config JSON (n0, tp, np, m,
    k, seed, flops_limit, ...), with training options under `train`.
    Returns one dict per ground-truth query."""
    if train is not None:
        config["train"] = train
    return _dynens._run_search(table, mode, json.dumps(config))
