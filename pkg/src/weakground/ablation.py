"""Loss-component ablation: train four variants and report them next to Random."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

from .config import TrainConfig
from .evaluate import random_rankings, rank_corpus
from .metrics import DEFAULT_CELLS, MetricsReport, collect_queries
from .model import GroundingModel
from .synth import SceneRecord
from .train import train
from .vocab import Vocabulary

ABLATION_ROWS = {
    "match_only": dict(use_cls=False, use_match=True, use_recon=False),
    "cls_only": dict(use_cls=True, use_match=False, use_recon=False),
    "cls_match": dict(use_cls=True, use_match=True, use_recon=False),
    "cls_match_recon": dict(use_cls=True, use_match=True, use_recon=True),
}


def ablation_config(base: TrainConfig, row: str) -> TrainConfig:
    return base.replace(method="full", **ABLATION_ROWS[row])


def run_ablation(corpus: Sequence[SceneRecord], base: TrainConfig, vocab: Vocabulary,
                 object_classes: Sequence[str], text_classes: Sequence[str],
                 eval_corpus: Optional[Sequence[SceneRecord]] = None, cells=DEFAULT_CELLS,
                 trained: Optional[Mapping[str, GroundingModel]] = None) -> MetricsReport:
    """Train each ablation row on ``corpus`` and evaluate on ``eval_corpus``
    (defaults to ``corpus``).

    Rows without reconstruction give every selected candidate a reward of 1.
    ``trained`` lets callers pass models already trained with the matching
    row config so they are not retrained.
    """
    eval_corpus = corpus if eval_corpus is None else eval_corpus
    queries = collect_queries(eval_corpus)
    report = MetricsReport()
    trained = dict(trained or {})
    for row in ABLATION_ROWS:
        cfg = ablation_config(base, row)
        model = trained.get(row)
        if model is None:
            model = train(corpus, cfg, vocab, object_classes, text_classes).model
        elif model.cfg.config_hash() != cfg.config_hash():
            raise ValueError(f"supplied model for {row!r} was trained with a different config")
        report.add_method(row, queries, rank_corpus(model, eval_corpus), cells, base.seed,
                          base.config_hash())
    m_p = len(eval_corpus[0].proposals)
    report.add_method("random", queries, random_rankings(len(queries), m_p, base.seed), cells,
                      base.seed, base.config_hash())
    return report
