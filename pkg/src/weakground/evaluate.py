"""Corpus-level evaluation of trained models and reference rankings."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np
import torch

from .baselines import random_baseline
from .dataset_io import DatasetError
from .metrics import DEFAULT_CELLS, MetricsReport, collect_queries, oracle_rankings, top_n_ious
from .model import GroundingModel, make_batch
from .synth import SceneRecord

METHOD_NAMES = {"full": "ours", "mil_nce": "mil_nce", "mil_margin": "mil_margin"}


@torch.no_grad()
def rank_corpus(model: GroundingModel, corpus: Sequence[SceneRecord], batch_scenes: int = 16,
                teacher: bool = False) -> list[list[int]]:
    """One full proposal ranking per query, in :func:`collect_queries` order."""
    model.eval()
    out: list[list[int]] = []
    for start in range(0, len(corpus), batch_scenes):
        recs = [r for r in corpus[start:start + batch_scenes] if r.sentences]
        if not recs:
            continue
        batch = make_batch(recs, [list(range(len(r.sentences))) for r in recs], model.vocab.pad_id)
        ranking = model.teacher_rank(batch)[0] if teacher else model.rank(batch)
        out.extend(ranking.tolist())
    return out


def random_rankings(num_queries: int, num_proposals: int, seed: int) -> list[list[int]]:
    return [random_baseline(num_proposals, int(s))
            for s in np.random.SeedSequence(seed).generate_state(num_queries)]


def quick_recall(model: GroundingModel, corpus: Sequence[SceneRecord], n: int = 1,
                 m: float = 0.5) -> float:
    queries = collect_queries(corpus)
    rankings = rank_corpus(model, corpus)
    hits = sum(bool(top_n_ious(q.proposal_boxes[r[:n]], q.gt_box, n).max() > m)
               for q, r in zip(queries, rankings))
    return 100.0 * hits / max(len(queries), 1)


def check_compatible(model: GroundingModel, corpus: Sequence[SceneRecord]) -> None:
    """Raise ``DatasetError`` when the corpus cannot be fed to ``model``."""
    sizes = {len(r.proposals) for r in corpus}
    if sizes != {model.cfg.num_proposals}:
        raise DatasetError(f"model expects {model.cfg.num_proposals} proposals per scene, "
                           f"corpus has {sorted(sizes)}")
    top = max((max(s.tokens) for r in corpus for s in r.sentences), default=-1)
    if top >= len(model.vocab):
        raise DatasetError(f"corpus token id {top} is outside the model vocabulary")
    if corpus[0].proposals.attributes.shape[1] != model.attr_dim:
        raise DatasetError("corpus attribute width differs from the model's")


def evaluate_models(models: Mapping[str, GroundingModel], corpus: Sequence[SceneRecord],
                    seed: int = 0, config_hash: str = "", include_random: bool = True,
                    include_upper_bound: bool = True, cells=DEFAULT_CELLS,
                    teacher_rows: bool = False) -> MetricsReport:
    """Report rows for each named model plus the Random and Upper Bound references."""
    queries = collect_queries(corpus)
    report = MetricsReport()
    if include_upper_bound:
        report.add_method("upper_bound", queries, oracle_rankings(queries), cells, seed, config_hash)
    if include_random:
        m_p = len(corpus[0].proposals)
        report.add_method("random", queries, random_rankings(len(queries), m_p, seed), cells,
                          seed, config_hash)
    for name, model in models.items():
        check_compatible(model, corpus)
        report.add_method(name, queries, rank_corpus(model, corpus), cells, seed, config_hash)
        if teacher_rows and model.cfg.method == "full":
            report.add_method(name + "_teacher", queries, rank_corpus(model, corpus, teacher=True),
                              cells, seed, config_hash)
    return report


def evaluate(model: GroundingModel, corpus: Sequence[SceneRecord],
             baselines: Optional[Mapping[str, GroundingModel]] = None, seed: Optional[int] = None,
             cells=DEFAULT_CELLS) -> MetricsReport:
    seed = model.cfg.seed if seed is None else seed
    models = {METHOD_NAMES[model.cfg.method]: model, **(baselines or {})}
    return evaluate_models(models, corpus, seed, model.cfg.config_hash(), cells=cells)
