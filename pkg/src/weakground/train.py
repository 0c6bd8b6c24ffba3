"""Multi-task training loop with cosine-annealed AdamW."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .baselines import mil_margin_loss, mil_nce_loss, proposal_sentence_scores, scene_sentence_scores
from .coarse import feature_match_loss, select_top_k
from .config import TrainConfig
from .distill import distill_loss, pseudo_labels, rewards_from_ranks
from .encoders import text_cls_loss
from .evaluate import quick_recall
from .fine import rank_candidates
from .model import Batch, GroundingModel, make_batch, mask_batch, save_checkpoint
from .synth import SceneRecord
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: GroundingModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("nan")


def cosine_lr(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


def split_train_val(corpus: Sequence[SceneRecord], fraction: float):
    """Hold out scenes by a stable hash of their id."""
    train, val = [], []
    for rec in corpus:
        bucket = int(hashlib.md5(rec.scene.scene_id.encode("utf-8")).hexdigest(), 16) % 1000
        (val if bucket < fraction * 1000 else train).append(rec)
    if len(train) < 2:
        return list(corpus), []
    return train, val


def total_loss(components: dict, cfg: TrainConfig, epoch: int):
    """Weighted sum of the loss components present for this step.

    Before the reconstruction start epoch the reconstruction and distillation
    terms (whose pseudo labels come from reconstruction ranks) get weight 0.
    Returns ``(total, breakdown)``; raises :class:`DivergenceError` on NaN.
    """
    weights = {"distill": 1.0, "cls": cfg.lambda_cls, "match": cfg.lambda_match,
               "recon": cfg.lambda_recon, "mil": 1.0}
    if cfg.use_recon and not cfg.recon_active(epoch):
        weights["distill"] = weights["recon"] = 0.0
    breakdown = {}
    total = None
    for name, value in components.items():
        if value is None:
            continue
        value = torch.as_tensor(value)
        v = float(value.detach())
        breakdown[name] = v
        if math.isnan(v):
            raise DivergenceError(f"NaN in loss component {name!r}: {json.dumps(breakdown)}")
        w = weights[name]
        if w == 0.0:
            continue
        total = w * value if total is None else total + w * value
    if total is None:
        total = torch.zeros(())
    breakdown["total"] = float(total.detach())
    return total, breakdown


def training_components(model: GroundingModel, batch: Batch, cfg: TrainConfig, epoch: int,
                        rng: np.random.Generator) -> dict:
    proposals, pooled, _ = model.encode(batch)
    if cfg.method != "full":
        pair = proposal_sentence_scores(proposals, pooled, model.feature_scale)
        if cfg.method == "mil_nce":
            return {"mil": mil_nce_loss(pair, batch.query_scene)}
        scores = scene_sentence_scores(pair, cfg.mil_pooling)
        return {"mil": mil_margin_loss(scores, batch.query_scene, cfg.mil_margin)}

    comps: dict = {}
    text_logits = model.text_classifier(pooled)
    if cfg.use_cls:
        comps["cls"] = text_cls_loss(text_logits, batch.text_class)
    if cfg.use_match:
        comps["match"] = feature_match_loss(proposals, pooled, batch.query_scene, model.feature_scale)
    with torch.no_grad():
        sim = model.similarity(batch, proposals, pooled, text_logits)
    k = cfg.num_candidates
    cand = select_top_k(sim.values, k)

    rewards = None
    if cfg.use_recon and cfg.recon_active(epoch):
        tokens, masked = mask_batch(batch, cfg.mask_ratio, rng, model.vocab.mask_id)
        per_cand = model.candidate_losses(batch, proposals, cand.indices, tokens, masked)
        ranks = rank_candidates(per_cand)
        rewards = rewards_from_ranks(ranks, cfg.reward_squared)
        if cfg.ignore_active(epoch) and k // 2 > 0:
            keep = ranks < k - k // 2
            per_cand = torch.where(keep, per_cand, torch.zeros_like(per_cand))
        comps["recon"] = per_cand.sum(-1).mean()
    elif not cfg.use_recon:
        rewards = torch.ones(cand.indices.shape, dtype=torch.float64)
    if rewards is not None:
        d = pseudo_labels(rewards.to(torch.float32), cand.indices, batch.attributes.shape[1],
                          cfg.distill_temperature)
        comps["distill"] = distill_loss(model.student_scores(batch), d)
    return comps


def iterate_batches(records: Sequence[SceneRecord], cfg: TrainConfig, rng: np.random.Generator,
                    pad_id: int, cache: dict, shuffle: bool = True):
    order = rng.permutation(len(records)) if shuffle else np.arange(len(records))
    chunks = [order[i:i + cfg.batch_scenes] for i in range(0, len(order), cfg.batch_scenes)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    for chunk in chunks:
        recs = [records[i] for i in chunk]
        chosen = []
        for rec in recs:
            n = len(rec.sentences)
            if shuffle and n > cfg.queries_per_scene:
                chosen.append(sorted(rng.choice(n, cfg.queries_per_scene, replace=False).tolist()))
            else:
                chosen.append(list(range(min(n, cfg.queries_per_scene) if shuffle else n)))
        keep = [i for i, c in enumerate(chosen) if c]
        if keep:
            yield make_batch([recs[i] for i in keep], [chosen[i] for i in keep], pad_id, cache=cache)


def build_model(cfg: TrainConfig, vocab: Vocabulary, object_classes: Sequence[str],
                text_classes: Sequence[str], corpus: Sequence[SceneRecord]) -> GroundingModel:
    torch.manual_seed(cfg.seed)
    attr_dim = corpus[0].proposals.attributes.shape[1]
    return GroundingModel(cfg, vocab, object_classes, text_classes, attr_dim)


def train(corpus: Sequence[SceneRecord], cfg: TrainConfig, vocab: Vocabulary,
          object_classes: Sequence[str], text_classes: Sequence[str],
          out_dir: Optional[str | Path] = None) -> TrainResult:
    """Train on ``corpus`` and keep the best-by-validation weights.

    Deterministic given ``(corpus, cfg)``. With ``out_dir`` the best and last
    checkpoints plus ``train_log.json`` are written there.
    """
    if cfg.num_proposals != len(corpus[0].proposals):
        raise ValueError("config num_proposals does not match the corpus")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    train_recs, val_recs = split_train_val(corpus, cfg.val_fraction)
    model = build_model(cfg, vocab, object_classes, text_classes, corpus)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda e: cosine_lr(cfg, e) / cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    cache: dict = {}
    result = TrainResult(model)
    best_state = copy.deepcopy(model.state_dict())
    last_good = best_state

    for epoch in range(cfg.epochs):
        model.train()
        lr = optimizer.param_groups[0]["lr"]
        sums: dict[str, float] = {}
        steps = 0
        for batch in iterate_batches(train_recs, cfg, rng, vocab.pad_id, cache):
            comps = training_components(model, batch, cfg, epoch, rng)
            try:
                total, breakdown = total_loss(comps, cfg, epoch)
                if breakdown["total"] > DIVERGENCE_LIMIT:
                    raise DivergenceError(f"loss exploded: {json.dumps(breakdown)}")
            except DivergenceError:
                if out is not None:
                    model.load_state_dict(last_good)
                    save_checkpoint(out / "last_good.ckpt", model)
                raise
            optimizer.zero_grad()
            if total.requires_grad:
                total.backward()
                optimizer.step()
            for k_, v in breakdown.items():
                sums[k_] = sums.get(k_, 0.0) + v
            steps += 1
        scheduler.step()
        last_good = copy.deepcopy(model.state_dict())
        model.eval()
        val = quick_recall(model, val_recs) if val_recs else float("nan")
        entry = {"epoch": epoch, "lr": lr, "val_r1_iou50": val,
                 **{k_: v / max(steps, 1) for k_, v in sums.items()}}
        result.history.append(entry)
        logger.info("epoch %d %s", epoch, json.dumps(entry))
        if not val_recs or (val >= result.best_val if not math.isnan(result.best_val) else True):
            result.best_val, result.best_epoch = val, epoch
            best_state = last_good
    model.load_state_dict(best_state)
    model.eval()
    if out is not None:
        save_checkpoint(out / "best.ckpt", model, {"best_epoch": result.best_epoch})
        (out / "train_log.json").write_text(json.dumps(result.history, indent=1), encoding="utf-8")
    return result
