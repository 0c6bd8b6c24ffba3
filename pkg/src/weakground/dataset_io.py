"""JSON Lines corpus files and the vocabulary sidecar."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import AxisAlignedBox
from .synth import ProposalSet, Scene, SceneObject, SceneRecord, SentenceRecord
from .vocab import Vocabulary

SCHEMA_VERSION = 1


class DatasetError(ValueError):
    pass


def scene_record_to_dict(rec: SceneRecord) -> dict:
    p = rec.proposals
    return {
        "version": SCHEMA_VERSION,
        "scene_id": rec.scene.scene_id,
        "points_per_scene": rec.scene.points_per_scene,
        "objects": [{"id": o.object_id, "class": o.class_id, "center": list(o.box.center),
                     "size": list(o.box.size), "color": o.color_id} for o in rec.scene.objects],
        "sentences": [{"target": s.target_object_id, "tokens": s.tokens,
                       "keywords": s.keyword_positions, "text_class": s.text_class_id,
                       "split": s.split, "relation": s.relation, "anchors": s.anchor_ids}
                      for s in rec.sentences],
        "proposals": {"boxes": p.boxes.tolist(), "class_logits": p.class_logits.tolist(),
                      "objectness": p.objectness.tolist(), "appearance": p.appearance.tolist(),
                      "matched_gt": p.matched_gt_id},
    }


def scene_record_from_dict(data: dict) -> SceneRecord:
    if data.get("version") != SCHEMA_VERSION:
        raise DatasetError(f"unsupported schema version {data.get('version')!r} "
                           f"(expected {SCHEMA_VERSION})")
    objects = [SceneObject(int(o["id"]), int(o["class"]),
                           AxisAlignedBox(tuple(o["center"]), tuple(o["size"])), int(o["color"]))
               for o in data["objects"]]
    scene = Scene(data["scene_id"], objects, int(data.get("points_per_scene", 50000)))
    sentences = [SentenceRecord(int(s["target"]), [int(t) for t in s["tokens"]],
                                [int(k) for k in s["keywords"]], int(s["text_class"]),
                                s.get("relation", ""), [int(a) for a in s.get("anchors", [])],
                                s["split"])
                 for s in data["sentences"]]
    p = data["proposals"]
    boxes = np.asarray(p["boxes"], dtype=np.float64).reshape(-1, 6)
    m = len(boxes)
    proposals = ProposalSet(
        boxes=boxes,
        class_logits=np.asarray(p["class_logits"], dtype=np.float64).reshape(m, -1),
        objectness=np.asarray(p["objectness"], dtype=np.float64).reshape(m),
        appearance=np.asarray(p.get("appearance", np.zeros((m, 0))), dtype=np.float64).reshape(m, -1),
        matched_gt_id=list(p.get("matched_gt", [None] * m)),
    )
    return SceneRecord(scene, sentences, proposals)


def write_dataset(path: str | Path, corpus: Sequence[SceneRecord],
                  vocab: Vocabulary | None = None, meta: dict | None = None) -> None:
    """Write one scene per line. The vocabulary goes to ``<path>.vocab.json``
    and generator settings (class names etc.) to ``<path>.meta.json``."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in corpus:
            fh.write(json.dumps(scene_record_to_dict(rec)) + "\n")
    if vocab is not None:
        vocab_path(path).write_text(json.dumps(vocab.to_sidecar(), indent=1), encoding="utf-8")
    if meta is not None:
        meta_path(path).write_text(json.dumps(meta, indent=1), encoding="utf-8")


def read_dataset(path: str | Path) -> list[SceneRecord]:
    path = Path(path)
    corpus = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            try:
                corpus.append(scene_record_from_dict(data))
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: invalid record ({exc!r})") from exc
    return corpus


def vocab_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".vocab.json")


def read_vocabulary(path: str | Path) -> Vocabulary:
    return Vocabulary.from_sidecar(json.loads(Path(path).read_text(encoding="utf-8")))


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def read_meta(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
