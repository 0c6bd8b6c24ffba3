"""Per-scene JSON export of boxes, scores and NMS-filtered predictions."""

from __future__ import annotations

import torch

from .geometry import nms
from .model import GroundingModel, make_batch
from .synth import SceneRecord


def _box(arr) -> dict:
    return {"center": [float(x) for x in arr[:3]], "size": [float(x) for x in arr[3:]]}


@torch.no_grad()
def scene_view(model: GroundingModel, record: SceneRecord, nms_threshold: float = 0.25) -> dict:
    """Everything an external viewer needs to draw one scene and its queries."""
    props = record.proposals
    view = {
        "scene_id": record.scene.scene_id,
        "objects": [{"id": o.object_id, "class": model.object_classes[o.class_id],
                     "color": o.color_id, **_box(o.box.to_array())} for o in record.scene.objects],
        "proposals": [{"index": i, "objectness": float(props.objectness[i]), **_box(props.boxes[i])}
                      for i in range(len(props))],
        "queries": [],
    }
    if not record.sentences:
        return view
    batch = make_batch([record], [list(range(len(record.sentences)))], model.vocab.pad_id)
    scores = model.inference_scores(batch)
    boxes = [props.box(i) for i in range(len(props))]
    for sent, row in zip(record.sentences, scores.tolist()):
        kept = nms(boxes, row, nms_threshold)
        view["queries"].append({
            "text": " ".join(model.vocab.decode(sent.tokens)),
            "target": sent.target_object_id,
            "split": sent.split,
            "scores": row,
            "nms_kept": kept,
            "prediction": kept[0],
        })
    return view
