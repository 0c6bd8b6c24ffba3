"""Synthetic scenes, template sentences and a box-level detector simulator.

Everything here is a pure function of ``(config, seed)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import AxisAlignedBox, geometric_attributes, iou_matrix
from .vocab import Vocabulary, build_vocabulary

RELATIONS = ("left", "right", "front", "behind", "nearest", "farthest", "between")
RELATION_WORDS = {
    "left": "left-of",
    "right": "right-of",
    "front": "in-front-of",
    "behind": "behind",
    "nearest": "nearest-to",
    "farthest": "farthest-from",
    "between": "between",
}


class GenerationError(RuntimeError):
    pass


@dataclass
class GenConfig:
    object_classes: list[str] = field(
        default_factory=lambda: ["seat", "desk", "cabinet", "bed", "couch", "lamp"])
    text_classes: list[str] = field(
        default_factory=lambda: ["chair", "table", "cabinet", "bed", "sofa", "lamp"])
    # nominal (sx, sy, sz) per class index
    class_sizes: list[list[float]] = field(default_factory=lambda: [
        [0.5, 0.5, 0.9], [1.4, 0.8, 0.75], [0.9, 0.5, 1.2],
        [2.0, 1.5, 0.6], [1.8, 0.9, 0.8], [0.35, 0.35, 1.5]])
    colors: list[str] = field(
        default_factory=lambda: ["red", "blue", "green", "yellow", "black", "white"])
    room_size: list[float] = field(default_factory=lambda: [7.0, 7.0, 3.0])
    min_objects: int = 6
    max_objects: int = 12
    size_jitter: float = 0.15
    max_overlap_iou: float = 0.05
    relation_margin: float = 0.3
    sentences_per_scene: int = 8
    points_per_scene: int = 50000
    max_attempts: int = 200

    def __post_init__(self):
        if len(self.object_classes) < 4:
            raise ValueError("need at least 4 object classes")
        if len(self.text_classes) != len(self.object_classes):
            raise ValueError("object and text class lists must align index-wise")
        if len(self.class_sizes) != len(self.object_classes):
            raise ValueError("one nominal size per class required")
        if len(self.colors) < 3:
            raise ValueError("need at least 3 colors")
        if not 2 <= self.min_objects <= self.max_objects:
            raise ValueError("object-count range must satisfy 2 <= min <= max")
        if len(self.room_size) != 3 or min(self.room_size) <= 0:
            raise ValueError("room_size must be three positive extents")

    @property
    def room_scale(self) -> float:
        return float(max(self.room_size[:2]))

    def vocabulary(self) -> Vocabulary:
        return build_vocabulary(self.colors, self.text_classes,
                                [RELATION_WORDS[r] for r in RELATIONS])

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        return _strict_init(cls, data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DetectorSimConfig:
    num_proposals: int = 32
    # jitter standard deviations, as fractions of each object's own extent
    center_noise: float = 0.05
    size_noise: float = 0.05
    label_noise: float = 0.1
    num_distractors: int = 4
    logit_peak: float = 4.0
    logit_noise: float = 1.0
    appearance_dim: int = 8
    appearance_noise: float = 0.1

    def __post_init__(self):
        if self.center_noise < 0 or self.size_noise < 0:
            raise ValueError("noise levels must be non-negative")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise must lie in [0, 1)")
        if self.num_distractors < 0:
            raise ValueError("num_distractors must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorSimConfig":
        return _strict_init(cls, data)

    def to_dict(self) -> dict:
        return asdict(self)


def _strict_init(cls, data: dict):
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass(frozen=True)
class SceneObject:
    object_id: int
    class_id: int
    box: AxisAlignedBox
    color_id: int


@dataclass
class Scene:
    scene_id: str
    objects: list[SceneObject]
    points_per_scene: int = 50000

    def object_by_id(self, object_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(f"no object {object_id} in scene {self.scene_id}")

    def boxes(self) -> np.ndarray:
        return np.array([o.box.to_array() for o in self.objects]).reshape(-1, 6)

    def class_count(self, class_id: int) -> int:
        return sum(o.class_id == class_id for o in self.objects)


@dataclass
class SentenceRecord:
    target_object_id: int
    tokens: list[int]
    keyword_positions: list[int]
    text_class_id: int
    relation: str
    anchor_ids: list[int]
    split: str


@dataclass
class MaskedSentence:
    tokens: list[int]
    mask_positions: list[int]


@dataclass
class ProposalSet:
    boxes: np.ndarray            # (M, 6)
    class_logits: np.ndarray     # (M, N_o)
    objectness: np.ndarray       # (M,)
    appearance: np.ndarray       # (M, A)
    matched_gt_id: list[Optional[int]]

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def attributes(self) -> np.ndarray:
        return np.concatenate([geometric_attributes(self.boxes), self.appearance], axis=1)

    def box(self, i: int) -> AxisAlignedBox:
        return AxisAlignedBox.from_array(self.boxes[i])


@dataclass
class SceneRecord:
    scene: Scene
    sentences: list[SentenceRecord]
    proposals: ProposalSet


def split_tag(scene: Scene, target_object_id: int) -> str:
    target = scene.object_by_id(target_object_id)
    return "multiple" if scene.class_count(target.class_id) >= 2 else "unique"


# --------------------------------------------------------------------------- scenes

def generate_scene(config: GenConfig, seed: int, scene_id: Optional[str] = None) -> Scene:
    rng = np.random.default_rng(seed)
    room = np.asarray(config.room_size, dtype=np.float64)
    n_obj = int(rng.integers(config.min_objects, config.max_objects + 1))
    class_ids = rng.integers(0, len(config.object_classes), size=n_obj)
    placed: list[np.ndarray] = []
    objects = []
    for oid, cls in enumerate(class_ids):
        nominal = np.asarray(config.class_sizes[cls], dtype=np.float64)
        for _ in range(config.max_attempts):
            size = nominal * rng.uniform(1 - config.size_jitter, 1 + config.size_jitter, size=3)
            size = np.minimum(size, room)
            xy = rng.uniform(size[:2] / 2, room[:2] - size[:2] / 2)
            box = np.concatenate([xy, [size[2] / 2], size])
            if placed and iou_matrix(box[None], np.array(placed)).max() > config.max_overlap_iou:
                continue
            placed.append(box)
            break
        else:
            raise GenerationError(
                f"could not place object {oid} after {config.max_attempts} attempts (seed {seed})")
        color = int(rng.integers(0, len(config.colors)))
        objects.append(SceneObject(oid, int(cls), AxisAlignedBox.from_array(box), color))
    return Scene(scene_id if scene_id is not None else f"scene{seed:06d}", objects,
                 config.points_per_scene)


# ------------------------------------------------------------------------ relations

def _xy(obj: SceneObject) -> np.ndarray:
    return np.asarray(obj.box.center[:2])


def relation_holds(scene: Scene, relation: str, target_id: int, anchor_ids: Sequence[int],
                   margin: float = 0.3) -> bool:
    """Evaluate a spatial relation in scene coordinates.

    Axis convention: left/right along -x/+x, front/behind along -y/+y.
    nearest/farthest compare the target against the other objects of its class.
    """
    target = scene.object_by_id(target_id)
    anchors = [scene.object_by_id(a) for a in anchor_ids]
    if any(a.object_id == target_id for a in anchors):
        return False
    t = _xy(target)
    if relation == "between":
        if len(anchors) != 2:
            return False
        a, b = _xy(anchors[0]), _xy(anchors[1])
        ab = b - a
        length = float(np.linalg.norm(ab))
        if length < 2 * margin:
            return False
        u = float(np.dot(t - a, ab) / length ** 2)
        dist = float(np.linalg.norm(t - (a + u * ab)))
        return 0.15 < u < 0.85 and dist < 0.25 * length
    if len(anchors) != 1:
        return False
    a = _xy(anchors[0])
    if relation == "left":
        return t[0] < a[0] - margin
    if relation == "right":
        return t[0] > a[0] + margin
    if relation == "front":
        return t[1] < a[1] - margin
    if relation == "behind":
        return t[1] > a[1] + margin
    if relation in ("nearest", "farthest"):
        peers = [o for o in scene.objects
                 if o.class_id == target.class_id and o.object_id not in (target_id, anchors[0].object_id)]
        d_t = float(np.linalg.norm(t - a))
        d_peers = [float(np.linalg.norm(_xy(o) - a)) for o in peers]
        if relation == "nearest":
            return all(d_t < d - margin for d in d_peers)
        return all(d_t > d + margin for d in d_peers)
    raise ValueError(f"unknown relation {relation!r}")


def _describe(config: GenConfig, vocab: Vocabulary, scene: Scene, target: SceneObject,
              relation: str, anchors: Sequence[SceneObject]) -> tuple[list[int], list[int]]:
    words = ["the", config.colors[target.color_id], config.text_classes[target.class_id],
             RELATION_WORDS[relation]]
    keywords = [1, 2, 3]
    for j, anchor in enumerate(anchors):
        if j:
            words.append("and")
        words += ["the", config.colors[anchor.color_id], config.text_classes[anchor.class_id]]
    return vocab.encode(words), keywords


def _valid_descriptions(config: GenConfig, scene: Scene) -> list[tuple[int, str, tuple[int, ...]]]:
    margin = config.relation_margin
    objs = scene.objects
    # anchors must be nameable unambiguously by (color, class)
    signature = {}
    for o in objs:
        signature.setdefault((o.color_id, o.class_id), []).append(o.object_id)
    nameable = [o.object_id for o in objs if len(signature[(o.color_id, o.class_id)]) == 1]

    out = []
    for target in objs:
        rivals = [o for o in objs if o.class_id == target.class_id and o.color_id == target.color_id
                  and o.object_id != target.object_id]
        options: list[tuple[str, tuple[int, ...]]] = []
        for a in nameable:
            if a == target.object_id:
                continue
            for rel in RELATIONS[:-1]:
                options.append((rel, (a,)))
        for i, a in enumerate(nameable):
            for b in nameable[i + 1:]:
                if target.object_id not in (a, b):
                    options.append(("between", (a, b)))
        for rel, anchor_ids in options:
            if not relation_holds(scene, rel, target.object_id, anchor_ids, margin):
                continue
            # the description must single out the target among same-looking objects
            if any(r.object_id not in anchor_ids
                   and relation_holds(scene, rel, r.object_id, anchor_ids, 0.0)
                   for r in rivals):
                continue
            out.append((target.object_id, rel, anchor_ids))
    return out


def generate_sentences(scene: Scene, config: GenConfig, seed: int,
                       vocab: Optional[Vocabulary] = None) -> list[SentenceRecord]:
    """Template sentences "the <color> <class> <relation> the <color> <class>".

    Every returned sentence is true in the scene geometry and picks out its
    target uniquely; targets are spread round-robin before any repeats.
    """
    vocab = vocab or config.vocabulary()
    rng = np.random.default_rng(seed)
    descriptions = _valid_descriptions(config, scene)
    if not descriptions:
        return []
    order = rng.permutation(len(descriptions))
    chosen: list[tuple[int, str, tuple[int, ...]]] = []
    used_targets: set[int] = set()
    for i in order:  # first pass: one sentence per target
        if len(chosen) == config.sentences_per_scene:
            break
        if descriptions[i][0] not in used_targets:
            chosen.append(descriptions[i])
            used_targets.add(descriptions[i][0])
    for i in order:
        if len(chosen) == config.sentences_per_scene:
            break
        if descriptions[i] not in chosen:
            chosen.append(descriptions[i])

    records = []
    for target_id, rel, anchor_ids in chosen:
        target = scene.object_by_id(target_id)
        tokens, keywords = _describe(config, vocab, scene, target, rel,
                                     [scene.object_by_id(a) for a in anchor_ids])
        records.append(SentenceRecord(
            target_object_id=target_id, tokens=tokens, keyword_positions=keywords,
            text_class_id=target.class_id, relation=rel, anchor_ids=list(anchor_ids),
            split=split_tag(scene, target_id)))
    return records


def mask_sentence(record: SentenceRecord, ratio: float,
                  seed: int | np.random.Generator, mask_id: int = 1) -> MaskedSentence:
    """Replace ``max(1, round(ratio * |keywords|))`` keyword tokens with the mask id."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("mask ratio must lie in (0, 1]")
    keywords = sorted(set(record.keyword_positions))
    if not keywords:
        raise ValueError("sentence has no keyword positions to mask")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_mask = min(len(keywords), max(1, int(np.floor(ratio * len(keywords) + 0.5))))
    positions = sorted(int(p) for p in rng.choice(keywords, size=n_mask, replace=False))
    tokens = list(record.tokens)
    for p in positions:
        tokens[p] = mask_id
    return MaskedSentence(tokens, positions)


# ------------------------------------------------------------------------ detector

def _jitter(box: np.ndarray, cfg: DetectorSimConfig, rng: np.random.Generator) -> np.ndarray:
    size = box[3:]
    center = box[:3] + rng.normal(0.0, 1.0, 3) * cfg.center_noise * size
    new_size = size * np.exp(rng.normal(0.0, 1.0, 3) * cfg.size_noise)
    return np.concatenate([center, new_size])


def simulate_proposals(scene: Scene, config: DetectorSimConfig, seed: int,
                       num_classes: int = 6, num_colors: int = 6,
                       room_size: Sequence[float] = (7.0, 7.0, 3.0)) -> ProposalSet:
    """Box-level stand-in for a pretrained detector.

    Every object gets one jittered proposal; leftover slots hold extra
    jittered duplicates of random objects and low-objectness distractors.
    """
    n_obj = len(scene.objects)
    m_p = config.num_proposals
    if m_p < n_obj:
        raise ValueError(f"num_proposals={m_p} is smaller than the {n_obj} scene objects")
    if num_colors > config.appearance_dim:
        raise ValueError("appearance_dim must hold a one-hot color code")
    rng = np.random.default_rng(seed)
    gt = scene.boxes()
    n_distract = min(config.num_distractors, m_p - n_obj)
    sources = list(range(n_obj)) + list(rng.integers(0, n_obj, size=m_p - n_obj - n_distract))

    boxes, classes, colors, objectness = [], [], [], []
    for src in sources:
        obj = scene.objects[src]
        boxes.append(_jitter(gt[src], config, rng))
        cls = obj.class_id
        if rng.random() < config.label_noise:
            cls = int(rng.integers(0, num_classes))
        classes.append(cls)
        colors.append(obj.color_id)
        objectness.append(rng.uniform(0.6, 1.0))
    room = np.asarray(room_size, dtype=np.float64)
    for _ in range(n_distract):
        size = rng.uniform(0.3, 1.5, 3)
        center = rng.uniform(size / 2, np.maximum(room - size / 2, size / 2))
        boxes.append(np.concatenate([center, size]))
        classes.append(int(rng.integers(0, num_classes)))
        colors.append(int(rng.integers(0, num_colors)))
        objectness.append(rng.uniform(0.0, 0.3))

    boxes = np.array(boxes)
    logits = rng.normal(0.0, config.logit_noise, (m_p, num_classes))
    logits[np.arange(m_p), classes] += config.logit_peak
    appearance = np.eye(config.appearance_dim)[colors]
    appearance = appearance + rng.normal(0.0, config.appearance_noise, appearance.shape)
    objectness = np.array(objectness)

    perm = rng.permutation(m_p)
    boxes, logits, appearance, objectness = boxes[perm], logits[perm], appearance[perm], objectness[perm]
    ious = iou_matrix(boxes, gt)
    best = ious.argmax(axis=1)
    matched = [scene.objects[b].object_id if ious[i, b] >= 0.5 else None
               for i, b in enumerate(best)]
    return ProposalSet(boxes, logits, objectness, appearance, matched)


# -------------------------------------------------------------------------- corpus

def generate_corpus(num_scenes: int, gen_config: GenConfig, det_config: DetectorSimConfig,
                    seed: int) -> list[SceneRecord]:
    """Independent per-scene seeds derived from ``seed``; scenes without sentences are skipped."""
    vocab = gen_config.vocabulary()
    seeds = np.random.SeedSequence(seed).generate_state(3 * num_scenes * 2, dtype=np.uint32)
    corpus = []
    i = 0
    while len(corpus) < num_scenes:
        if 3 * i + 2 >= len(seeds):
            raise GenerationError("too many scenes without valid sentences")
        s_scene, s_sent, s_prop = (int(x) for x in seeds[3 * i:3 * i + 3])
        scene = generate_scene(gen_config, s_scene, scene_id=f"s{seed}_{i:05d}")
        i += 1
        sentences = generate_sentences(scene, gen_config, s_sent, vocab)
        if not sentences:
            continue
        proposals = simulate_proposals(scene, det_config, s_prop,
                                       num_classes=len(gen_config.object_classes),
                                       num_colors=len(gen_config.colors),
                                       room_size=gen_config.room_size)
        corpus.append(SceneRecord(scene, sentences, proposals))
    return corpus
