"""Pluggable word-vector sources (seeded synthetic or JSON file)."""

from __future__ import annotations

import json
import zlib
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_SYNONYMS = (("seat", "chair"), ("desk", "table"), ("couch", "sofa"))


def synthetic_vectors(words: Iterable[str], dim: int = 32, seed: int = 0,
                      synonyms: Sequence[Sequence[str]] = DEFAULT_SYNONYMS,
                      synonym_noise: float = 0.3) -> dict[str, np.ndarray]:
    """Seeded random vectors; words in one synonym group share a base direction.

    Each word's vector depends only on ``(seed, word)`` so adding words never
    changes existing vectors.
    """
    def base(word: str) -> np.ndarray:
        rng = np.random.default_rng([seed, zlib.crc32(word.encode("utf-8"))])
        return rng.normal(0.0, 1.0, dim) / np.sqrt(dim)

    group_of = {w: g[0] for g in synonyms for w in g}
    out = {}
    for word in words:
        if word in group_of and group_of[word] != word:
            out[word] = base(group_of[word]) + synonym_noise * base(word)
        else:
            out[word] = base(word)
    return out


def load_vectors(path: str | Path) -> dict[str, np.ndarray]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    dim = int(data["dim"])
    vectors = {w: np.asarray(v, dtype=np.float64) for w, v in data["vectors"].items()}
    for w, v in vectors.items():
        if v.shape != (dim,):
            raise ValueError(f"vector for {w!r} has shape {v.shape}, expected ({dim},)")
    return vectors


def save_vectors(path: str | Path, vectors: Mapping[str, np.ndarray]) -> None:
    dims = {len(v) for v in vectors.values()}
    if len(dims) != 1:
        raise ValueError("all vectors must share one dimension")
    payload = {"dim": dims.pop(), "vectors": {w: [float(x) for x in v] for w, v in vectors.items()}}
    Path(path).write_text(json.dumps(payload), encoding="utf-8")
