"""Token vocabulary with fixed part-of-speech tags for the template language."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD = "<pad>"
MASK = "<mask>"
POS_TAGS = ("noun", "adj", "verb", "rel", "func")
DEFAULT_KEYWORD_POS = frozenset({"noun", "adj"})


@dataclass
class Vocabulary:
    words: list[str]
    pos: list[str]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.words) != len(self.pos):
            raise ValueError("words and pos must have equal length")
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate words in vocabulary")
        bad = [p for p in self.pos if p not in POS_TAGS]
        if bad:
            raise ValueError(f"unknown POS tags: {sorted(set(bad))}")
        if self.words[:2] != [PAD, MASK]:
            raise ValueError("vocabulary must start with the pad and mask tokens")
        self._index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words and self.pos == other.pos

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def mask_id(self) -> int:
        return 1

    def id(self, word: str) -> int:
        try:
            return self._index[word]
        except KeyError:
            raise KeyError(f"word not in vocabulary: {word!r}") from None

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.id(w) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.words[i] for i in ids]

    def pos_table(self) -> dict[int, str]:
        return dict(enumerate(self.pos))

    def to_sidecar(self) -> dict[str, dict[str, str]]:
        return {str(i): {"word": w, "pos": p} for i, (w, p) in enumerate(zip(self.words, self.pos))}

    @classmethod
    def from_sidecar(cls, data: dict) -> "Vocabulary":
        ids = sorted(int(k) for k in data)
        if ids != list(range(len(ids))):
            raise ValueError("vocabulary ids must be contiguous from 0")
        return cls([data[str(i)]["word"] for i in ids], [data[str(i)]["pos"] for i in ids])


def build_vocabulary(colors: Sequence[str], text_classes: Sequence[str],
                     relation_words: Sequence[str]) -> Vocabulary:
    words = [PAD, MASK, "the", "and"]
    pos = ["func", "func", "func", "func"]
    for group, tag in ((colors, "adj"), (text_classes, "noun"), (relation_words, "rel")):
        words.extend(group)
        pos.extend([tag] * len(group))
    return Vocabulary(words, pos)


def tag_keywords(tokens: Sequence[int], pos_table: dict[int, str] | Sequence[str],
                 keyword_pos: Iterable[str] = DEFAULT_KEYWORD_POS) -> set[int]:
    """Positions of tokens whose POS tag is in ``keyword_pos``."""
    keyword_pos = set(keyword_pos)
    positions = set()
    for i, tok in enumerate(tokens):
        try:
            if tok < 0:
                raise KeyError(tok)
            tag = pos_table[tok]
        except (KeyError, IndexError):
            raise KeyError(f"token id {tok} has no POS tag") from None
        if tag in keyword_pos:
            positions.add(i)
    return positions
