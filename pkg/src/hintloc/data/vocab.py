"""Closed-grammar tokenizer for the hint sentences.

The hint template is "the pose is <direction> of a <color> <class>", so the
vocabulary is the union of glue words, the eight compass directions, the
palette color words, and the object class names, plus pad/unk specials.
"""

from __future__ import annotations

from ..errors import InvalidValueError

PAD = "<pad>"
UNK = "<unk>"

GLUE_WORDS = ("the", "pose", "is", "of", "a")
DIRECTION_WORDS = ("east", "northeast", "north", "northwest",
                   "west", "southwest", "south", "southeast")


class Vocabulary:
    def __init__(self, tokens: list[str]):
        if tokens[:2] != [PAD, UNK]:
            raise InvalidValueError("vocabulary must start with the pad and unk tokens")
        if len(set(tokens)) != len(tokens):
            raise InvalidValueError("vocabulary tokens must be unique")
        self.tokens = list(tokens)
        self.ids = {tok: i for i, tok in enumerate(tokens)}

    @classmethod
    def default(cls) -> "Vocabulary":
        from .scene import CLASS_NAMES, PALETTE

        words = [PAD, UNK]
        words += list(GLUE_WORDS) + list(DIRECTION_WORDS)
        words += list(PALETTE) + list(CLASS_NAMES)
        return cls(words)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        words = text.lower().split()
        if not words:
            raise InvalidValueError("cannot tokenize an empty string")
        return [self.ids.get(w, self.unk_id) for w in words]

    def decode(self, ids: list[int]) -> str:
        out = []
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise InvalidValueError(f"token id {i} outside vocabulary of {len(self.tokens)}")
            out.append(self.tokens[i])
        return " ".join(out)
