"""Token vocabulary and the two supported tokenizers (whitespace, byte-level)."""

from __future__ import annotations

from dataclasses import dataclass, field

EOS_TOKEN = "</s>"
UNK_TOKEN = "<unk>"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered set of distinct token strings; ids are positions in ``tokens``.

    Slot 0 is always the end-of-sequence token and slot 1 the unknown token,
    so every vocabulary can encode arbitrary text and terminate generation.
    """

    tokens: tuple[str, ...]
    eos_id: int = 0
    unk_id: int = 1
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")
        if not 0 <= self.eos_id < len(self.tokens):
            raise ValueError("eos_id out of range")
        if not 0 <= self.unk_id < len(self.tokens):
            raise ValueError("unk_id out of range")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        """Id of ``token``, falling back to the unknown id."""
        return self._index.get(token, self.unk_id)

    def encode(self, words: list[str]) -> list[int]:
        return [self.id_of(w) for w in words]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def whitespace_tokenize(text: str) -> list[str]:
    return text.split()


def byte_tokenize(text: str) -> list[str]:
    """Split into one token per UTF-8 byte, rendered as 0x00..0xff strings."""
    return [f"0x{b:02x}" for b in text.encode("utf-8")]


def build_vocabulary(documents: list[list[str]]) -> Vocabulary:
    """Vocabulary over all tokens seen in ``documents``, plus eos/unk specials.

    Token order is sorted so the same corpus always yields the same ids.
    """
    seen = sorted({w for doc in documents for w in doc} - {EOS_TOKEN, UNK_TOKEN})
    return Vocabulary(tokens=(EOS_TOKEN, UNK_TOKEN, *seen))
