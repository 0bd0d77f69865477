"""Language-model interface plus the scripted and n-gram reference models.

Models are immutable after construction and evaluation is a pure function of
(prompt, ancestor path): repeated calls return bitwise-identical
distributions, which is what makes draft stages replayable and traces
reproducible.
"""

from __future__ import annotations

import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .distributions import Distribution
from .errors import InputTooLongError
from .graph import FlattenedBatch
from .vocab import Vocabulary

NGRAM_MAGIC = b"SDNG"
NGRAM_VERSION = 1


@dataclass(frozen=True)
class ForwardCost:
    """Abstract cost of one forward pass: fixed + per_token*l_new + attention*l_new*l_ctx.

    The fixed term models the weight-streaming overhead that dominates
    memory-bound decoding and is what speculative decoding amortizes; the
    linear and attention terms grow with batch and visible context length.
    """

    fixed: float = 1.0
    per_token: float = 0.01
    attention: float = 1e-5

    def of(self, l_new: int, l_ctx: int) -> float:
        return self.fixed + self.per_token * l_new + self.attention * l_new * l_ctx

    def scaled(self, factor: float) -> "ForwardCost":
        return ForwardCost(self.fixed * factor, self.per_token * factor, self.attention * factor)


class LanguageModel(ABC):
    """Next-token distribution provider over a fixed vocabulary.

    Subclasses implement ``_next_distribution`` for a plain context tuple;
    masked-batch evaluation is defined to agree with per-position evaluation
    of each node's ancestor path.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        cost: ForwardCost | None = None,
        max_context: int | None = None,
    ):
        self.vocab = vocab
        self.cost = cost if cost is not None else ForwardCost()
        self.max_context = max_context

    @abstractmethod
    def _next_distribution(self, context: tuple[int, ...]) -> Distribution:
        ...

    def eval_next(self, context) -> Distribution:
        ctx = tuple(context)
        for t in ctx:
            if not 0 <= t < self.vocab.size:
                raise ValueError(f"token id {t} outside vocabulary of size {self.vocab.size}")
        if self.max_context is not None and len(ctx) > self.max_context:
            raise InputTooLongError(
                f"context of {len(ctx)} tokens exceeds model maximum {self.max_context}"
            )
        return self._next_distribution(ctx)

    def eval_masked_batch(
        self,
        prompt,
        batch: FlattenedBatch,
        memo: dict[int, Distribution] | None = None,
    ) -> list[Distribution]:
        """One distribution per batch position, each conditioned on
        prompt ++ ancestor path.

        ``memo`` (keyed by node id) skips positions already evaluated this
        stage; purity guarantees the reused values are identical.
        """
        prompt = tuple(prompt)
        paths = batch.ancestor_paths()
        out: list[Distribution] = []
        for node_id, path in zip(batch.positions, paths):
            if memo is not None and node_id in memo:
                out.append(memo[node_id])
                continue
            dist = self.eval_next(prompt + tuple(path))
            if memo is not None:
                memo[node_id] = dist
            out.append(dist)
        return out


class ScriptedModel(LanguageModel):
    """Exact table model: context tuple -> distribution, with a default."""

    def __init__(
        self,
        vocab: Vocabulary,
        table: dict[tuple[int, ...], Distribution],
        default: Distribution,
        cost: ForwardCost | None = None,
        max_context: int | None = None,
    ):
        super().__init__(vocab, cost, max_context)
        for ctx, dist in table.items():
            if len(dist) != vocab.size:
                raise ValueError(f"table entry for {ctx} has wrong vocabulary size")
        if len(default) != vocab.size:
            raise ValueError("default distribution has wrong vocabulary size")
        self.table = dict(table)
        self.default = default

    def _next_distribution(self, context: tuple[int, ...]) -> Distribution:
        return self.table.get(context, self.default)


class NGramModel(LanguageModel):
    """Interpolated-backoff n-gram model.

    The conditional for a seen context blends its maximum-likelihood
    distribution (weight ``lam``) with the next-shorter context's
    conditional; unseen contexts back off entirely. With lam=1 a seen
    context reproduces the raw count ratios.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        order: int,
        lam: float,
        counts: list[dict[tuple[int, ...], dict[int, int]]],
        cost: ForwardCost | None = None,
        max_context: int | None = None,
    ):
        super().__init__(vocab, cost, max_context)
        if order < 1:
            raise ValueError("order must be >= 1")
        if not 0 < lam <= 1:
            raise ValueError("lam must be in (0, 1]")
        if len(counts) != order:
            raise ValueError("need one count table per context length 0..order-1")
        unigram = counts[0].get((), {})
        if not unigram:
            raise ValueError("model has no unigram counts")
        self.order = order
        self.lam = lam
        self.counts = counts
        arr = np.zeros(vocab.size)
        for token, c in unigram.items():
            arr[token] = c
        arr /= arr.sum()
        arr.flags.writeable = False
        self._unigram = arr
        self._conditional = lru_cache(maxsize=8192)(self._conditional_uncached)

    def ngram_entry_counts(self) -> list[int]:
        """Number of distinct contexts per context length (unigram first)."""
        return [len(t) for t in self.counts]

    def _conditional_uncached(self, ctx: tuple[int, ...]) -> np.ndarray:
        if not ctx:
            return self._unigram
        lower = self._conditional(ctx[1:])
        table = self.counts[len(ctx)].get(ctx)
        if table is None:
            return lower
        arr = np.zeros(self.vocab.size)
        for token, c in table.items():
            arr[token] = c
        arr /= arr.sum()
        blended = self.lam * arr + (1.0 - self.lam) * lower
        blended.flags.writeable = False
        return blended

    def _next_distribution(self, context: tuple[int, ...]) -> Distribution:
        window = context[-(self.order - 1):] if self.order > 1 else ()
        return Distribution(self._conditional(window), validate=False)


def train_ngram(
    documents: list[list[int]],
    vocab: Vocabulary,
    order: int,
    lam: float = 1.0,
    cost: ForwardCost | None = None,
) -> NGramModel:
    """Count every in-document n-gram window up to ``order`` and build a model."""
    if order < 1:
        raise ValueError("order must be >= 1")
    if not documents or all(len(d) == 0 for d in documents):
        raise ValueError("corpus is empty")
    counts: list[dict[tuple[int, ...], dict[int, int]]] = [{} for _ in range(order)]
    for doc in documents:
        for m in range(order):
            for i in range(len(doc) - m):
                ctx = tuple(doc[i : i + m])
                token = doc[i + m]
                bucket = counts[m].setdefault(ctx, {})
                bucket[token] = bucket.get(token, 0) + 1
    return NGramModel(vocab, order, lam, counts, cost=cost)


def save_ngram(model: NGramModel, path: str) -> None:
    """Serialize to the binary model format (magic, version, vocab, counts)."""
    with open(path, "wb") as f:
        f.write(NGRAM_MAGIC)
        f.write(struct.pack("<HHdIII", NGRAM_VERSION, model.order, model.lam,
                            model.vocab.size, model.vocab.eos_id, model.vocab.unk_id))
        for token in model.vocab.tokens:
            raw = token.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
        for m in range(model.order):
            table = model.counts[m]
            f.write(struct.pack("<Q", len(table)))
            for ctx, bucket in table.items():
                f.write(struct.pack(f"<{m}I" if m else "<", *ctx))
                f.write(struct.pack("<I", len(bucket)))
                for token, c in bucket.items():
                    f.write(struct.pack("<IQ", token, c))


def load_ngram(path: str, cost: ForwardCost | None = None) -> NGramModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != NGRAM_MAGIC:
            raise ValueError(f"not an n-gram model file: bad magic {magic!r}")
        version, order, lam, vocab_size, eos_id, unk_id = struct.unpack(
            "<HHdIII", f.read(struct.calcsize("<HHdIII"))
        )
        if version != NGRAM_VERSION:
            raise ValueError(f"unsupported model version {version}")
        tokens = []
        for _ in range(vocab_size):
            (n,) = struct.unpack("<I", f.read(4))
            tokens.append(f.read(n).decode("utf-8"))
        vocab = Vocabulary(tokens=tuple(tokens), eos_id=eos_id, unk_id=unk_id)
        counts: list[dict[tuple[int, ...], dict[int, int]]] = []
        for m in range(order):
            (n_ctx,) = struct.unpack("<Q", f.read(8))
            table: dict[tuple[int, ...], dict[int, int]] = {}
            for _ in range(n_ctx):
                ctx = struct.unpack(f"<{m}I", f.read(4 * m)) if m else ()
                (n_entries,) = struct.unpack("<I", f.read(4))
                bucket = {}
                for _ in range(n_entries):
                    token, c = struct.unpack("<IQ", f.read(12))
                    bucket[token] = c
                table[ctx] = bucket
            counts.append(table)
    return NGramModel(vocab, order, lam, counts, cost=cost)


class KVCacheState:
    """Logical cache bookkeeping for one decoding session.

    Tracks the committed prefix length per model role and memoizes draft
    distributions per node within a draft stage; the memo is cleared when
    the stage's result is committed.
    """

    def __init__(self) -> None:
        self.draft_prefix = 0
        self.target_prefix = 0
        self.draft_memo: dict[int, Distribution] = {}

    def advance(self, new_length: int) -> None:
        if new_length < max(self.draft_prefix, self.target_prefix):
            raise ValueError("cache prefix cannot shrink below the committed context")
        self.draft_prefix = new_length
        self.target_prefix = new_length

    def clear_stage(self) -> None:
        self.draft_memo.clear()
