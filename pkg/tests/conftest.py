from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from textgen import generate_corpus  # noqa: E402

from specdag import (  # noqa: E402
    Distribution,
    ScriptedModel,
    Vocabulary,
    build_vocabulary,
    train_ngram,
    whitespace_tokenize,
)


def small_vocab(size: int) -> Vocabulary:
    """Vocabulary of `size` tokens; eos=t0, unk=t1, generic names after."""
    return Vocabulary(tokens=tuple(f"t{i}" for i in range(size)))


def random_distribution(rng: np.random.Generator, size: int, peaked: float = 1.0) -> Distribution:
    weights = rng.dirichlet(np.full(size, peaked))
    return Distribution(weights)


def random_scripted_pair(
    seed: int,
    vocab_size: int = 5,
    prompt_len: int = 2,
    table_depth: int = 4,
    peaked: float = 0.5,
) -> tuple[ScriptedModel, ScriptedModel, list[int]]:
    """Two scripted models sharing a vocabulary, plus a prompt.

    Tables cover every context that extends the prompt by up to
    ``table_depth`` tokens; anything deeper hits the default distribution.
    """
    rng = np.random.default_rng(seed)
    vocab = small_vocab(vocab_size)
    prompt = [int(t) for t in rng.integers(2, vocab_size, size=prompt_len)]

    def build() -> ScriptedModel:
        table = {}
        contexts = [tuple(prompt)]
        for _ in range(table_depth):
            nxt = []
            for ctx in contexts:
                table[ctx] = random_distribution(rng, vocab_size, peaked)
                nxt.extend(ctx + (t,) for t in range(vocab_size))
            contexts = nxt
        default = random_distribution(rng, vocab_size, peaked)
        return ScriptedModel(vocab, table, default)

    return build(), build(), prompt


@pytest.fixture(scope="session")
def corpus_text() -> str:
    return generate_corpus(seed=7, target_bytes=80_000)


@pytest.fixture(scope="session")
def corpus_path(tmp_path_factory, corpus_text) -> Path:
    path = tmp_path_factory.mktemp("corpus") / "corpus.txt"
    path.write_text(corpus_text, encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def corpus_models(corpus_text):
    """(draft order-2, target order-5, vocab, documents) over the test corpus."""
    docs = [whitespace_tokenize(line) for line in corpus_text.splitlines() if line.strip()]
    vocab = build_vocabulary(docs)
    documents = [vocab.encode(d) for d in docs]
    draft = train_ngram(documents, vocab, order=2, lam=0.9)
    target = train_ngram(documents, vocab, order=5, lam=0.9)
    return draft, target, vocab, documents


@pytest.fixture(scope="session")
def corpus_prompts(corpus_models):
    """Prompt token lists drawn from corpus line prefixes."""
    _, _, _, documents = corpus_models
    return [doc[:6] for doc in documents if len(doc) >= 6]
