"""Seeded synthetic corpora, generated in code so tests carry no data files.

Each generator returns plain text lines; run them through build_vocab /
encode_sentence to get TokenSeqs, the same path real corpora take.
"""

from __future__ import annotations

import numpy as np


def memorization_corpus(n_sentences: int = 50, length: int = 6, alphabet: int = 8,
                        seed: int = 0) -> list[str]:
    """Random word sentences from a tiny alphabet; the overfitting target."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    words = [f"w{i}" for i in range(alphabet)]
    return [
        " ".join(words[int(j)] for j in rng.integers(0, alphabet, size=length))
        for _ in range(n_sentences)
    ]


def alternating_corpus(n_sentences: int = 50, length: int = 20, seed: int = 0) -> list[str]:
    """Strictly alternating two-symbol sentences with a uniform start symbol.

    The first symbol carries ln 2 nats of entropy given nothing; every symbol
    is fully determined by any single neighbor, so a bidirectional scorer can
    reach zero cross-entropy at every position while a left-to-right scorer
    is pinned at ln 2 on the first.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    out = []
    for _ in range(n_sentences):
        start = int(rng.integers(0, 2))
        out.append(" ".join(("a", "b")[(start + i) % 2] for i in range(length)))
    return out


def paired_corpus(n_sentences: int = 200, pairs: int = 10, alphabet: int = 4,
                  seed: int = 0) -> list[str]:
    """Sentences of doubled letters ("c c a a d d ..."), uniform per pair.

    A token is recoverable exactly when its twin is visible, so hiding more
    tokens per pass strictly loses information: the per-token NLL of a
    masked scorer grows with k.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    letters = [chr(ord("a") + i) for i in range(alphabet)]
    out = []
    for _ in range(n_sentences):
        picks = rng.integers(0, alphabet, size=pairs)
        out.append(" ".join(letters[int(p)] for p in picks for _ in range(2)))
    return out
