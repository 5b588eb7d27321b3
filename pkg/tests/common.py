"""Shared toy builds for the test suite.

Trained models are cached at module level so the first caller (the
acceptance suite, which owns the time budgets) pays the training cost and
later tests reuse the result.
"""

from __future__ import annotations

from functools import lru_cache

from slmkit.fixtures import alternating_corpus, memorization_corpus, paired_corpus
from slmkit.model import ModelConfig
from slmkit.trainer import TrainConfig, train
from slmkit.vocab import build_vocab, encode_sentence


def encode_all(vocab, lines):
    return [encode_sentence(vocab, line) for line in lines]


@lru_cache(maxsize=None)
def leak_setup():
    """V=8 vocabulary (3 letters) and 3-token sentences (n=5 with sentinels)."""
    lines = memorization_corpus(30, length=3, alphabet=3, seed=5)
    vocab = build_vocab(lines)
    assert vocab.size == 8
    cfg = ModelConfig(layers=2, d_model=32, heads=2, d_ff=64, vocab_size=8,
                      max_len=8, dropout=0.0)
    return lines, vocab, cfg


@lru_cache(maxsize=None)
def leak_corpus():
    lines, vocab, _ = leak_setup()
    return encode_all(vocab, lines)


@lru_cache(maxsize=None)
def trained_leak_model(kind: str):
    """A briefly trained V=8 model of the given kind (slm or mlm)."""
    _, _, cfg = leak_setup()
    tcfg = TrainConfig(lr_peak=3e-3, warmup_steps=20, total_steps=120,
                       batch_tokens=256, seed=11)
    return train(kind, cfg, tcfg, leak_corpus()).model


@lru_cache(maxsize=None)
def alt_setup():
    """Alternating two-symbol corpus, length 20, with its vocabulary."""
    lines = alternating_corpus(50, length=20, seed=0)
    vocab = build_vocab(lines)
    return lines, vocab, encode_all(vocab, lines)


@lru_cache(maxsize=None)
def trained_alt_model(kind: str):
    _, vocab, seqs = alt_setup()
    cfg = ModelConfig(layers=2, d_model=32, heads=2, d_ff=64, vocab_size=vocab.size,
                      max_len=24, dropout=0.0)
    steps = {"slm": 600, "clm": 400, "mlm": 800}[kind]
    tcfg = TrainConfig(lr_peak=5e-3, warmup_steps=50, total_steps=steps,
                       batch_tokens=180, seed=2)
    return train(kind, cfg, tcfg, seqs).model


@lru_cache(maxsize=None)
def paired_setup():
    """Doubled-letter corpus split into train / held-out lines."""
    lines = paired_corpus(200, pairs=10, alphabet=4, seed=0)
    vocab = build_vocab(lines[:160])
    return (encode_all(vocab, lines[:160]), encode_all(vocab, lines[160:]), vocab)


@lru_cache(maxsize=None)
def trained_paired_mlm():
    train_seqs, _, vocab = paired_setup()
    cfg = ModelConfig(layers=2, d_model=32, heads=2, d_ff=64, vocab_size=vocab.size,
                      max_len=24, dropout=0.0)
    tcfg = TrainConfig(lr_peak=5e-3, warmup_steps=50, total_steps=2000,
                       batch_tokens=180, seed=3, mask_rate=0.25)
    return train("mlm", cfg, tcfg, train_seqs).model


@lru_cache(maxsize=None)
def memorize_setup():
    lines = memorization_corpus(50, length=5, alphabet=6, seed=0)
    vocab = build_vocab(lines)
    return lines, vocab, encode_all(vocab, lines)


def memorize_train(kind: str):
    """One 300-step training run on the memorization corpus (not cached)."""
    _, vocab, seqs = memorize_setup()
    cfg = ModelConfig(layers=2, d_model=32, heads=2, d_ff=64, vocab_size=vocab.size,
                      max_len=16, dropout=0.0)
    tcfg = TrainConfig(lr_peak=5e-3, warmup_steps=20, total_steps=300,
                       batch_tokens=512, seed=1)
    return train(kind, cfg, tcfg, seqs)


@lru_cache(maxsize=None)
def memorize_results():
    return {kind: memorize_train(kind) for kind in ("slm", "clm", "mlm", "bilm")}
