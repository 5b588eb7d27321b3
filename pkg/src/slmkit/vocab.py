"""Whitespace / character tokenization with a fixed reserved-index layout."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from slmkit.errors import ContractError, LengthError

PAD_ID, BOS_ID, EOS_ID, UNK_ID, MASK_ID = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>", "<mask>")


@dataclass(frozen=True)
class Vocabulary:
    """token <-> index map with reserved slots 0..4 (PAD, BOS, EOS, UNK, MASK)."""

    tokens: tuple[str, ...]
    mode: str = "word"  # "word" (whitespace split) or "char"

    def __post_init__(self):
        if self.mode not in ("word", "char"):
            raise ContractError(f"unknown vocabulary mode {self.mode!r}")
        if tuple(self.tokens[:5]) != RESERVED:
            raise ContractError("vocabulary must start with the 5 reserved tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ContractError("vocabulary holds duplicate tokens")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def index(self, token: str) -> int:
        try:
            return self._lookup()[token]
        except KeyError:
            return UNK_ID

    def _lookup(self) -> dict[str, int]:
        # frozen dataclass: stash the reverse map lazily
        table = getattr(self, "_table", None)
        if table is None:
            table = {t: i for i, t in enumerate(self.tokens)}
            object.__setattr__(self, "_table", table)
        return table

    def encode_ids(self, sentence: str) -> list[int]:
        parts = list(sentence) if self.mode == "char" else sentence.split()
        if self.mode == "char":
            parts = [c for c in parts if not c.isspace()]
        return [self.index(p) for p in parts]

    def decode(self, ids) -> str:
        sep = "" if self.mode == "char" else " "
        return sep.join(self.tokens[i] for i in ids)


def build_vocab(lines, max_size: int | None = None, mode: str = "word") -> Vocabulary:
    """Frequency-ranked vocabulary; ties break lexicographically.

    ``max_size`` counts the 5 reserved slots; tokens beyond it map to UNK.
    """
    counts: Counter[str] = Counter()
    seen_any = False
    for line in lines:
        if line.strip():
            seen_any = True
        if mode == "char":
            counts.update(c for c in line if not c.isspace())
        else:
            counts.update(line.split())
    if not seen_any:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        if max_size < len(RESERVED) + 1:
            raise ContractError(f"max_size must be at least {len(RESERVED) + 1}")
        ranked = ranked[: max_size - len(RESERVED)]
    return Vocabulary(tokens=RESERVED + tuple(t for t, _ in ranked), mode=mode)


def save_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#slmkit-vocab mode={vocab.mode}\n")
        for tok in vocab.tokens[len(RESERVED):]:
            fh.write(tok + "\n")


def load_vocab(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith("#slmkit-vocab mode="):
            raise ContractError(f"{path}: not a vocabulary file")
        mode = header.split("mode=", 1)[1]
        tokens = [line.rstrip("\n") for line in fh if line != "\n"]
    return Vocabulary(tokens=RESERVED + tuple(tokens), mode=mode)


def encode_sentence(vocab: Vocabulary, sentence: str, max_len: int | None = None):
    """Encode one sentence to a sentinel-wrapped TokenSeq."""
    from slmkit.model import TokenSeq

    ids = vocab.encode_ids(sentence)
    if max_len is not None and len(ids) + 2 > max_len:
        raise LengthError(
            f"sentence of {len(ids)} tokens exceeds max_len={max_len}: {sentence[:50]!r}"
        )
    return TokenSeq.wrap(ids)
