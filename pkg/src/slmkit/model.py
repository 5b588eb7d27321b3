"""Transformer backbone with triple-stream self-attention for sliding LM scoring.

One forward pass maintains three streams per layer: a forward content stream
(sees positions <= i), a backward content stream (sees >= i), and a query
stream fed by position embeddings alone, whose keys/values are the previous
layer's two content streams restricted to strictly-before / strictly-after
positions. All three streams share one parameter set per layer. The output
head reads the final query stream, so the distribution at position i never
depends on the token at i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from slmkit import autograd as ag
from slmkit.autograd import Tensor
from slmkit.errors import ContractError, LengthError
from slmkit.masks import MaskSet, build_masks
from slmkit.vocab import BOS_ID, EOS_ID

_DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class TokenSeq:
    """A sentinel-wrapped token sequence; the unit of scoring.

    ``tokens[0]`` is BOS and ``tokens[-1]`` is EOS, so every real position
    has a non-empty context on both sides and the query mask never produces
    an empty row.
    """

    tokens: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise LengthError("a TokenSeq needs at least BOS and EOS")
        if self.tokens[0] != BOS_ID or self.tokens[-1] != EOS_ID:
            raise ContractError("TokenSeq must start with BOS and end with EOS")

    @classmethod
    def wrap(cls, ids) -> "TokenSeq":
        return cls(tokens=(BOS_ID, *(int(i) for i in ids), EOS_ID))

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def real_span(self) -> range:
        """Indices of the non-sentinel tokens."""
        return range(1, self.n - 1)

    @property
    def real_count(self) -> int:
        return self.n - 2

    def replaced(self, pos: int, token: int) -> "TokenSeq":
        toks = list(self.tokens)
        toks[pos] = int(token)
        return TokenSeq(tokens=tuple(toks))


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    d_model: int
    heads: int
    d_ff: int
    vocab_size: int
    max_len: int
    dropout: float = 0.1
    tie_embeddings: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ContractError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.max_len < 3:
            raise ContractError("max_len must be >= 3 (sentinels plus one token)")
        if self.vocab_size < 6:
            raise ContractError("vocab_size must cover the 5 reserved ids plus one token")
        if self.dtype not in _DTYPES:
            raise ContractError(f"unknown dtype {self.dtype!r}")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]


# Desk-scale presets preserving the 2:1 layer and 3:2 width/head ratios of the
# full-size base/small pair (12/768/12 vs 6/512/8, FFN = 4 x hidden).
PRESETS = {
    "base": dict(layers=4, d_model=96, heads=6, d_ff=384),
    "small": dict(layers=2, d_model=64, heads=4, d_ff=256),
}


def preset_config(name: str, vocab_size: int, max_len: int, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ContractError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(vocab_size=vocab_size, max_len=max_len, **overrides)
    return ModelConfig(**kw)


@dataclass
class StreamStates:
    """Per-layer hidden states of the three streams (index 0 = embeddings)."""

    fwd: list[Tensor] = field(default_factory=list)
    bwd: list[Tensor] = field(default_factory=list)
    query: list[Tensor] = field(default_factory=list)


@dataclass
class SentenceScore:
    """Per-token log-probabilities at the scored positions of one sequence."""

    total: float
    per_token: list[float]
    positions: list[int]
    pred_tokens: list[int]
    n_tokens: int
    passes: int

    def logprob_at(self, pos: int) -> float:
        return self.per_token[self.positions.index(pos)]


# ---------------------------------------------------------------------------
# parameter layout and initialization


def stack_layout(layers: int, d_model: int, d_ff: int, vocab_size: int, max_len: int,
                 prefix: str = "", with_head: bool = True):
    """Ordered (name, shape, kind) triples for one encoder stack.

    The order is the checkpoint byte order and the RNG draw order, so it must
    stay fixed. ``kind`` selects the initializer: weight ~ N(0, 0.02),
    bias = 0, gain = 1.
    """
    layout: list[tuple[str, tuple[int, ...], str]] = []
    layout.append((prefix + "token_embed", (vocab_size, d_model), "weight"))
    layout.append((prefix + "pos_embed", (max_len, d_model), "weight"))
    for l in range(layers):
        lp = f"{prefix}layers.{l}."
        for proj in ("wq", "wk", "wv", "wo"):
            layout.append((lp + f"attn.{proj}", (d_model, d_model), "weight"))
        for b in ("bq", "bk", "bv", "bo"):
            layout.append((lp + f"attn.{b}", (d_model,), "bias"))
        layout.append((lp + "ln1.gain", (d_model,), "gain"))
        layout.append((lp + "ln1.bias", (d_model,), "bias"))
        layout.append((lp + "ffn.w1", (d_model, d_ff), "weight"))
        layout.append((lp + "ffn.b1", (d_ff,), "bias"))
        layout.append((lp + "ffn.w2", (d_ff, d_model), "weight"))
        layout.append((lp + "ffn.b2", (d_model,), "bias"))
        layout.append((lp + "ln2.gain", (d_model,), "gain"))
        layout.append((lp + "ln2.bias", (d_model,), "bias"))
    if with_head:
        layout.append((prefix + "head.w", (d_model, vocab_size), "weight"))
        layout.append((prefix + "head.b", (vocab_size,), "bias"))
    return layout


def model_layout(kind: str, cfg: ModelConfig):
    """Parameter layout for a model kind on a shared config."""
    if kind in ("slm", "clm", "mlm"):
        layout = stack_layout(cfg.layers, cfg.d_model, cfg.d_ff, cfg.vocab_size,
                              cfg.max_len, with_head=not cfg.tie_embeddings)
        if cfg.tie_embeddings:
            layout.append(("head.b", (cfg.vocab_size,), "bias"))
        return layout
    if kind == "bilm":
        d_half, heads, ff_half = bilm_half_dims(cfg)
        layout = []
        for prefix in ("fwd.", "bwd."):
            layout.extend(stack_layout(cfg.layers, d_half, ff_half, cfg.vocab_size,
                                       cfg.max_len, prefix=prefix, with_head=False))
        layout.append(("head.w", (cfg.d_model, cfg.vocab_size), "weight"))
        layout.append(("head.b", (cfg.vocab_size,), "bias"))
        return layout
    raise ContractError(f"unknown model kind {kind!r}")


def bilm_half_dims(cfg: ModelConfig):
    """Per-direction width for Bi-LM: half of d_model so total compute is ~2x CLM."""
    if cfg.d_model % 2 != 0:
        raise ContractError("bilm needs an even d_model")
    d_half = cfg.d_model // 2
    if d_half % cfg.heads != 0:
        raise ContractError(f"bilm half width {d_half} not divisible by heads={cfg.heads}")
    return d_half, cfg.heads, cfg.d_ff // 2


def init_params(kind: str, cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Deterministic seeded initialization in layout order."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dtype = cfg.np_dtype
    params: dict[str, Tensor] = {}
    for name, shape, kind_ in model_layout(kind, cfg):
        if kind_ == "weight":
            data = rng.normal(0.0, 0.02, size=shape)
        elif kind_ == "bias":
            data = np.zeros(shape)
        else:  # gain
            data = np.ones(shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True, dtype=dtype)
    return params


def param_count(kind: str, cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in model_layout(kind, cfg))


# ---------------------------------------------------------------------------
# shared encoder pieces

_MASK_CACHE: dict[int, MaskSet] = {}


def masks_for(n: int) -> MaskSet:
    m = _MASK_CACHE.get(n)
    if m is None:
        m = build_masks(n)
        _MASK_CACHE[n] = m
    return m


def _attention(params, lp: str, x_q: Tensor, x_kv: Tensor, allow: np.ndarray,
               heads: int, tc) -> Tensor:
    """Multi-head attention with one shared projection set.

    ``x_q`` supplies the queries, ``x_kv`` the keys and values (the same
    tensor for a content stream; the concatenated content states for the
    query stream). ``allow`` is (n_q, n_kv) boolean.
    """
    q = ag.add(ag.matmul(x_q, params[lp + "attn.wq"]), params[lp + "attn.bq"])
    k = ag.add(ag.matmul(x_kv, params[lp + "attn.wk"]), params[lp + "attn.bk"])
    v = ag.add(ag.matmul(x_kv, params[lp + "attn.wv"]), params[lp + "attn.bv"])
    d_model = q.shape[1]
    d_head = d_model // heads
    scale = 1.0 / math.sqrt(d_head)
    ctx_parts = []
    for h in range(heads):
        lo, hi = h * d_head, (h + 1) * d_head
        scores = ag.mul_const(ag.matmul(ag.slice_cols(q, lo, hi),
                                        ag.transpose(ag.slice_cols(k, lo, hi))), scale)
        probs = ag.masked_softmax(scores, allow)
        if tc is not None:
            probs = ag.dropout(probs, tc[1], tc[0])
        ctx_parts.append(ag.matmul(probs, ag.slice_cols(v, lo, hi)))
    ctx = ag.concat_cols(ctx_parts)
    return ag.add(ag.matmul(ctx, params[lp + "attn.wo"]), params[lp + "attn.bo"])


def _sublayer_finish(params, lp: str, x: Tensor, att_out: Tensor, tc) -> Tensor:
    """Residual + post-norm after attention, then the FFN sublayer."""
    h = ag.layer_norm(ag.add(x, att_out), params[lp + "ln1.gain"], params[lp + "ln1.bias"])
    ff = ag.relu(ag.add(ag.matmul(h, params[lp + "ffn.w1"]), params[lp + "ffn.b1"]))
    if tc is not None:
        ff = ag.dropout(ff, tc[1], tc[0])
    ff = ag.add(ag.matmul(ff, params[lp + "ffn.w2"]), params[lp + "ffn.b2"])
    return ag.layer_norm(ag.add(h, ff), params[lp + "ln2.gain"], params[lp + "ln2.bias"])


def _embed(params, prefix: str, tokens, n: int, dtype) -> tuple[Tensor, Tensor]:
    tok = ag.embedding(params[prefix + "token_embed"], np.asarray(tokens, dtype=np.int64))
    pos = ag.embedding(params[prefix + "pos_embed"], np.arange(n, dtype=np.int64))
    return tok, pos


def encode_single_stream(params, cfg: ModelConfig, tokens, allow: np.ndarray,
                         tc=None, prefix: str = "", layers: int | None = None,
                         heads: int | None = None) -> Tensor:
    """Plain masked encoder over one stream (CLM / MLM / one Bi-LM direction)."""
    n = len(tokens)
    tok, pos = _embed(params, prefix, tokens, n, cfg.np_dtype)
    x = ag.add(tok, pos)
    heads = cfg.heads if heads is None else heads
    for l in range(cfg.layers if layers is None else layers):
        lp = f"{prefix}layers.{l}."
        att = _attention(params, lp, x, x, allow, heads, tc)
        x = _sublayer_finish(params, lp, x, att, tc)
    return x


def head_logits(params, cfg: ModelConfig, states: Tensor) -> Tensor:
    if cfg.tie_embeddings:
        return ag.add(ag.matmul(states, ag.transpose(params["token_embed"])), params["head.b"])
    return ag.add(ag.matmul(states, params["head.w"]), params["head.b"])


def slm_forward(params, cfg: ModelConfig, seq: TokenSeq, tc=None,
                collect_states: bool = False):
    """One triple-stream pass; returns (logits over all n positions, StreamStates).

    Content streams start from token + position embeddings; the query stream
    starts from position embeddings alone. Each layer updates the content
    streams under their own masks and the query stream against the
    concatenation [forward; backward] of the previous layer's content states.
    """
    n = seq.n
    if n > cfg.max_len:
        raise LengthError(f"sequence of {n} positions exceeds max_len={cfg.max_len}")
    masks = masks_for(n)
    tok, pos = _embed(params, "", seq.tokens, n, cfg.np_dtype)
    content0 = ag.add(tok, pos)
    fwd, bwd, qry = content0, content0, pos
    states = StreamStates(fwd=[fwd], bwd=[bwd], query=[qry]) if collect_states else None
    for l in range(cfg.layers):
        lp = f"layers.{l}."
        f_att = _attention(params, lp, fwd, fwd, masks.forward, cfg.heads, tc)
        b_att = _attention(params, lp, bwd, bwd, masks.backward, cfg.heads, tc)
        kv = ag.concat_rows(fwd, bwd)  # layer l-1 states feed the query's K/V
        q_att = _attention(params, lp, qry, kv, masks.query, cfg.heads, tc)
        fwd = _sublayer_finish(params, lp, fwd, f_att, tc)
        bwd = _sublayer_finish(params, lp, bwd, b_att, tc)
        qry = _sublayer_finish(params, lp, qry, q_att, tc)
        if states is not None:
            states.fwd.append(fwd)
            states.bwd.append(bwd)
            states.query.append(qry)
    logits = head_logits(params, cfg, qry)
    return logits, states


def score_from_logits(logit_rows: np.ndarray, positions, targets, passes: int) -> SentenceScore:
    """Assemble a SentenceScore from the logits at the scored positions."""
    logp = ag.log_softmax_rows(logit_rows)
    per_token = [float(logp[r, t]) for r, t in enumerate(targets)]
    preds = [int(i) for i in logit_rows.argmax(axis=1)]  # ties: lowest index
    return SentenceScore(
        total=float(sum(per_token)),
        per_token=per_token,
        positions=list(positions),
        pred_tokens=preds,
        n_tokens=len(per_token),
        passes=passes,
    )


def _require_real_tokens(seq: TokenSeq) -> None:
    if seq.real_count < 1:
        raise ContractError("sequence has no real tokens to score (empty line?)")


class SlmModel:
    """Sliding LM: bidirectional per-token conditionals in one forward pass."""

    kind = "slm"

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params
        self.pass_count = 0  # encoder forward invocations, for the cost contract

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int) -> "SlmModel":
        return cls(cfg, init_params("slm", cfg, seed))

    def forward(self, seq: TokenSeq, tc=None, collect_states: bool = False):
        self.pass_count += 1
        return slm_forward(self.params, self.cfg, seq, tc=tc, collect_states=collect_states)

    def logits(self, seq: TokenSeq) -> np.ndarray:
        logits, _ = self.forward(seq)
        return logits.data

    def score(self, seq: TokenSeq) -> SentenceScore:
        """log P(y_i | y_<i, y_>i) for every real token, one pass total."""
        _require_real_tokens(seq)
        before = self.pass_count
        logits, _ = self.forward(seq)
        rows = list(seq.real_span)
        return score_from_logits(
            logits.data[rows],
            rows,
            [seq.tokens[i] for i in rows],
            passes=self.pass_count - before,
        )

    def loss(self, batch, tc=None) -> Tensor:
        """Mean NLL over all real-token positions of the batch."""
        if not batch:
            raise ContractError("loss of an empty batch")
        parts = []
        total = 0
        for seq in batch:
            _require_real_tokens(seq)
            logits, _ = self.forward(seq, tc=tc)
            rows = list(seq.real_span)
            sel = ag.gather_rows(logits, rows)
            parts.append(ag.cross_entropy(sel, [seq.tokens[i] for i in rows], reduction="sum"))
            total += len(rows)
        return ag.mul_const(ag.add_n(parts), 1.0 / total)


def checkpoint_config(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(**d)
