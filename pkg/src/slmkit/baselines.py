"""CLM, MLM(k) and Bi-LM sentence scorers on the shared backbone.

All scorers return the same SentenceScore shape as the sliding LM so the
rerank and analysis layers stay scorer-agnostic. Pass counting follows the
cost accounting of the one-vs-many-passes comparison: CLM/Bi-LM/SLM need one
encoder pass per sentence, MLM(k) needs ceil(n/k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from slmkit import autograd as ag
from slmkit.autograd import Tensor
from slmkit.errors import ContractError
from slmkit.model import (
    ModelConfig,
    SentenceScore,
    SlmModel,
    TokenSeq,
    _require_real_tokens,
    bilm_half_dims,
    encode_single_stream,
    head_logits,
    init_params,
    masks_for,
    score_from_logits,
)
from slmkit.vocab import MASK_ID

MODEL_KINDS = ("slm", "clm", "mlm", "bilm")


@dataclass(frozen=True)
class MlmPartition:
    """Disjoint index subsets covering the real span, each of size <= k."""

    k: int
    subsets: tuple[tuple[int, ...], ...]
    seed: int

    @property
    def passes(self) -> int:
        return len(self.subsets)


def mlm_partition(seq: TokenSeq, k: int, seed: int) -> MlmPartition:
    """Randomly split the real positions into ceil(m/k) subsets of size <= k."""
    m = seq.real_count
    if not 1 <= k <= m:
        raise ContractError(f"k={k} out of range for a {m}-token sentence")
    idx = np.array(list(seq.real_span), dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    rng.shuffle(idx)
    subsets = tuple(
        tuple(int(i) for i in sorted(idx[lo:lo + k])) for lo in range(0, m, k)
    )
    assert len(subsets) == math.ceil(m / k)
    return MlmPartition(k=k, subsets=subsets, seed=seed)


@dataclass(frozen=True)
class PassCost:
    model_kind: str
    passes: int
    relative_compute: float


def pass_cost(kind: str, n: int, k: int | None = None) -> PassCost:
    """Encoder passes and relative compute for scoring one n-token sentence."""
    if n < 1:
        raise ContractError("pass_cost needs n >= 1")
    if kind == "clm":
        return PassCost("clm", 1, 1.0)
    if kind == "mlm":
        if k is None:
            raise ContractError("pass_cost for mlm needs k")
        if k < 1:
            raise ContractError("pass_cost needs k >= 1")
        passes = math.ceil(n / k)
        return PassCost("mlm", passes, float(passes))
    if kind == "bilm":
        return PassCost("bilm", 1, 2.0)
    if kind == "slm":
        return PassCost("slm", 1, 3.0)
    raise ContractError(f"unknown model kind {kind!r}")


class ClmModel:
    """Left-to-right scorer: position i predicted from the state at i-1.

    Scores every real token and EOS (sentence termination), never BOS, so
    its totals are normalized differently from the bidirectional scorers.
    """

    kind = "clm"

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params
        self.pass_count = 0

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int) -> "ClmModel":
        return cls(cfg, init_params("clm", cfg, seed))

    def _encode(self, tokens, tc=None) -> Tensor:
        self.pass_count += 1
        allow = masks_for(len(tokens)).forward
        return encode_single_stream(self.params, self.cfg, tokens, allow, tc=tc)

    def prediction_logits(self, seq: TokenSeq, tc=None) -> Tensor:
        """Logits predicting tokens[1..n-1] from states[0..n-2]."""
        states = self._encode(seq.tokens, tc=tc)
        return head_logits(self.params, self.cfg, ag.gather_rows(states, list(range(seq.n - 1))))

    def score(self, seq: TokenSeq) -> SentenceScore:
        _require_real_tokens(seq)
        before = self.pass_count
        logits = self.prediction_logits(seq)
        positions = list(range(1, seq.n))  # real tokens plus EOS
        return score_from_logits(
            logits.data,
            positions,
            [seq.tokens[i] for i in positions],
            passes=self.pass_count - before,
        )

    def loss(self, batch, tc=None) -> Tensor:
        if not batch:
            raise ContractError("loss of an empty batch")
        parts = []
        total = 0
        for seq in batch:
            _require_real_tokens(seq)
            logits = self.prediction_logits(seq, tc=tc)
            targets = list(seq.tokens[1:])
            parts.append(ag.cross_entropy(logits, targets, reduction="sum"))
            total += len(targets)
        return ag.mul_const(ag.add_n(parts), 1.0 / total)


class MlmModel:
    """Masked LM scorer: ceil(n/k) fully-visible passes, each masking one subset."""

    kind = "mlm"

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params
        self.pass_count = 0

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int) -> "MlmModel":
        return cls(cfg, init_params("mlm", cfg, seed))

    def _encode(self, tokens, tc=None) -> Tensor:
        self.pass_count += 1
        n = len(tokens)
        allow = np.ones((n, n), dtype=bool)
        return encode_single_stream(self.params, self.cfg, tokens, allow, tc=tc)

    def masked_logits(self, seq: TokenSeq, masked, tc=None) -> Tensor:
        """Logits at the masked positions, with those inputs replaced by MASK."""
        tokens = list(seq.tokens)
        for i in masked:
            tokens[i] = MASK_ID
        states = self._encode(tokens, tc=tc)
        return head_logits(self.params, self.cfg, ag.gather_rows(states, list(masked)))

    def score(self, seq: TokenSeq, k: int = 1, seed: int = 0) -> SentenceScore:
        """Pseudo-log-likelihood with k tokens masked per pass."""
        _require_real_tokens(seq)
        before = self.pass_count
        part = mlm_partition(seq, k, seed)
        logp_at: dict[int, float] = {}
        pred_at: dict[int, int] = {}
        for subset in part.subsets:
            logits = self.masked_logits(seq, subset)
            logp = ag.log_softmax_rows(logits.data)
            for r, i in enumerate(subset):
                logp_at[i] = float(logp[r, seq.tokens[i]])
                pred_at[i] = int(logits.data[r].argmax())
        positions = list(seq.real_span)
        per_token = [logp_at[i] for i in positions]
        return SentenceScore(
            total=float(sum(per_token)),
            per_token=per_token,
            positions=positions,
            pred_tokens=[pred_at[i] for i in positions],
            n_tokens=len(positions),
            passes=self.pass_count - before,
        )

    def loss(self, batch, rng: np.random.Generator, mask_rate: float = 0.15,
             bert_style: bool = False, tc=None) -> Tensor:
        """Mask ~mask_rate of real tokens per sample; loss on masked positions only."""
        if not batch:
            raise ContractError("loss of an empty batch")
        parts = []
        total = 0
        for seq in batch:
            _require_real_tokens(seq)
            m = seq.real_count
            n_mask = max(1, round(mask_rate * m))
            chosen = rng.choice(np.array(list(seq.real_span)), size=n_mask, replace=False)
            chosen = sorted(int(i) for i in chosen)
            tokens = list(seq.tokens)
            for i in chosen:
                if bert_style:
                    roll = rng.random()
                    if roll < 0.8:
                        tokens[i] = MASK_ID
                    elif roll < 0.9:
                        tokens[i] = int(rng.integers(0, self.cfg.vocab_size))
                    # else keep the original token
                else:
                    tokens[i] = MASK_ID
            states = self._encode(tokens, tc=tc)
            logits = head_logits(self.params, self.cfg, ag.gather_rows(states, chosen))
            parts.append(ag.cross_entropy(logits, [seq.tokens[i] for i in chosen],
                                          reduction="sum"))
            total += len(chosen)
        return ag.mul_const(ag.add_n(parts), 1.0 / total)


class BiLmModel:
    """Two independent half-width unidirectional stacks, concatenated at the end.

    Prediction for position i concatenates the left-to-right state at i-1
    with the right-to-left state at i+1 and projects to the vocabulary; the
    directions never interact before that projection.
    """

    kind = "bilm"

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        bilm_half_dims(cfg)  # validate widths
        self.cfg = cfg
        self.params = params
        self.pass_count = 0

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int) -> "BiLmModel":
        return cls(cfg, init_params("bilm", cfg, seed))

    def _direction_states(self, seq: TokenSeq, tc=None) -> tuple[Tensor, Tensor]:
        masks = masks_for(seq.n)
        fwd = encode_single_stream(self.params, self.cfg, seq.tokens, masks.forward,
                                   tc=tc, prefix="fwd.")
        bwd = encode_single_stream(self.params, self.cfg, seq.tokens, masks.backward,
                                   tc=tc, prefix="bwd.")
        return fwd, bwd

    def prediction_logits(self, seq: TokenSeq, tc=None) -> Tensor:
        """Logits for the real positions from shifted directional states."""
        self.pass_count += 1  # one scoring pass; the x2 compute is reported separately
        fwd, bwd = self._direction_states(seq, tc=tc)
        rows = list(seq.real_span)
        left = ag.gather_rows(fwd, [i - 1 for i in rows])
        right = ag.gather_rows(bwd, [i + 1 for i in rows])
        joint = ag.concat_cols([left, right])
        return ag.add(ag.matmul(joint, self.params["head.w"]), self.params["head.b"])

    def score(self, seq: TokenSeq) -> SentenceScore:
        _require_real_tokens(seq)
        before = self.pass_count
        logits = self.prediction_logits(seq)
        rows = list(seq.real_span)
        return score_from_logits(
            logits.data,
            rows,
            [seq.tokens[i] for i in rows],
            passes=self.pass_count - before,
        )

    def loss(self, batch, tc=None) -> Tensor:
        if not batch:
            raise ContractError("loss of an empty batch")
        parts = []
        total = 0
        for seq in batch:
            _require_real_tokens(seq)
            logits = self.prediction_logits(seq, tc=tc)
            rows = list(seq.real_span)
            parts.append(ag.cross_entropy(logits, [seq.tokens[i] for i in rows],
                                          reduction="sum"))
            total += len(rows)
        return ag.mul_const(ag.add_n(parts), 1.0 / total)


MODEL_CLASSES = {
    "slm": SlmModel,
    "clm": ClmModel,
    "mlm": MlmModel,
    "bilm": BiLmModel,
}
