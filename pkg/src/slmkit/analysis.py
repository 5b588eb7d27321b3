"""Diagnostics: per-position cross-entropy profiles, token accuracy, cost tables."""

from __future__ import annotations

from dataclasses import dataclass

from slmkit.baselines import pass_cost
from slmkit.errors import ContractError


@dataclass
class PositionProfile:
    """Mean cross-entropy of the scored distribution at each real position."""

    n: int
    per_position_ce: list[float]
    sample_count: int


def _check_uniform_length(seqs) -> int:
    if not seqs:
        raise ContractError("profile needs at least one sentence")
    n = seqs[0].real_count
    for seq in seqs:
        if seq.real_count != n:
            raise ContractError(
                f"mixed sentence lengths: expected {n} real tokens, got {seq.real_count}"
            )
    return n


def position_profile(score_fn, seqs) -> PositionProfile:
    """Average -log P per real position over same-length sentences.

    ``score_fn`` maps a TokenSeq to a SentenceScore; scorers that also score
    sentinels (CLM scores EOS) contribute only their real positions here.
    """
    n = _check_uniform_length(seqs)
    sums = [0.0] * n
    for seq in seqs:
        score = score_fn(seq)
        for slot, pos in enumerate(seq.real_span):
            sums[slot] += -score.logprob_at(pos)
    count = len(seqs)
    return PositionProfile(
        n=n,
        per_position_ce=[s / count for s in sums],
        sample_count=count,
    )


def token_accuracy(score_fn, seqs) -> float:
    """Fraction of real positions whose argmax prediction is the true token.

    Argmax ties resolve to the lowest vocabulary index.
    """
    n = _check_uniform_length(seqs)
    hits = 0
    for seq in seqs:
        score = score_fn(seq)
        at = dict(zip(score.positions, score.pred_tokens))
        hits += sum(1 for pos in seq.real_span if at[pos] == seq.tokens[pos])
    return hits / (n * len(seqs))


def cost_report(n_values, k_values):
    """PassCost rows reproducing the one-vs-many-passes cost columns.

    Returns (kind, k, n, passes, relative_compute) tuples for every scorer
    and requested sentence length.
    """
    rows = []
    for n in n_values:
        rows.append(("clm", None, n, *_cost("clm", n)))
        for k in k_values:
            rows.append(("mlm", k, n, *_cost("mlm", n, k)))
        rows.append(("bilm", None, n, *_cost("bilm", n)))
        rows.append(("slm", None, n, *_cost("slm", n)))
    return rows


def _cost(kind, n, k=None):
    c = pass_cost(kind, n, k)
    return c.passes, c.relative_compute


def profile_csv(profile: PositionProfile) -> str:
    lines = ["position,mean_ce,samples"]
    for i, ce in enumerate(profile.per_position_ce, start=1):
        lines.append(f"{i},{ce:.10g},{profile.sample_count}")
    return "\n".join(lines) + "\n"


def profile_chart(profile: PositionProfile, width: int = 50) -> str:
    """ASCII bar chart of a profile; no graphics dependency."""
    top = max(profile.per_position_ce) or 1.0
    lines = []
    for i, ce in enumerate(profile.per_position_ce, start=1):
        bar = "#" * int(round(width * ce / top))
        lines.append(f"{i:3d} {ce:8.4f} {bar}")
    return "\n".join(lines) + "\n"
