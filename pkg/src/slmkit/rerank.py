"""N-best reranking: interpolate base scores with LM scores, tune the weight.

The combined score per candidate is base_score + lambda * lm_score; lambda
is grid-searched on a dev split against corpus BLEU or WER. Oracle numbers
select each group's metric-optimal candidate and upper-bound any reranking.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from slmkit.errors import ContractError


@dataclass(frozen=True)
class Candidate:
    text: str
    base_score: float

    def __post_init__(self):
        if not math.isfinite(self.base_score):
            raise ContractError("candidate base_score must be finite")


@dataclass(frozen=True)
class NBestGroup:
    source_id: str
    candidates: tuple[Candidate, ...]
    reference: str | None = None

    def __post_init__(self):
        if not self.candidates:
            raise ContractError(f"n-best group {self.source_id!r} has no candidates")


@dataclass(frozen=True)
class NBestList:
    groups: tuple[NBestGroup, ...]

    def __len__(self) -> int:
        return len(self.groups)

    def references(self) -> list[str]:
        refs = [g.reference for g in self.groups]
        if any(r is None for r in refs):
            raise ContractError("references are required for this operation")
        return refs


@dataclass(frozen=True)
class LambdaGrid:
    lo: float
    hi: float
    step: float = 0.05

    def __post_init__(self):
        if self.lo > self.hi:
            raise ContractError("lambda grid needs lo <= hi")
        if self.step <= 0:
            raise ContractError("lambda grid needs step > 0")

    def values(self) -> list[float]:
        count = int(round((self.hi - self.lo) / self.step))
        vals = [self.lo + i * self.step for i in range(count + 1)]
        if vals[-1] > self.hi + 1e-12:
            vals.pop()
        return vals


def _check_alignment(nbest: NBestList, lm_scores) -> None:
    if len(lm_scores) != len(nbest.groups):
        raise ContractError("lm_scores groups do not align with the n-best list")
    for group, scores in zip(nbest.groups, lm_scores):
        if len(scores) != len(group.candidates):
            raise ContractError(
                f"lm_scores for group {group.source_id!r} do not align with its candidates"
            )


def rerank(nbest: NBestList, lm_scores, lam: float) -> list[int]:
    """Per group, the index of argmax(base + lambda * lm); ties keep the lowest index."""
    _check_alignment(nbest, lm_scores)
    chosen = []
    for group, scores in zip(nbest.groups, lm_scores):
        best_idx = 0
        best = group.candidates[0].base_score + lam * scores[0]
        for i in range(1, len(group.candidates)):
            combined = group.candidates[i].base_score + lam * scores[i]
            if combined > best:
                best, best_idx = combined, i
        chosen.append(best_idx)
    return chosen


def selected_texts(nbest: NBestList, chosen) -> list[str]:
    return [g.candidates[i].text for g, i in zip(nbest.groups, chosen)]


def tune_lambda(dev: NBestList, lm_scores, grid: LambdaGrid, metric: str):
    """Exhaustive grid search; returns (best_lambda, best_dev_metric).

    BLEU is maximized, WER minimized; metric ties keep the smallest lambda.
    """
    if metric not in ("bleu", "wer"):
        raise ContractError(f"unknown metric {metric!r}")
    values = grid.values()
    if not values:
        raise ContractError("empty lambda grid")
    refs = dev.references()
    best_lam = None
    best_val = None
    for lam in values:
        hyps = selected_texts(dev, rerank(dev, lm_scores, lam))
        val = bleu(refs, hyps) if metric == "bleu" else wer(refs, hyps)
        better = best_val is None or (val > best_val if metric == "bleu" else val < best_val)
        if better:
            best_lam, best_val = lam, val
    return best_lam, best_val


def _ngram_counts(words, order: int) -> Counter:
    return Counter(tuple(words[i:i + order]) for i in range(len(words) - order + 1))


def bleu(references, hypotheses) -> float:
    """Corpus BLEU-4 with brevity penalty, whitespace tokenization, in [0, 100].

    Orders >= 2 with zero matches get add-one smoothing ((m+1)/(t+1)); zero
    unigram matches mean a hard 0.0, matching the usual corpus-BLEU floor.
    """
    if len(references) != len(hypotheses):
        raise ContractError("bleu needs equally many references and hypotheses")
    if not references:
        raise ContractError("bleu needs at least one sentence pair")
    matches = [0] * 4
    totals = [0] * 4
    ref_len = 0
    hyp_len = 0
    for ref, hyp in zip(references, hypotheses):
        rwords = ref.split()
        hwords = hyp.split()
        ref_len += len(rwords)
        hyp_len += len(hwords)
        for order in range(1, 5):
            hcounts = _ngram_counts(hwords, order)
            if not hcounts:
                continue
            rcounts = _ngram_counts(rwords, order)
            totals[order - 1] += sum(hcounts.values())
            matches[order - 1] += sum(min(c, rcounts[g]) for g, c in hcounts.items())
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_prec = 0.0
    for order in range(4):
        m, t = matches[order], totals[order]
        if m == 0:
            m, t = m + 1, t + 1  # add-one smoothing for higher orders
        log_prec += math.log(m / t)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_prec / 4.0)


def edit_distance(ref_words, hyp_words) -> int:
    """Word-level Levenshtein distance (substitutions, insertions, deletions)."""
    n, m = len(ref_words), len(hyp_words)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ref_words[i - 1] != hyp_words[j - 1])
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[m]


def wer(references, hypotheses) -> float:
    """Corpus WER: total word edits divided by total reference words."""
    if len(references) != len(hypotheses):
        raise ContractError("wer needs equally many references and hypotheses")
    total_edits = 0
    total_words = 0
    for ref, hyp in zip(references, hypotheses):
        rwords = ref.split()
        total_edits += edit_distance(rwords, hyp.split())
        total_words += len(rwords)
    if total_words == 0:
        raise ContractError("wer reference corpus holds no words")
    return total_edits / total_words


def sentence_metric(metric: str, reference: str, hypothesis: str) -> float:
    """Per-sentence selection score for the oracle (higher is better).

    Sentence BLEU reuses the smoothed corpus formula on a single pair, an
    approximation since corpus BLEU does not decompose; WER negates edits
    per reference word.
    """
    if metric == "bleu":
        return bleu([reference], [hypothesis])
    if metric == "wer":
        rwords = reference.split()
        edits = edit_distance(rwords, hypothesis.split())
        return -edits / max(1, len(rwords))
    raise ContractError(f"unknown metric {metric!r}")


def oracle(nbest: NBestList, metric: str) -> float:
    """Corpus metric when every group picks its metric-optimal candidate."""
    refs = nbest.references()
    chosen = []
    for group in nbest.groups:
        best_idx = 0
        best = sentence_metric(metric, group.reference, group.candidates[0].text)
        for i in range(1, len(group.candidates)):
            val = sentence_metric(metric, group.reference, group.candidates[i].text)
            if val > best:
                best, best_idx = val, i
        chosen.append(best_idx)
    hyps = selected_texts(nbest, chosen)
    return bleu(refs, hyps) if metric == "bleu" else wer(refs, hyps)


# ---------------------------------------------------------------------------
# file formats: TSV n-best (source_id, candidate_rank, base_score, text) and
# one reference line per source, ordered by first appearance of the source id.


def parse_nbest_tsv(lines, references=None) -> NBestList:
    order: list[str] = []
    by_source: dict[str, list[tuple[int, Candidate]]] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ContractError(f"n-best line {lineno}: expected 4 tab-separated fields")
        source_id, rank_s, score_s, text = fields
        try:
            rank = int(rank_s)
            score = float(score_s)
        except ValueError as exc:
            raise ContractError(f"n-best line {lineno}: {exc}") from exc
        if source_id not in by_source:
            order.append(source_id)
            by_source[source_id] = []
        by_source[source_id].append((rank, Candidate(text=text, base_score=score)))
    if not order:
        raise ContractError("n-best file holds no candidates")
    if references is not None and len(references) != len(order):
        raise ContractError(
            f"{len(references)} reference lines for {len(order)} sources"
        )
    groups = []
    for i, sid in enumerate(order):
        cands = tuple(c for _, c in sorted(by_source[sid], key=lambda rc: rc[0]))
        ref = references[i] if references is not None else None
        groups.append(NBestGroup(source_id=sid, candidates=cands, reference=ref))
    return NBestList(groups=tuple(groups))


def load_nbest(nbest_path, refs_path=None) -> NBestList:
    refs = None
    if refs_path is not None:
        with open(refs_path, "r", encoding="utf-8") as fh:
            refs = [line.rstrip("\n") for line in fh]
        while refs and refs[-1] == "":
            refs.pop()
    with open(nbest_path, "r", encoding="utf-8") as fh:
        return parse_nbest_tsv(fh, refs)


def split_dev_test(nbest: NBestList, dev_fraction: float) -> tuple[NBestList, NBestList]:
    """Leading fraction of groups becomes the dev split (file order, deterministic)."""
    if not 0.0 < dev_fraction < 1.0:
        raise ContractError("dev fraction must be in (0, 1)")
    cut = max(1, int(round(dev_fraction * len(nbest.groups))))
    cut = min(cut, len(nbest.groups) - 1) if len(nbest.groups) > 1 else 1
    return (NBestList(groups=nbest.groups[:cut]),
            NBestList(groups=nbest.groups[cut:]))
