"""Executable acceptance gate: leakage, mask and gradient invariant suites."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from slmkit import autograd as ag
from slmkit.autograd import Tape, Tensor, finite_diff_grad
from slmkit.baselines import MlmModel
from slmkit.errors import FullyMaskedRowError
from slmkit.masks import build_masks, verify_no_leakage
from slmkit.model import ModelConfig, SlmModel, TokenSeq


def _check_mask_algebra(n_max: int = 64):
    for n in range(3, n_max + 1):
        m = build_masks(n)
        for i in range(n):
            fwd_cols = set(np.flatnonzero(m.query[i, :n]))
            bwd_cols = set(np.flatnonzero(m.query[i, n:]))
            if fwd_cols != set(range(i)) or bwd_cols != set(range(i + 1, n)):
                return False, f"query row {i} wrong at n={n}"
            if fwd_cols & bwd_cols:
                return False, f"query halves overlap at n={n}, i={i}"
        if not (np.array_equal(m.forward, np.tril(np.ones((n, n), bool)))
                and np.array_equal(m.backward, np.triu(np.ones((n, n), bool)))):
            return False, f"content masks wrong at n={n}"
    return True, f"query rows partition {{j != i}} for n in 3..{n_max}"


def _check_leakage_reachability():
    m = build_masks(8)
    for depth in (1, 2, 3, 4):
        if not verify_no_leakage(m, depth).passed:
            return False, f"built masks leak at depth {depth}"
    full = np.ones((8, 8), dtype=bool)
    corrupted = replace(m, forward=full, backward=full)
    if not verify_no_leakage(corrupted, 1).passed:
        return False, "corrupted masks should still pass at depth 1"
    report = verify_no_leakage(corrupted, 4)
    if report.passed or report.first_failure_depth() != 2:
        return False, "corrupted masks should first leak at depth 2"
    return True, "reachability clean at depths 1..4; corrupted variant leaks at depth 2"


def _check_masked_softmax():
    t = Tensor([[1.0, 2.0, 3.0]])
    out = ag.masked_softmax(t, np.array([[True, False, True]]))
    if out.data[0, 1] != 0.0 or abs(out.data.sum() - 1.0) > 1e-6:
        return False, "masked softmax row is wrong"
    try:
        ag.masked_softmax(t, np.array([[False, False, False]]))
    except FullyMaskedRowError:
        pass
    else:
        return False, "fully-masked row did not error"
    return True, "rows renormalize with exact zeros; empty rows refused"


def _check_gradients():
    cfg = ModelConfig(layers=2, d_model=8, heads=2, d_ff=16, vocab_size=7,
                      max_len=6, dropout=0.0)
    model = SlmModel.init(cfg, seed=7)
    seq = TokenSeq.wrap([5, 6, 5])

    def f():
        return float(model.loss([seq]).data)

    names = list(model.params)
    fd = finite_diff_grad(f, [model.params[n] for n in names])
    with Tape() as tape:
        loss = model.loss([seq])
    tape.backward(loss)
    worst = 0.0
    for name, g_fd in zip(names, fd):
        g_bp = model.params[name].grad
        g_bp = np.zeros_like(g_fd) if g_bp is None else g_bp
        denom = np.maximum(np.maximum(np.abs(g_fd), np.abs(g_bp)), 1e-6)
        worst = max(worst, float((np.abs(g_fd - g_bp) / denom).max()))
    if worst > 1e-4:
        return False, f"finite differences disagree: max rel err {worst:.2e}"
    return True, f"all {sum(p.size for p in model.params.values())} coords agree (max rel err {worst:.1e})"


def _check_self_invariance():
    cfg = ModelConfig(layers=2, d_model=16, heads=2, d_ff=32, vocab_size=8,
                      max_len=8, dropout=0.0)
    model = SlmModel.init(cfg, seed=3)
    seq = TokenSeq.wrap([5, 6, 7])
    base = model.logits(seq)
    for i in seq.real_span:
        for v in range(cfg.vocab_size):
            if v == seq.tokens[i]:
                continue
            if not np.array_equal(model.logits(seq.replaced(i, v))[i], base[i]):
                return False, f"logits row {i} moved under substitution"
    return True, "logits rows ignore their own token (bit-identical)"


def _check_pass_counters():
    cfg = ModelConfig(layers=1, d_model=8, heads=2, d_ff=16, vocab_size=8,
                      max_len=12, dropout=0.0)
    slm = SlmModel.init(cfg, seed=0)
    seq = TokenSeq.wrap([5, 6, 7, 5, 6, 7])
    if slm.score(seq).passes != 1:
        return False, "sliding scorer took more than one pass"
    mlm = MlmModel.init(cfg, seed=0)
    for k, want in ((1, 6), (2, 3), (4, 2)):
        if mlm.score(seq, k=k).passes != want:
            return False, f"mlm k={k} pass count wrong"
    return True, "slm scores in 1 pass; mlm(k) in ceil(n/k)"


CHECKS = [
    ("mask-algebra", _check_mask_algebra),
    ("leakage-reachability", _check_leakage_reachability),
    ("masked-softmax", _check_masked_softmax),
    ("self-invariance", _check_self_invariance),
    ("pass-counters", _check_pass_counters),
    ("gradient-check", _check_gradients),
]


def run_selftest(out=print) -> bool:
    all_ok = True
    for name, check in CHECKS:
        ok, detail = check()
        all_ok &= ok
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    out("selftest " + ("PASS" if all_ok else "FAIL"))
    return all_ok
