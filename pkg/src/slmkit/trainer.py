"""Desk-scale pretraining: Adam with warmup + linear decay, seeded batching.

The full-size recipe (125k steps, 8192-token batches, multi-GPU FP16) is out
of scope; defaults here keep its ratios at a size a CPU finishes in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from slmkit import autograd as ag
from slmkit.autograd import Tape
from slmkit.baselines import MODEL_CLASSES
from slmkit.errors import ContractError
from slmkit.model import ModelConfig, TokenSeq
from slmkit.vocab import EOS_ID


@dataclass(frozen=True)
class TrainConfig:
    lr_peak: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-6
    weight_decay: float = 0.01
    warmup_steps: int = 100
    total_steps: int = 2000
    batch_tokens: int = 2048
    packing: str = "sentence"  # or "stream"
    stream_len: int = 64
    seed: int = 0
    mask_rate: float = 0.15        # MLM objective only
    bert_masking: bool = False     # 80/10/10 mask/random/keep instead of plain MASK
    clip_norm: float = 1.0         # 0 disables clipping
    log_every: int = 50
    ckpt_every: int = 0            # 0 = final checkpoint only

    def __post_init__(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ContractError("need 0 <= warmup_steps < total_steps")
        if self.packing not in ("sentence", "stream"):
            raise ContractError(f"unknown packing {self.packing!r}")
        if self.batch_tokens < 3:
            raise ContractError("batch_tokens too small to hold a sentence")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear 0 -> lr_peak over warmup, then linear decay to 0 at total_steps."""
    if not 0 <= step <= cfg.total_steps:
        raise ContractError(f"step {step} outside [0, {cfg.total_steps}]")
    if step <= cfg.warmup_steps:
        if cfg.warmup_steps == 0:
            return cfg.lr_peak
        return cfg.lr_peak * step / cfg.warmup_steps
    return cfg.lr_peak * (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)


def adam_init(params) -> dict:
    return {
        name: {"m": np.zeros_like(t.data), "v": np.zeros_like(t.data)}
        for name, t in params.items()
    }


def adam_step(params, grads, state, step: int, cfg: TrainConfig, lr: float | None = None):
    """One bias-corrected Adam update with decoupled weight decay.

    Decay multiplies weight matrices (2-D parameters) by (1 - lr * wd);
    biases and layer-norm parameters are never decayed. ``step`` is 1-based.
    Updates params in place and returns (params, state).
    """
    if step < 1:
        raise ContractError("adam step index is 1-based")
    if lr is None:
        lr = lr_at(step, cfg)
    b1, b2 = cfg.betas
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, t in params.items():
        g = grads[name]
        if g.shape != t.data.shape:
            raise ContractError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise ContractError(f"non-finite gradient in {name} at step {step}")
        st = state[name]
        st["m"] = b1 * st["m"] + (1.0 - b1) * g
        st["v"] = b2 * st["v"] + (1.0 - b2) * (g * g)
        m_hat = st["m"] / c1
        v_hat = st["v"] / c2
        if cfg.weight_decay and t.data.ndim == 2:
            t.data *= 1.0 - lr * cfg.weight_decay
        t.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return params, state


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so the global norm is <= max_norm; returns the norm."""
    norm = ag.global_grad_norm(list(grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _stream_chunks(corpus, cfg: TrainConfig):
    """Concatenate real tokens EOS-separated, then chunk and re-wrap."""
    stream: list[int] = []
    for seq in corpus:
        stream.extend(seq.tokens[i] for i in seq.real_span)
        stream.append(EOS_ID)
    chunks = []
    for lo in range(0, len(stream), cfg.stream_len):
        chunk = stream[lo:lo + cfg.stream_len]
        if chunk:
            chunks.append(TokenSeq.wrap(chunk))
    return chunks


def make_batches(corpus, cfg: TrainConfig, max_len: int, epoch: int = 0):
    """Deterministically shuffled batches for one epoch.

    Sentence packing keeps one sentence per sample and fills batches up to
    ``batch_tokens`` positions; stream packing chunks the EOS-joined corpus
    to ``stream_len`` first. Over-long sentences are skipped and counted.
    Returns (batches, skipped_count).
    """
    if not corpus:
        raise ContractError("make_batches needs a non-empty corpus")
    samples = _stream_chunks(corpus, cfg) if cfg.packing == "stream" else list(corpus)
    kept = [s for s in samples if s.n <= max_len and s.real_count >= 1]
    skipped = len(samples) - len(kept)
    if not kept:
        raise ContractError("every sample was skipped (all longer than max_len?)")
    order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(len(kept))
    batches: list[list[TokenSeq]] = []
    cur: list[TokenSeq] = []
    cur_tokens = 0
    for idx in order:
        seq = kept[int(idx)]
        if cur and cur_tokens + seq.n > cfg.batch_tokens:
            batches.append(cur)
            cur, cur_tokens = [], 0
        cur.append(seq)
        cur_tokens += seq.n
    if cur:
        batches.append(cur)
    return batches, skipped


@dataclass
class TrainResult:
    model: object
    curve: list = field(default_factory=list)  # (step, lr, loss) triples
    skipped_sentences: int = 0


def _batch_loss(model, batch, mask_rng, cfg: TrainConfig, tc):
    if model.kind == "mlm":
        return model.loss(batch, mask_rng, mask_rate=cfg.mask_rate,
                          bert_style=cfg.bert_masking, tc=tc)
    return model.loss(batch, tc=tc)


def train(model_kind: str, model_cfg: ModelConfig, train_cfg: TrainConfig, corpus,
          out_dir=None, vocab=None, verbose: bool = False) -> TrainResult:
    """Run the full training loop; optionally checkpoint into ``out_dir``.

    All randomness (init, shuffling, masking, dropout) derives from
    ``train_cfg.seed``, so identical configs reproduce identical curves.
    """
    if model_kind not in MODEL_CLASSES:
        raise ContractError(f"unknown model kind {model_kind!r}")
    model = MODEL_CLASSES[model_kind].init(model_cfg, train_cfg.seed)
    state = adam_init(model.params)
    root = np.random.SeedSequence(train_cfg.seed)
    drop_ss, mask_ss = root.spawn(2)
    drop_rng = np.random.default_rng(drop_ss)
    mask_rng = np.random.default_rng(mask_ss)
    tc = (drop_rng, model_cfg.dropout) if model_cfg.dropout > 0 else None

    result = TrainResult(model=model)
    step = 0
    epoch = 0
    while step < train_cfg.total_steps:
        batches, skipped = make_batches(corpus, train_cfg, model_cfg.max_len, epoch)
        if epoch == 0:
            result.skipped_sentences = skipped
            if skipped and verbose:
                print(f"warning: skipped {skipped} over-long sentences")
        for batch in batches:
            step += 1
            lr = lr_at(step, train_cfg)
            with Tape() as tape:
                loss = _batch_loss(model, batch, mask_rng, train_cfg, tc)
            if not np.isfinite(loss.data):
                raise ContractError(f"non-finite loss at step {step}")
            tape.backward(loss)
            grads = {
                name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in model.params.items()
            }
            clip_gradients(grads, train_cfg.clip_norm)
            adam_step(model.params, grads, state, step, train_cfg, lr=lr)
            for t in model.params.values():
                t.zero_grad()
            result.curve.append((step, lr, float(loss.data)))
            if verbose and (step % train_cfg.log_every == 0 or step == 1):
                print(f"step {step:6d}  lr {lr:.3e}  loss {float(loss.data):.4f}")
            if out_dir is not None and train_cfg.ckpt_every and step % train_cfg.ckpt_every == 0:
                _save(model, train_cfg.seed, vocab, out_dir, f"ckpt_step{step}.slmckpt")
            if step >= train_cfg.total_steps:
                break
        epoch += 1
    if out_dir is not None:
        _save(model, train_cfg.seed, vocab, out_dir, "model.slmckpt")
        write_curve(result.curve, out_dir)
    return result


def _save(model, seed, vocab, out_dir, name):
    from slmkit.checkpoint import save_checkpoint
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / name, model, seed=seed, vocab=vocab)


def write_curve(curve, out_dir) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "loss_curve.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,lr,loss\n")
        for step, lr, loss in curve:
            fh.write(f"{step},{lr:.10g},{loss:.10g}\n")


def train_config_fields() -> dict:
    return asdict(TrainConfig())
