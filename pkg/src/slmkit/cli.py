"""Command-line entry point: build-vocab, train, score, rerank, analyze, masks, selftest.

Contract errors exit nonzero with a single machine-parseable line of the
form ``error: <message>`` on stderr. All randomness flows from --seed, so
identical invocations produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from slmkit import __version__
from slmkit.errors import ContractError


def _read_lines(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _non_empty(lines) -> list[str]:
    return [ln for ln in lines if ln.strip()]


# ---------------------------------------------------------------------------
# train config files: flat key=value lines, '#' comments


_MODEL_KEYS = {
    "layers": int, "d_model": int, "heads": int, "d_ff": int, "vocab_size": int,
    "max_len": int, "dropout": float, "tie_embeddings": bool, "dtype": str,
    "preset": str,
}
_TRAIN_KEYS = {
    "lr_peak": float, "beta1": float, "beta2": float, "eps": float,
    "weight_decay": float, "warmup_steps": int, "total_steps": int,
    "batch_tokens": int, "packing": str, "stream_len": int, "mask_rate": float,
    "bert_masking": bool, "clip_norm": float, "log_every": int, "ckpt_every": int,
}


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ContractError(f"not a boolean: {s!r}")


def parse_config_file(path) -> tuple[dict, dict]:
    model_kw: dict = {}
    train_kw: dict = {}
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _MODEL_KEYS:
            typ, target = _MODEL_KEYS[key], model_kw
        elif key in _TRAIN_KEYS:
            typ, target = _TRAIN_KEYS[key], train_kw
        else:
            raise ContractError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            target[key] = _parse_bool(value) if typ is bool else typ(value)
        except ValueError as exc:
            raise ContractError(f"{path}:{lineno}: {exc}") from exc
    return model_kw, train_kw


def _build_configs(model_kw: dict, train_kw: dict, seed: int, vocab_size: int):
    from slmkit.model import ModelConfig, PRESETS
    from slmkit.trainer import TrainConfig

    kw = dict(layers=2, d_model=64, heads=2, d_ff=128, max_len=64, dropout=0.1)
    preset = model_kw.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ContractError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
        kw.update(PRESETS[preset])
    kw.update(model_kw)
    kw.setdefault("vocab_size", vocab_size)
    model_cfg = ModelConfig(**kw)

    beta1 = train_kw.pop("beta1", 0.9)
    beta2 = train_kw.pop("beta2", 0.98)
    train_cfg = TrainConfig(betas=(beta1, beta2), seed=seed, **train_kw)
    return model_cfg, train_cfg


def _load_model(ckpt_path, expect_kind=None):
    from slmkit.checkpoint import load_checkpoint

    model, seed, vocab = load_checkpoint(ckpt_path)
    if expect_kind is not None and model.kind != expect_kind:
        raise ContractError(
            f"checkpoint holds a {model.kind} model but --model says {expect_kind}"
        )
    if vocab is None:
        raise ContractError("checkpoint carries no vocabulary; retrain with one")
    return model, seed, vocab


def _score_seq(model, seq, k: int, seed: int):
    if model.kind == "mlm":
        return model.score(seq, k=k, seed=seed)
    return model.score(seq)


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_vocab(args) -> int:
    from slmkit.vocab import build_vocab, save_vocab

    lines = _read_lines(args.corpus)
    vocab = build_vocab(lines, max_size=args.max_size,
                        mode="char" if args.char else "word")
    save_vocab(vocab, args.out)
    print(f"wrote {vocab.size} tokens ({vocab.mode} mode) to {args.out}")
    return 0


def cmd_train(args) -> int:
    from slmkit.trainer import train
    from slmkit.vocab import build_vocab, encode_sentence, load_vocab

    model_kw, train_kw = parse_config_file(args.config)
    lines = _non_empty(_read_lines(args.corpus))
    if args.vocab:
        vocab = load_vocab(args.vocab)
    else:
        vocab = build_vocab(lines, max_size=model_kw.get("vocab_size"),
                            mode="char" if args.char else "word")
    model_cfg, train_cfg = _build_configs(model_kw, train_kw, args.seed, vocab.size)
    if model_cfg.vocab_size != vocab.size:
        raise ContractError(
            f"config vocab_size={model_cfg.vocab_size} but vocabulary has {vocab.size}"
        )
    corpus = []
    for line in lines:
        try:
            corpus.append(encode_sentence(vocab, line))
        except ContractError:
            continue  # over-long and empty lines are skipped by batching anyway
    result = train(args.model, model_cfg, train_cfg, corpus,
                   out_dir=args.out, vocab=vocab, verbose=True)
    final = result.curve[-1]
    print(f"done: {final[0]} steps, final loss {final[2]:.4f}; "
          f"checkpoint in {args.out}")
    return 0


def cmd_score(args) -> int:
    model, _, vocab = _load_model(args.ckpt, args.model)
    from slmkit.vocab import encode_sentence

    lines = _read_lines(args.input)
    out = sys.stdout
    for i, line in enumerate(lines):
        try:
            seq = encode_sentence(vocab, line, max_len=model.cfg.max_len)
            score = _score_seq(model, seq, args.k, args.seed)
        except ContractError as exc:
            raise ContractError(f"line {i}: {exc}") from exc
        fields = [str(i), f"{score.total:.10g}", str(score.n_tokens), str(score.passes)]
        if args.per_token:
            fields.append(",".join(f"{v:.10g}" for v in score.per_token))
        out.write("\t".join(fields) + "\n")
    return 0


def cmd_rerank(args) -> int:
    from slmkit.rerank import (
        LambdaGrid, bleu, load_nbest, oracle, rerank, selected_texts,
        split_dev_test, tune_lambda, wer,
    )
    from slmkit.vocab import encode_sentence

    model, _, vocab = _load_model(args.ckpt, args.model)
    nbest = load_nbest(args.nbest, args.refs)
    try:
        lo, hi, step = (float(x) for x in args.grid.split(":"))
    except ValueError as exc:
        raise ContractError(f"--grid must be LO:HI:STEP, got {args.grid!r}") from exc
    grid = LambdaGrid(lo=lo, hi=hi, step=step)

    lm_scores = []
    for group in nbest.groups:
        scores = []
        for cand in group.candidates:
            seq = encode_sentence(vocab, cand.text, max_len=model.cfg.max_len)
            s = _score_seq(model, seq, args.k, args.seed)
            total = s.total / max(1, s.n_tokens) if args.length_norm else s.total
            scores.append(total)
        lm_scores.append(scores)

    dev, test = split_dev_test(nbest, args.dev_split)
    dev_scores = lm_scores[: len(dev.groups)]
    test_scores = lm_scores[len(dev.groups):]
    best_lam, dev_metric = tune_lambda(dev, dev_scores, grid, args.metric)

    metric_fn = bleu if args.metric == "bleu" else wer
    refs = test.references()
    baseline = metric_fn(refs, selected_texts(test, rerank(test, test_scores, 0.0)))
    tuned = metric_fn(refs, selected_texts(test, rerank(test, test_scores, best_lam)))
    best = oracle(test, args.metric)

    print(f"lambda={best_lam:.10g}")
    print(f"dev_{args.metric}={dev_metric:.10g}")
    print(f"test_{args.metric}_baseline={baseline:.10g}")
    print(f"test_{args.metric}_reranked={tuned:.10g}")
    print(f"test_{args.metric}_oracle={best:.10g}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            for text in selected_texts(test, rerank(test, test_scores, best_lam)):
                fh.write(text + "\n")
    return 0


def cmd_masks(args) -> int:
    from slmkit.masks import build_masks, render_masks

    if args.action != "dump":
        raise ContractError(f"unknown masks action {args.action!r}")
    sys.stdout.write(render_masks(build_masks(args.len), args.format))
    return 0


def cmd_analyze(args) -> int:
    if args.what == "cost":
        from slmkit.analysis import cost_report

        n_values = [int(x) for x in args.n.split(",")]
        k_values = [int(x) for x in args.k.split(",")] if args.k else [1]
        print("model\tk\tn\tpasses\trelative_compute")
        for kind, k, n, passes, rel in cost_report(n_values, k_values):
            kcol = "-" if k is None else str(k)
            rel_s = f"{rel:g}"
            print(f"{kind}\t{kcol}\t{n}\t{passes}\t{rel_s}")
        return 0

    # positions
    from slmkit.analysis import position_profile, profile_chart, profile_csv
    from slmkit.vocab import encode_sentence

    model, _, vocab = _load_model(args.ckpt, args.model)
    lines = _non_empty(_read_lines(args.corpus))
    seqs = [encode_sentence(vocab, line, max_len=model.cfg.max_len) for line in lines]
    seqs = [s for s in seqs if s.real_count == args.len]
    if not seqs:
        raise ContractError(f"no corpus sentences have exactly {args.len} tokens")
    profile = position_profile(lambda s: _score_seq(model, s, args.k, args.seed), seqs)
    csv = profile_csv(profile)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(csv)
        print(f"wrote profile over {profile.sample_count} sentences to {args.out}")
    else:
        sys.stdout.write(csv)
    if args.chart:
        sys.stdout.write(profile_chart(profile))
    return 0


def cmd_selftest(args) -> int:
    from slmkit.selftest import run_selftest

    return 0 if run_selftest() else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slmkit",
        description="Sentence scoring with sliding, causal, masked and Bi-LM scorers.",
    )
    parser.add_argument("--version", action="version", version=f"slmkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    seed_parent = argparse.ArgumentParser(add_help=False)
    seed_parent.add_argument("--seed", type=int, default=0,
                             help="single source of all randomness (default 0)")

    p = sub.add_parser("build-vocab", parents=[seed_parent],
                       help="build a frequency-ranked vocabulary file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-size", type=int, default=None,
                   help="total size cap including the 5 reserved tokens")
    p.add_argument("--char", action="store_true", help="character-level tokens")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", parents=[seed_parent], help="train a model")
    p.add_argument("--model", required=True, choices=["slm", "clm", "mlm", "bilm"])
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--vocab", default=None, help="reuse an existing vocabulary file")
    p.add_argument("--char", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", parents=[seed_parent],
                       help="score sentences; TSV: id, total_logprob, n_tokens, passes")
    p.add_argument("--model", required=True, choices=["slm", "clm", "mlm", "bilm"])
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=1, help="tokens masked per pass (mlm only)")
    p.add_argument("--per-token", action="store_true",
                   help="append the comma-separated per-token log-probs")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rerank", parents=[seed_parent],
                       help="tune lambda on a dev split and rerank the rest")
    p.add_argument("--nbest", required=True, help="TSV: source_id, rank, base_score, text")
    p.add_argument("--refs", required=True, help="one reference line per source")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--model", required=True, choices=["slm", "clm", "mlm", "bilm"])
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--grid", default="0:2:0.05", help="lambda grid LO:HI:STEP")
    p.add_argument("--metric", choices=["bleu", "wer"], default="bleu")
    p.add_argument("--dev-split", type=float, default=0.5,
                   help="leading fraction of groups used to tune lambda")
    p.add_argument("--length-norm", action="store_true",
                   help="divide LM totals by token count before interpolation")
    p.add_argument("--out", default=None, help="write reranked test hypotheses here")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("masks", help="inspect attention-permission matrices")
    p.add_argument("action", choices=["dump"])
    p.add_argument("--len", type=int, required=True)
    p.add_argument("--format", choices=["ascii", "csv"], default="ascii")
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("analyze", parents=[seed_parent],
                       help="position profiles and cost tables")
    what = p.add_subparsers(dest="what", required=True)
    pp = what.add_parser("positions", parents=[seed_parent])
    pp.add_argument("--ckpt", required=True)
    pp.add_argument("--model", required=True, choices=["slm", "clm", "mlm", "bilm"])
    pp.add_argument("--len", type=int, required=True, help="real tokens per sentence")
    pp.add_argument("--corpus", required=True)
    pp.add_argument("--out", default=None)
    pp.add_argument("--k", type=int, default=1)
    pp.add_argument("--chart", action="store_true", help="also print an ASCII chart")
    pp.set_defaults(func=cmd_analyze, what="positions")
    pc = what.add_parser("cost")
    pc.add_argument("--n", required=True, help="comma-separated sentence lengths")
    pc.add_argument("--k", default="1", help="comma-separated k values for mlm")
    pc.set_defaults(func=cmd_analyze, what="cost")

    p = sub.add_parser("selftest",
                       help="run the leakage, mask and gradient invariant suites")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
