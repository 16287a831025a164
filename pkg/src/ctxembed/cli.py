"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 configuration or input error,
4 numerical failure (non-finite training values, undefined metrics).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import desk
from .bench import VARIANTS, MethodSpec, compare, profile, write_csv
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import POOLING_MODES, ConfigError, ModelConfig, TrainConfig
from .data import DataFormatError, group_by_task, load_training_jsonl, read_jsonl
from .encoder import EmptyInputError
from .evaluation import load_task, make_embedder, run_task
from .metrics import UndefinedMetricError
from .model import EmbeddingModel
from .pooling import write_embeddings
from .tensor import EmptyPoolError, ShapeError
from .tokenizer import Tokenizer, bpe_train
from .training import NumericalError, train

EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 2, 3, 4
_CONFIG_ERRORS = (ConfigError, DataFormatError, CheckpointError, ShapeError, EmptyInputError,
                  FileNotFoundError, KeyError, json.JSONDecodeError)
_NUMERIC_ERRORS = (NumericalError, UndefinedMetricError, FloatingPointError, EmptyPoolError)


# ------------------------------------------------------------------- helpers
def _read_texts(path) -> list[str]:
    """Plain text (one text per line) or JSONL with a ``text`` field."""
    path = Path(path)
    if path.suffix == ".jsonl":
        rows = read_jsonl(path)
        try:
            return [r["text"] for r in rows]
        except KeyError as exc:
            raise DataFormatError(f"{path}: every line needs a 'text' field") from exc
    return [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def _training_texts(path) -> list[str]:
    out = []
    for e in load_training_jsonl(path):
        out.extend([e.query, e.positive, *e.hard_negatives])
    return out


def _model_config(args, tokenizer: Tokenizer | None) -> ModelConfig:
    cfg = ModelConfig.load(args.model_config) if args.model_config else ModelConfig()
    if tokenizer is not None:
        if args.model_config and cfg.vocab_size != tokenizer.vocab_size:
            raise ConfigError(f"model vocab_size {cfg.vocab_size} != tokenizer vocab size {tokenizer.vocab_size}")
        cfg = cfg.replace(vocab_size=tokenizer.vocab_size)
    return cfg


def _load_model(args) -> tuple[EmbeddingModel, Tokenizer]:
    tok = Tokenizer.load(args.tokenizer)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        want = model._checkpoint_meta.get("tokenizer_hash")
        if want and want != tok.fingerprint():
            raise ConfigError("tokenizer does not match the one the checkpoint was trained with")
        pooling = getattr(args, "pooling", None)
        if pooling and pooling != model.config.pooling:
            model = load_checkpoint(args.checkpoint, model.config.replace(pooling=pooling))
    else:
        cfg = _model_config(args, tok)
        if getattr(args, "pooling", None):
            cfg = cfg.replace(pooling=args.pooling)
        model = EmbeddingModel(cfg)
    return model, tok


# ---------------------------------------------------------------- commands
def cmd_tokenizer_train(args) -> int:
    corpus = []
    for p in args.corpus:
        corpus.extend(_training_texts(p) if args.training_data else _read_texts(p))
    tok = bpe_train(corpus, args.vocab_size, args.seed)
    tok.save(args.out)
    print(f"tokenizer: {tok.vocab_size} ids, fingerprint {tok.fingerprint()[:12]} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    tok = Tokenizer.load(args.tokenizer)
    mcfg = _model_config(args, tok)
    tcfg = TrainConfig.load(args.train_config) if args.train_config else TrainConfig()
    examples = []
    for p in args.data:
        examples.extend(load_training_jsonl(p))
    missing = sorted({e.task for e in examples} - set(tcfg.instructions))
    if missing:
        logging.getLogger(__name__).warning("no instruction for tasks %s; queries go uninstructed", missing)
    model = EmbeddingModel(mcfg)
    history = train(model, group_by_task(examples), tok, tcfg, args.steps, metrics_path=args.metrics,
                    log_every=args.log_every)
    save_checkpoint(model, args.out, tok, {"train_config": tcfg.to_dict(), "steps": len(history)})
    print(f"trained {len(history)} steps, final loss {history[-1]['loss']:.4f} -> {args.out}")
    return 0


def cmd_embed(args) -> int:
    model, tok = _load_model(args)
    texts = _read_texts(args.input)
    vecs = model.embed_text(tok, texts, args.instruction, args.batch_size)
    write_embeddings(args.out, vecs, model.config.pooling, normalized=True)
    print(f"{vecs.shape[0]} x {vecs.shape[1]} embeddings -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, tok = _load_model(args)
    instructions = json.loads(Path(args.instructions).read_text()) if args.instructions else None
    embed = make_embedder(model, tok, args.batch_size)
    reports = [run_task(embed, load_task(t), instructions) for t in args.task]
    text = json.dumps(reports if len(reports) > 1 else reports[0], indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_bench(args) -> int:
    model, tok = _load_model(args)
    instr = tok.encode(args.instruction) if args.instruction else []
    corpus = [(instr, tok.encode(t)) for t in _read_texts(args.input)]
    icl_ids = [tok.encode(t) for t in _read_texts(args.icl_examples)] if args.icl_examples else []
    reports = []
    for name in args.methods.split(","):
        if name not in VARIANTS:
            raise ConfigError(f"unknown method {name!r}; expected one of {VARIANTS}")
        if name == "causal2vec" and not model.config.use_ctx:
            raise ConfigError("causal2vec needs a model with a Contextual token")
        spec = MethodSpec(name, icl_ids if name == "icl" else [])
        reports.append(profile(model, spec, corpus, args.repetitions, args.warmups, Path(args.input).stem))
    compare(reports)
    write_csv(args.out, reports, args.baseline)
    for r in reports:
        print(f"{r.method:12s} seq_len {r.mean_seq_len:8.2f}  {r.mean_wall_ms:8.3f} ms/sample")
    return 0


def cmd_ablate(args) -> int:
    if args.n_test >= args.pairs:
        raise ConfigError("--n-test must be smaller than --pairs")
    base_model = json.loads(Path(args.model_config).read_text()) if args.model_config else None
    base_train = json.loads(Path(args.train_config).read_text()) if args.train_config else None
    for base in (base_model, base_train):
        if base:
            base.pop("schema_version", None)
    if base_model:
        ModelConfig.from_dict(base_model)
    if base_train:
        TrainConfig.from_dict(base_train)
    setup = desk.paraphrase_setup(args.pairs, args.n_test, args.vocab_size)
    table = desk.ablate(setup, args.axis, args.steps, tuple(range(args.seeds)), base_model, base_train)
    keys = [k for k in table[0] if k not in ("seq_len", "acc1", "mrr", "seeds")]
    header = keys + ["seq_len", "acc1", "mrr", "seeds"]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=header)
            w.writeheader()
            w.writerows(table)
    cells = [[f"{row[h]:.4f}" if isinstance(row[h], float) else str(row[h]) for h in header] for row in table]
    widths = [max(len(c) for c in col) for col in zip(header, *cells)]
    for line in [header, *cells]:
        print("  ".join(c.ljust(w) for c, w in zip(line, widths)))
    return 0


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctxembed", description="Contextual-token text embeddings at desk scale.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    tk = sub.add_parser("tokenizer", help="tokenizer utilities")
    tks = tk.add_subparsers(dest="tokenizer_command", required=True)
    t = tks.add_parser("train", help="train a byte-level BPE tokenizer")
    t.add_argument("--corpus", nargs="+", required=True, help="text files (one text per line) or JSONL with 'text'")
    t.add_argument("--training-data", action="store_true", help="read corpus files as training JSONL")
    t.add_argument("--vocab-size", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tokenizer_train)

    def model_args(p, need_ckpt=False):
        p.add_argument("--tokenizer", required=True)
        p.add_argument("--checkpoint", required=need_ckpt)
        p.add_argument("--model-config", help="JSON ModelConfig used when no checkpoint is given")
        p.add_argument("--batch-size", type=int, default=64)

    t = sub.add_parser("train", help="contrastive training")
    t.add_argument("--data", nargs="+", required=True, help="training JSONL files")
    t.add_argument("--tokenizer", required=True)
    t.add_argument("--model-config")
    t.add_argument("--train-config")
    t.add_argument("--steps", type=int)
    t.add_argument("--metrics", help="write per-step metrics JSONL here")
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train)

    t = sub.add_parser("embed", help="embed texts to a little-endian f32 file plus JSON sidecar")
    model_args(t)
    t.add_argument("--input", required=True)
    t.add_argument("--instruction", default="")
    t.add_argument("--pooling", choices=POOLING_MODES)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_embed)

    t = sub.add_parser("eval", help="run task specs and write a JSON report")
    model_args(t)
    t.add_argument("--task", nargs="+", required=True, help="task spec JSON files")
    t.add_argument("--instructions", help="JSON map task name -> instruction")
    t.add_argument("--out")
    t.set_defaults(func=cmd_eval)

    t = sub.add_parser("bench", help="sequence length and wall-clock comparison")
    model_args(t)
    t.add_argument("--input", required=True)
    t.add_argument("--instruction", default="")
    t.add_argument("--methods", default="plain,causal2vec,echo")
    t.add_argument("--icl-examples", help="text file of few-shot examples for the icl method")
    t.add_argument("--baseline", default="plain")
    t.add_argument("--repetitions", type=int, default=5)
    t.add_argument("--warmups", type=int, default=1)
    t.add_argument("--out", required=True, help="CSV report")
    t.set_defaults(func=cmd_bench)

    t = sub.add_parser("ablate", help="train and score ablation settings on the synthetic paraphrase task")
    t.add_argument("--axis", required=True, choices=[*desk.ABLATION_AXES, "grid"])
    t.add_argument("--steps", type=int, default=100)
    t.add_argument("--seeds", type=int, default=1, help="number of seeds per setting")
    t.add_argument("--pairs", type=int, default=2000)
    t.add_argument("--n-test", type=int, default=200)
    t.add_argument("--vocab-size", type=int, default=1000)
    t.add_argument("--model-config", help="JSON overrides for the base model")
    t.add_argument("--train-config", help="JSON overrides for the base training settings")
    t.add_argument("--out", help="CSV table")
    t.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
