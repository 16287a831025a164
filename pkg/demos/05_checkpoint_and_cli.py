"""Save and reload a model, then drive the same steps through the CLI."""

import json
import tempfile
from pathlib import Path

import numpy as np

from ctxembed import ModelConfig, EmbeddingModel, load_checkpoint, save_checkpoint
from ctxembed.cli import main
from ctxembed.data import save_training_jsonl
from ctxembed.pooling import read_embeddings
from ctxembed.synthetic import PARAPHRASE_INSTRUCTION, lexicon_corpus, make_lexicon, paraphrase_pairs
from ctxembed.tokenizer import bpe_train

work = Path(tempfile.mkdtemp())
lex = make_lexicon(seed=0)
pairs = paraphrase_pairs(lex, 200, seed=0)
tok = bpe_train(lexicon_corpus(lex, pairs), 400)

model = EmbeddingModel(ModelConfig(vocab_size=tok.vocab_size, d_model=32, n_layers=1, n_heads=2, d_enc=16))
save_checkpoint(model, work / "m.ckpt", tok)
back = load_checkpoint(work / "m.ckpt")
ids = [tok.encode(p.query) for p in pairs[:4]]
print("reloaded embeddings identical:", model.embed(ids).tobytes() == back.embed(ids).tobytes())
print("checkpoint bytes:", (work / "m.ckpt").stat().st_size)

# the CLI route: tokenizer -> train -> embed
save_training_jsonl(work / "train.jsonl", pairs)
(work / "corpus.txt").write_text("\n".join(lexicon_corpus(lex, pairs)) + "\n")
(work / "texts.txt").write_text("\n".join(p.positive for p in pairs[:10]) + "\n")
(work / "model.json").write_text(json.dumps({"vocab_size": 400, "d_model": 32, "n_layers": 1, "n_heads": 2,
                                             "d_enc": 16}))
(work / "train.json").write_text(json.dumps({"train_steps": 20, "warmup_steps": 2, "batch_size": 8,
                                             "grad_accum": 1, "peak_lr": 1e-3,
                                             "instructions": {"paraphrase": PARAPHRASE_INSTRUCTION}}))
main(["tokenizer", "train", "--corpus", str(work / "corpus.txt"), "--vocab-size", "400",
      "--out", str(work / "tok.json")])
main(["train", "--data", str(work / "train.jsonl"), "--tokenizer", str(work / "tok.json"),
      "--model-config", str(work / "model.json"), "--train-config", str(work / "train.json"),
      "--out", str(work / "cli.ckpt")])
main(["embed", "--tokenizer", str(work / "tok.json"), "--checkpoint", str(work / "cli.ckpt"),
      "--input", str(work / "texts.txt"), "--out", str(work / "emb.f32")])
vecs, meta = read_embeddings(work / "emb.f32")
print("sidecar:", meta)
print("row norms:", np.round(np.linalg.norm(vecs, axis=1), 4))

# a broken config is reported with exit code 3
(work / "bad.json").write_text(json.dumps({"vocab_size": 400, "ctx_count": 3}))
code = main(["embed", "--tokenizer", str(work / "tok.json"), "--model-config", str(work / "bad.json"),
             "--input", str(work / "texts.txt"), "--out", str(work / "x.f32")])
print("exit code for a bad config:", code)
