"""Sequence length and wall clock of plain, Contextual-token, echo and few-shot inputs."""

import numpy as np

from ctxembed import bench
from ctxembed.config import ModelConfig
from ctxembed.model import EmbeddingModel
from ctxembed.synthetic import make_lexicon, paraphrase_pairs
from ctxembed.tokenizer import Tokenizer

tok = Tokenizer()  # raw bytes, so lengths are in bytes
lex = make_lexicon(seed=0)
texts = [e.query for e in paraphrase_pairs(lex, 64, seed=7)]
instr = tok.encode("Retrieve a paraphrase of the sentence.")
corpus = [(instr, tok.encode(t)) for t in texts]
shots = [tok.encode(t) for t in texts[:2]]

print("per-text length laws")
l, n = len(instr), len(corpus[0][1])
for name, spec in [("plain", bench.MethodSpec("plain")), ("causal2vec", bench.MethodSpec("causal2vec")),
                   ("echo", bench.MethodSpec("echo")), ("icl", bench.MethodSpec("icl", shots))]:
    print(f"  {name:10s} {bench.seq_len(spec, instr, corpus[0][1], 1):4d}   (l={l}, n={n})")

model = EmbeddingModel(ModelConfig(vocab_size=tok.vocab_size, d_model=64, n_layers=2, n_heads=4, d_enc=32,
                                   max_positions=1024))
reports = [bench.profile(model, bench.MethodSpec(m, shots if m == "icl" else []), corpus,
                         repetitions=3, warmups=1, dataset="paraphrase")
           for m in ("plain", "causal2vec", "echo", "icl")]
bench.compare(reports)
print("\nmethod      seq_len   ms/sample   cut vs echo   cut vs icl")
for r in reports:
    print(f"{r.method:10s} {r.mean_seq_len:8.1f} {r.mean_wall_ms:10.3f} "
          f"{100 * r.reduction_vs['echo']:11.1f}% {100 * r.reduction_vs['icl']:10.1f}%")

# the same arithmetic on published per-dataset means
print(f"\n1 - 34.0/269.0 = {bench.reduction(34.0, 269.0):.3f}")
print(f"1 - 62.1/421.9 = {bench.reduction(62.1, 421.9):.3f}")
