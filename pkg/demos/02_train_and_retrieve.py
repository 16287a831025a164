"""Train a small embedding model on synthetic paraphrases and retrieve with it.

Takes a minute or two on one CPU core.
"""

import numpy as np

from ctxembed import desk
from ctxembed.config import ModelConfig, TrainConfig
from ctxembed.model import EmbeddingModel
from ctxembed.training import train

setup = desk.paraphrase_setup(n_pairs=1000, n_test=100, vocab_size=600)
print(f"{len(setup.train)} training pairs, {len(setup.test)} held out, vocab {setup.tokenizer.vocab_size}")
print("query:   ", setup.test[0].query)
print("positive:", setup.test[0].positive)

model = EmbeddingModel(ModelConfig(**desk.DESK_MODEL, vocab_size=setup.tokenizer.vocab_size))
cfg = TrainConfig(**{**desk.DESK_TRAIN, "warmup_steps": 20}, train_steps=200, instructions=setup.instructions)

before = desk.retrieval_scores(model, setup)
history = train(model, {"paraphrase": setup.train}, setup.tokenizer, cfg, log_every=50)
after = desk.retrieval_scores(model, setup)
print(f"loss {history[0]['loss']:.3f} -> {history[-1]['loss']:.3f}")
print(f"acc@1 {before['acc1']:.3f} -> {after['acc1']:.3f}   mrr {before['mrr']:.3f} -> {after['mrr']:.3f}")

# top 3 passages for one query
tok = setup.tokenizer
q = model.embed_text(tok, [setup.test[3].query], setup.instruction)
passages = [e.positive for e in setup.test]
p = model.embed_text(tok, passages)
best = np.argsort(-(q @ p.T)[0])[:3]
print("\nquery:", setup.test[3].query)
for i in best:
    print(f"  {float(q[0] @ p[i]):.3f}  {passages[i]}")
