"""Compare pooling modes on the paraphrase task.

Short runs (150 steps) so the whole table finishes in a few minutes; the
ordering is noisy at this length. Raise STEPS for a steadier picture.
"""

from ctxembed import desk

STEPS = 150

setup = desk.paraphrase_setup(n_pairs=1000, n_test=100, vocab_size=600)
rows = desk.ablate(setup, "pooling", STEPS)
print(f"{'pooling':16s} {'seq_len':>8s} {'acc@1':>6s} {'mrr':>6s}")
for r in rows:
    print(f"{r['pooling']:16s} {r['seq_len']:8.2f} {r['acc1']:6.3f} {r['mrr']:6.3f}")
