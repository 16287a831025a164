"""A two-layer classifier trained with the package's own autodiff."""

import numpy as np

from ctxembed import tensor as T
from ctxembed.nn import Linear
from ctxembed.tensor import Tensor

rng = np.random.default_rng(0)

# two gaussian blobs, labels 0 and 1
x = np.concatenate([rng.normal(-1, 0.7, (100, 2)), rng.normal(1, 0.7, (100, 2))])
y = np.repeat([0, 1], 100)

hidden = Linear(2, 16, rng, dtype=np.float64)
out = Linear(16, 2, rng, dtype=np.float64)
params = hidden.parameters() + out.parameters()

for step in range(200):
    logits = out(T.gelu(hidden(Tensor(x, dtype=np.float64))))
    logp = T.log_softmax(logits, axis=-1)
    loss = -logp[np.arange(len(y)), y].mean()
    for p in params:
        p.grad = None
    loss.backward()
    for p in params:
        p.data -= 0.5 * p.grad
    if step % 50 == 0:
        print(f"step {step:3d}  loss {loss.item():.4f}")

pred = logits.data.argmax(axis=1)
print("train accuracy", (pred == y).mean())

# gradients agree with central differences
a = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
w = rng.normal(size=(3, 4))
(T.gelu(a) * Tensor(w, dtype=np.float64)).sum().backward()
eps = 1e-6
num = np.zeros_like(a.data)
for i in np.ndindex(a.shape):
    old = a.data[i]
    a.data[i] = old + eps
    up = (T.gelu(a).data * w).sum()
    a.data[i] = old - eps
    down = (T.gelu(a).data * w).sum()
    a.data[i] = old
    num[i] = (up - down) / (2 * eps)
print("max |autodiff - finite difference|", np.abs(a.grad - num).max())
