"""
Autodiff core and top-k routing, step by step
=============================================

A tour of the two building blocks everything else sits on: the small
reverse-mode engine in ``m3dbfs.numcore`` and the noisy top-k gate in
``m3dbfs.moe``.  Run it with ``python demos/01_autodiff_and_routing.py``.
"""

# %%
# Tensors record the operations applied to them; ``backward`` walks the
# record in reverse.  d/dx sum(x * x) = 2x:
import numpy as np

from m3dbfs.numcore import Tensor, mul, tensor_sum, row_softmax, check_gradients

x = Tensor([1.0, 2.0], requires_grad=True)
tensor_sum(mul(x, x)).backward()
print("grad of sum(x^2) at [1, 2]:", x.grad)

# %%
# Every primitive ships with a finite-difference checker.  Here a softmax
# followed by a weighted sum:
rng = np.random.default_rng(0)
w = rng.normal(size=(2, 3))
z = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
err = check_gradients(lambda: tensor_sum(mul(row_softmax(z), w)), [z])
print("softmax gradient, worst relative error:", err)

# %%
# A gate maps a token to one logit per expert.  At inference it keeps the
# k largest and renormalizes them with a softmax; with k = 1 the winner
# gets weight exactly 1.
from m3dbfs.moe import GatingNetwork, MoEBlock, gate_forward, moe_forward, cv_squared

gate = GatingNetwork(3, 3, 1, rng)
gate.w_gate.data = np.eye(3)
gates, selected, _ = gate_forward(gate, Tensor([2.0, 1.0, 0.5]), train=False)
print("top-1 gates:", gates.data, "selected:", selected)

gate2 = GatingNetwork(3, 2, 2, rng)
gates, _, _ = gate_forward(gate2, Tensor([0.3, -0.2, 1.0]), train=False)
print("k = E = 2, a full softmax:", gates.data, "sum", gates.data.sum())

# %%
# During training Gaussian noise with a learned, softplus-shaped scale is
# added before the top-k cut.  With all-zero gate weights each of four
# experts should win a quarter of the time:
flat = GatingNetwork(2, 4, 1, rng)
flat.w_gate.data[...] = 0.0
flat.w_noise.data[...] = 0.0
tokens = Tensor(rng.normal(size=(20000, 2)))
_, chosen, _ = gate_forward(flat, tokens, train=True, rng=rng)
print("selection frequencies:", np.bincount(chosen[:, 0], minlength=4) / len(chosen))

# %%
# A mixture block evaluates only the experts a token was routed to.  Its
# balance is summarized by CV^2 of the per-expert totals: 0 when even,
# E - 1 when a single expert takes everything.
block = MoEBlock("Fusion", 4, 4, 4, 1, rng)
h = rng.normal(size=(64, 4))
y, record = moe_forward(block, h, train=True, rng=rng)
print("tokens per expert:", record.counts())
print("importance CV^2:", cv_squared(record.importance))
print("CV^2 of [1,1,1,1], [2,0], [5,0,0,0]:",
      cv_squared([1, 1, 1, 1]), cv_squared([2, 0]), cv_squared([5, 0, 0, 0]))
