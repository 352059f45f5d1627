"""Low-rank adapters: attach, merge, unmerge, and swap without drift.

An adapter adds scale * (A @ B) to each target projection, where A is
n x r and B is r x m with r much smaller than either side. This script
shows the bookkeeping that makes adapters safe to move around: a fresh
adapter is an exact no-op, merging folds the delta into the base weights,
unmerging restores them, and swapping adapters never stacks two deltas.

Run from the repository root:

    python demos/03_adapter_algebra.py
"""

import numpy as np

from eyedx import lora
from eyedx.model import Model, ModelConfig, init_params, param_shapes

config = ModelConfig(d_model=64, n_layers=2, n_heads=8, n_kv_heads=2,
                     d_ff=96, vocab_size=128, max_seq_len=64)
model = Model(config, init_params(config, seed=0))
tokens = np.array([5, 9, 42, 17])
base_logits = model.forward(tokens)

# ------------------------------------------------------------------ size
#
# Adapters target the query and value projections of every layer. At rank 4
# that is a small fraction of the full parameter count, which is the point:
# fine-tuning touches only these tensors.

adapter = lora.init_adapter(config, rank=4, alpha=8.0, seed=1)
full = sum(int(np.prod(s)) for s in param_shapes(config).values())
small = lora.parameter_count(adapter)
print(f"full model parameters:    {full:8d}")
print(f"adapter parameters:       {small:8d}  ({100 * small / full:.2f}%)")
print(f"targets: {adapter.targets}")

# ------------------------------------------------------------------ no-op
#
# B starts at zero, so A @ B is zero and a freshly attached adapter cannot
# change the forward pass. Not approximately: the logits are bit-identical.

lora.attach(model, adapter=adapter)
attached_logits = model.forward(tokens)
print(f"\nfresh adapter is a no-op: "
      f"{'bit-identical' if np.array_equal(base_logits, attached_logits) else 'DRIFT'}")

# ------------------------------------------------------------------ merge
#
# Give the adapter something to say by filling B, then compare the adapted
# forward pass (delta applied on the fly) against a merged model (delta
# folded into the weights). Merging changes the representation, not the
# function.

rng = np.random.default_rng(2)
for t in adapter.b:
    adapter.b[t][...] = rng.normal(0.0, 0.05, adapter.b[t].shape)

adapted_logits = model.forward(tokens)
merged_adapter = lora.merge(model)
merged_logits = model.forward(tokens)
print(f"adapted vs merged logits: "
      f"max diff {np.max(np.abs(adapted_logits - merged_logits)):.2e}")

# ------------------------------------------------------------------ unmerge
#
# Unmerge subtracts the delta again and re-attaches the adapter, restoring
# the pre-merge state. Float subtraction is not exact, so the weights come
# back to within rounding, not to the bit.

lora.unmerge(model)
restored_logits = model.forward(tokens)
print(f"unmerged vs pre-merge:    "
      f"max diff {np.max(np.abs(restored_logits - adapted_logits)):.2e}")

# ------------------------------------------------------------------ swap
#
# Swap replaces one merged adapter with another in a single step. The result
# is checked against merging the new adapter into a clean copy of the base
# weights: if swap forgot to remove the old delta first, this would differ.

second = lora.init_adapter(config, rank=6, alpha=12.0, seed=3)
for t in second.b:
    second.b[t][...] = rng.normal(0.0, 0.05, second.b[t].shape)

lora.merge(model)
lora.swap(model, old=merged_adapter, new=second)
swapped_logits = model.forward(tokens)

clean = Model(config, init_params(config, seed=0))
lora.attach(clean, adapter=second)
lora.merge(clean)
direct_logits = clean.forward(tokens)
print(f"swap vs direct merge:     "
      f"max diff {np.max(np.abs(swapped_logits - direct_logits)):.2e}")
