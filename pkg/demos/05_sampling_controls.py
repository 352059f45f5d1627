"""Watch each sampling control reshape a next-token distribution.

filter_logits() applies, in order: repetition penalty, temperature, top-k,
then nucleus (top-p) filtering, and returns the resulting probabilities.
This script runs a hand-made logit vector through each stage so the effect
of every knob is visible in isolation, then shows the two boundary cases
that anchor the design: neutral settings reduce to a plain softmax, and
top_k=1 reproduces greedy decoding exactly.

Run from the repository root:

    python demos/05_sampling_controls.py
"""

import numpy as np

from eyedx.model import Model, ModelConfig, init_params
from eyedx.numerics import softmax
from eyedx.sample import DecodeParams, decode, decode_greedy, filter_logits

names = ["<bos>", "<eos>", "<pad>", "<unk>", "dry", "eye", "macular", "edema"]
logits = np.array([-9.0, -9.0, -9.0, -9.0, 2.0, 1.2, 0.8, -0.5])


def show(label, probs):
    cells = "  ".join(f"{n}={p:.3f}" for n, p in zip(names[4:], probs[4:]))
    print(f"{label:34s} {cells}")


NEUTRAL = dict(temperature=1.0, repetition_penalty=1.0, top_k=8, top_p=1.0)

# ------------------------------------------------------------------ stages

show("plain softmax", softmax(logits))

show("repetition penalty 1.8 on 'dry'",
     filter_logits(logits, seen_ids={4}, params=DecodeParams(
         **{**NEUTRAL, "repetition_penalty": 1.8})))

show("temperature 0.5 (sharper)",
     filter_logits(logits, seen_ids=set(), params=DecodeParams(
         **{**NEUTRAL, "temperature": 0.5})))

show("temperature 2.0 (flatter)",
     filter_logits(logits, seen_ids=set(), params=DecodeParams(
         **{**NEUTRAL, "temperature": 2.0})))

show("top-k 2",
     filter_logits(logits, seen_ids=set(), params=DecodeParams(
         **{**NEUTRAL, "top_k": 2})))

show("top-p 0.7",
     filter_logits(logits, seen_ids=set(), params=DecodeParams(
         **{**NEUTRAL, "top_p": 0.7})))

# The penalty divides positive logits and multiplies negative ones by the
# same factor, so a seen token always loses probability, never gains it.

# ------------------------------------------------------------------ neutrality
#
# With every control at its identity value the pipeline must not editorialize:
# the output equals softmax(logits) to rounding.

neutral = filter_logits(logits, seen_ids=set(), params=DecodeParams(**NEUTRAL))
print(f"\nneutral settings vs softmax: "
      f"max diff {np.max(np.abs(neutral - softmax(logits))):.2e}")

# ------------------------------------------------------------------ greedy
#
# top_k=1 leaves a single candidate with probability one, so sampled decoding
# collapses to argmax regardless of the seed.

config = ModelConfig(d_model=32, n_layers=2, n_heads=4, n_kv_heads=2,
                     d_ff=48, vocab_size=64, max_seq_len=48)
model = Model(config, init_params(config, seed=0, scale=0.3))
prompt = [0, 10, 20, 30]

greedy = decode_greedy(model, prompt, max_new_tokens=12)
for seed in (0, 1, 99):
    sampled = decode(model, prompt, DecodeParams(
        temperature=1.0, max_new_tokens=12, repetition_penalty=1.0,
        top_k=1, top_p=1.0, seed=seed))
    assert sampled == greedy
print(f"top_k=1 equals greedy for every seed: {greedy}")

# With the defaults (temperature 0.9, penalty 1.3, top-k 40, top-p 0.9) the
# seed matters again:

for seed in (0, 1):
    out = decode(model, prompt, DecodeParams(max_new_tokens=12, seed=seed))
    print(f"default sampling, seed {seed}: {out}")
