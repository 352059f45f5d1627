"""Synthesize an ophthalmic report corpus, split it, and build a vocabulary.

Walks the data path the rest of the pipeline sits on: generate records for
the three imaging modalities, drop duplicates, stratify into train/test, turn
a record into a prompt/target pair, and derive the token table from the
training half only.

Run from the repository root:

    python demos/01_report_corpus.py
"""

import collections

from eyedx import corpus, tokenizer

# ------------------------------------------------------------------ synthesis
#
# synthesize() draws findings and a matching diagnosis from a small grammar,
# per modality, deterministically for a given seed. The grammar repeats
# itself at this volume, which is exactly what we want here: the dedup step
# below has real work to do.

records = corpus.synthesize(n_per_modality=50, seed=0)
print(f"synthesized {len(records)} records")
print(f"per modality: {corpus.modality_counts(records)}")

sample = records[0]
print("\nfirst record:")
print(f"  id        = {sample.id}")
print(f"  modality  = {sample.modality}")
print(f"  findings  = {sample.findings}")
print(f"  diagnosis = {sample.diagnosis}")

# ------------------------------------------------------------------ dedup
#
# Duplicate (modality, findings, diagnosis) triples keep their first
# occurrence; later copies are dropped so the test split can never score a
# memorized training sentence.

unique = corpus.dedup(records)
print(f"\nafter dedup: {len(unique)} records "
      f"({len(records) - len(unique)} duplicates removed)")

# ------------------------------------------------------------------ split
#
# The split is stratified per modality: each modality contributes the same
# train fraction, so a rare modality cannot vanish from the test side.

parts = corpus.split(unique, ratio=0.6, seed=0)
print(f"\nsplit at ratio {parts.ratio}: "
      f"{len(parts.train)} train / {len(parts.test)} test")
for name, side in (("train", parts.train), ("test", parts.test)):
    counts = corpus.modality_counts(side)
    print(f"  {name}: {dict(sorted(counts.items()))}")

# ------------------------------------------------------------------ prompts
#
# A template turns a record into (prompt, target). The model is trained to
# continue the prompt with the target, so the prompt ends with the response
# prefix and the target is the diagnosis text alone.

prompt, target = corpus.render_prompt(parts.train[0])
print("\nrendered prompt:")
for line in prompt.splitlines():
    print(f"  | {line}")
print(f"target: {target}")

# ------------------------------------------------------------------ vocabulary
#
# The token table is built from rendered training text only. Test-side
# words the grammar never put in train would map to <unk>, which is the
# honest behavior for unseen input.

texts = [" ".join(corpus.render_prompt(r)) for r in parts.train]
vocab = tokenizer.build(texts)
print(f"\nvocabulary size: {vocab.size} (including "
      f"{len(tokenizer.SPECIAL_TOKENS)} specials)")

ids = vocab.encode(prompt)
print(f"prompt encodes to {len(ids)} ids, first ten: {ids[:10]}")
print(f"round trip: {vocab.decode(ids)[:60]}...")

oov = vocab.encode("fluorescein angiography")
names = [vocab.tokens[i] for i in oov]
print(f"out-of-vocabulary text maps to: {names}")

# ------------------------------------------------------------------ frequencies

counter = collections.Counter()
for text in texts:
    counter.update(tokenizer.segment(text))
print("\nten most common tokens:")
for tok, n in counter.most_common(10):
    print(f"  {n:5d}  {tok}")
