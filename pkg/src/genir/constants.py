"""Shared token-id conventions.

Identifier schemes describe documents in a "pure" token space starting at 0.
Sequential decoder heads prepend three special ids, so a model-space target
token is always ``pure_id + ID_OFFSET``.  The atomic head has no specials at
all: its output is one logit per document and decoding takes a single step.
"""

PAD_ID = 0
EOS_ID = 1
BOS_ID = 2
ID_OFFSET = 3
NUM_SPECIALS = 3

# Input-side (tokenizer) convention: 0 is padding, raw bytes occupy 1..256,
# learned merges follow.
TEXT_PAD_ID = 0
