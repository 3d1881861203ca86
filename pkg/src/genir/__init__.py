"""Generative retrieval toolkit.

Encodes a document corpus into an encoder-decoder model and retrieves by
decoding document identifiers with a constrained beam search.  Everything is
deterministic given the seeds recorded in run configs and manifests.
"""

from genir.constants import BOS_ID, EOS_ID, ID_OFFSET, NUM_SPECIALS, PAD_ID

__all__ = [
    "PAD_ID",
    "EOS_ID",
    "BOS_ID",
    "ID_OFFSET",
    "NUM_SPECIALS",
]

__version__ = "0.1.0"
