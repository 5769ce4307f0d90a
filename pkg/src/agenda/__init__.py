"""Attribute suppression for identity embeddings.

Trains a small generator network that re-embeds fixed-length identity
descriptors so that a binary sensitive attribute (canonically gender) is
hard to predict from the output, while identity classification still works.
Ships the adversarial trainer, an eigenspace-removal baseline, a logistic
leakage probe, pairwise verification metrics, a synthetic corpus generator,
and a triplet-embedding post-processor, all behind one ``agenda`` CLI.
"""

__version__ = "0.1.0"
