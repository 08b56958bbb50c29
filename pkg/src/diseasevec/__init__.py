"""Mean-pooled token embeddings trained with MNRL, plus triplet evaluation."""

__version__ = "0.1.0"
