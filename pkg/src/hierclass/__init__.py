"""Taxonomy-aware multi-label text classification.

Pipeline: pretrain a small text encoder on synthetic text, train label
embeddings over the taxonomy DAG by masked-label prediction, then fine-tune
the encoder on packed text + per-level label sequences and decode labels
level by level.
"""

__version__ = "0.1.0"
