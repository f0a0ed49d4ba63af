"""Joint text/graph contrastive pre-training with prompt-based zero- and few-shot classification."""

__version__ = "0.1.0"
