"""Multi-modal transformer with learned causal attention masks for early
pedestrian intent prediction, on a self-contained autodiff core."""

__version__ = "0.1.0"
