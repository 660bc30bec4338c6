from .metrics import Metrics, compute_metrics, roc_auc

__all__ = ["Metrics", "compute_metrics", "roc_auc"]
