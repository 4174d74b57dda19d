"""Few-shot episodes, metrics and the evaluation protocol."""

from seizurecast.fewshot.episodes import SHOTS, Episode, check_episode, sample_episode, validate_pool
from seizurecast.fewshot.metrics import all_metrics, balanced_accuracy, pr_auc, roc_auc, threshold

__all__ = [
    "SHOTS",
    "Episode",
    "all_metrics",
    "balanced_accuracy",
    "check_episode",
    "pr_auc",
    "roc_auc",
    "sample_episode",
    "threshold",
    "validate_pool",
]
