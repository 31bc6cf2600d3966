from . import backdoor, robust, trust  # noqa: F401  (registration)
from .backdoor import flame_lambda, foolsgold_weights
from .base import Defense
from .robust import krum, krum_scores, multi_krum_indices, trimmed_mean, weiszfeld

__all__ = [
    "Defense",
    "flame_lambda",
    "foolsgold_weights",
    "krum",
    "krum_scores",
    "multi_krum_indices",
    "trimmed_mean",
    "weiszfeld",
]
