"""Targeted-attack scores and the per-evaluation record."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

from .errors import UndefinedMetricError


def _ratio(acc_attack: float, acc_clean: float) -> float:
    if acc_clean <= 0:
        raise UndefinedMetricError("clean accuracy is zero; the score is undefined")
    return acc_attack / acc_clean


def tai(acc_attack: float, acc_clean: float, asr: float) -> float:
    """Targeted attack impact: relative accuracy kept plus attack success."""
    return _ratio(acc_attack, acc_clean) + asr


def tdr(acc_attack: float, acc_clean: float, asr: float) -> float:
    """Targeted defense robustness; 2.0 means full accuracy and no backdoor."""
    return _ratio(acc_attack, acc_clean) + 1.0 - asr


@dataclass
class MetricsRecord:
    round: int
    acc: float
    asr: Optional[float] = None
    survivors: Optional[int] = None

    def __post_init__(self):
        for name in ("acc", "asr"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_json(self) -> str:
        data = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(data, sort_keys=True)
