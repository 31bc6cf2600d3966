"""Wall-clock cost of a single aggregation call."""
from __future__ import annotations

import statistics
import time

import numpy as np

from .learning import ServerContext


def default_context(d: int, f: int | None = None, seed: int = 0) -> ServerContext:
    return ServerContext(
        round=1,
        model=None,
        global_params=np.zeros(d),
        n_classes=1,
        rng=np.random.default_rng(seed),
        f=f,
    )


def time_aggregation(defense, submissions: np.ndarray, ctx: ServerContext | None = None,
                     repeats: int = 10, warmup: int = 1) -> float:
    """Median seconds over ``repeats`` calls, after ``warmup`` untimed calls."""
    X = np.asarray(submissions, dtype=np.float64)
    if ctx is None:
        ctx = default_context(X.shape[1], getattr(defense, "f_assumed", None))
    for _ in range(warmup):
        defense.aggregate(X, ctx)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        defense.aggregate(X, ctx)
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)
