"""Robust-statistics aggregators: Krum family, median, trimmed mean, Bulyan, RFA, clipping."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from ..errors import ConfigurationError
from ..registry import defenses
from ..vector import coordinate_median, pairwise_sq_distances
from .base import Defense


def _scores_from_distances(D: np.ndarray, f: int) -> np.ndarray:
    n = D.shape[0]
    k = max(n - f - 2, 0)
    if k == 0:
        return np.zeros(n)
    off = D + np.diag(np.full(n, np.inf))
    near = np.sort(off, axis=1)[:, :k]
    return near.sum(axis=1)


def krum_scores(X: np.ndarray, f: int) -> np.ndarray:
    """Sum of squared distances from each update to its n - f - 2 nearest neighbours."""
    return _scores_from_distances(pairwise_sq_distances(X), f)


def rank_scores(scores: np.ndarray) -> np.ndarray:
    """Indices by ascending score; scores equal up to round-off tie-break on the lower index."""
    scale = float(np.abs(scores).max()) if scores.size else 0.0
    key = np.round(scores / scale, 9) if scale > 0 and np.isfinite(scale) else scores
    return np.argsort(key, kind="stable")


def _check_krum(n: int, f: int) -> None:
    if not 2 * f + 2 < n:
        raise ConfigurationError(f"Krum requires 2f + 2 < n, got n={n}, f={f}")


def krum(X: np.ndarray, f: int) -> np.ndarray:
    _check_krum(X.shape[0], f)
    return X[int(rank_scores(krum_scores(X, f))[0])].copy()


def multi_krum_indices(X: np.ndarray, f: int, m: int) -> np.ndarray:
    _check_krum(X.shape[0], f)
    if not 1 <= m <= X.shape[0]:
        raise ConfigurationError(f"multi-krum m must lie in [1, n], got {m}")
    return rank_scores(krum_scores(X, f))[:m]


def trimmed_mean(X: np.ndarray, beta: float) -> np.ndarray:
    n = X.shape[0]
    k = int(math.floor(beta * n))
    if 2 * k >= n:
        raise ConfigurationError(f"trimming {k} from each side leaves nothing of n={n}")
    S = np.sort(X, axis=0)
    return S[k:n - k].mean(axis=0)


def bulyan_selection(X: np.ndarray, f: int) -> list[int]:
    n = X.shape[0]
    if n < 4 * f + 3:
        raise ConfigurationError(f"Bulyan requires n >= 4f + 3, got n={n}, f={f}")
    D = pairwise_sq_distances(X)
    remaining = list(range(n))
    chosen = []
    for _ in range(n - 2 * f):
        scores = _scores_from_distances(D[np.ix_(remaining, remaining)], f)
        pick = remaining[int(rank_scores(scores)[0])]
        chosen.append(pick)
        remaining.remove(pick)
    return chosen


def bulyan(X: np.ndarray, f: int) -> tuple[np.ndarray, list[int]]:
    chosen = bulyan_selection(X, f)
    S = X[chosen]
    beta = len(chosen) - 2 * f
    med = np.median(S, axis=0)
    order = np.argsort(np.abs(S - med), axis=0, kind="stable")[:beta]
    return np.take_along_axis(S, order, axis=0).mean(axis=0), chosen


def weiszfeld(X: np.ndarray, iterations: int = 8, nu: float = 1e-6, trace: list | None = None) -> np.ndarray:
    """Smoothed Weiszfeld iterations for the geometric median, started at the mean."""
    v = X.mean(axis=0)
    for _ in range(iterations):
        dist = np.linalg.norm(X - v, axis=1)
        w = 1.0 / np.maximum(nu, dist)
        v = (w[:, None] * X).sum(axis=0) / w.sum()
        if trace is not None:
            trace.append(float(np.linalg.norm(X - v, axis=1).sum()))
    return v


def centered_clip(X: np.ndarray, center: np.ndarray, tau: float, iterations: int = 1) -> np.ndarray:
    v = center.copy()
    for _ in range(iterations):
        diff = X - v
        norms = np.linalg.norm(diff, axis=1)
        scale = np.minimum(1.0, tau / np.where(norms > 0, norms, np.inf))
        v = v + (diff * scale[:, None]).mean(axis=0)
    return v


@defenses.register("mean")
class Mean(Defense):
    name = "mean"

    def _aggregate(self, X, ctx):
        return X.mean(axis=0)


@defenses.register("krum")
class Krum(Defense):
    name = "krum"
    bounded = True

    def _aggregate(self, X, ctx):
        f = self.adversaries(ctx)
        _check_krum(X.shape[0], f)
        i = int(rank_scores(krum_scores(X, f))[0])
        self.selected = [i]
        return X[i].copy()


@defenses.register("multikrum")
class MultiKrum(Defense):
    name = "multikrum"
    bounded = True
    defaults = {"m": None}

    def _aggregate(self, X, ctx):
        f = self.adversaries(ctx)
        m = X.shape[0] - f if self.m is None else int(self.m)
        idx = multi_krum_indices(X, f, m)
        self.selected = sorted(int(i) for i in idx)
        return X[idx].mean(axis=0)


@defenses.register("median")
class Median(Defense):
    name = "median"

    def _aggregate(self, X, ctx):
        return coordinate_median(X)


@defenses.register("trimmedmean")
class TrimmedMean(Defense):
    name = "trimmedmean"
    defaults = {"beta": 0.2}

    def validate(self):
        if not 0.0 <= self.beta < 0.5:
            raise ConfigurationError("trimmed-mean beta must lie in [0, 0.5)")

    def _aggregate(self, X, ctx):
        return trimmed_mean(X, self.beta)


@defenses.register("bulyan")
class Bulyan(Defense):
    name = "bulyan"
    bounded = True

    def _aggregate(self, X, ctx):
        out, chosen = bulyan(X, self.adversaries(ctx))
        self.selected = sorted(chosen)
        return out


@defenses.register("rfa")
class RFA(Defense):
    name = "rfa"
    defaults = {"iterations": 8, "nu": 1e-6}

    def validate(self):
        if self.iterations < 1 or self.nu <= 0:
            raise ConfigurationError("RFA needs iterations >= 1 and nu > 0")

    def _aggregate(self, X, ctx):
        return weiszfeld(X, int(self.iterations), self.nu)


@defenses.register("centeredclipping")
class CenteredClipping(Defense):
    name = "centeredclipping"
    defaults = {"tau": 10.0, "iterations": 1}

    def validate(self):
        if self.tau <= 0 or self.iterations < 1:
            raise ConfigurationError("centered clipping needs tau > 0 and iterations >= 1")

    def _aggregate(self, X, ctx):
        center = ctx.prev_aggregate if ctx.prev_aggregate is not None else np.zeros(X.shape[1])
        return centered_clip(X, np.asarray(center, dtype=np.float64), self.tau, int(self.iterations))


@defenses.register("bucketing")
class Bucketing(Defense):
    name = "bucketing"
    bounded = True
    defaults = {"bucket_size": 2, "inner": "krum"}

    def validate(self):
        if self.bucket_size < 1:
            raise ConfigurationError("bucket size must be at least 1")

    def buckets(self, n: int, rng) -> list[np.ndarray]:
        perm = rng.permutation(n)
        s = int(self.bucket_size)
        return [perm[i:i + s] for i in range(0, n, s)]

    def _aggregate(self, X, ctx):
        f = self.adversaries(ctx)
        groups = self.buckets(X.shape[0], ctx.rng)
        means = np.stack([X[g].mean(axis=0) for g in groups])
        if len(groups) == 1:
            return means[0]
        inner_cls = defenses.lookup(self.inner)
        inner = inner_cls()
        inner_f = math.ceil(f / self.bucket_size)
        if inner_cls.bounded and not 2 * inner_f + 2 < len(groups) and inner_cls.name in ("krum", "multikrum"):
            raise ConfigurationError(
                f"bucketing leaves {len(groups)} buckets, too few for {self.inner} with f={inner_f}"
            )
        return inner.aggregate(means, replace(ctx, f=inner_f))
