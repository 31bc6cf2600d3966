"""Filtering rules based on a trusted reference, spectral scores or sign statistics."""
from __future__ import annotations

import logging

import numpy as np

from ..errors import ConfigurationError
from ..registry import defenses
from ..vector import coordinate_median
from .base import Defense
from .cluster import majority_label, two_means

log = logging.getLogger(__name__)


def fltrust(X: np.ndarray, g0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trust-weighted mean of updates rescaled to the root update's norm.

    Returns ``(aggregate, trust)``. Zero-norm updates get zero trust; when no
    client earns trust the root update itself is returned.
    """
    n0 = float(np.linalg.norm(g0))
    norms = np.linalg.norm(X, axis=1)
    trust = np.zeros(X.shape[0])
    if n0 == 0:
        return g0.copy(), trust
    ok = norms > 0
    trust[ok] = np.maximum(0.0, (X[ok] @ g0) / (norms[ok] * n0))
    total = trust.sum()
    if total == 0:
        return g0.copy(), trust
    scaled = np.zeros_like(X)
    scaled[ok] = X[ok] * (n0 / norms[ok])[:, None]
    return (trust[:, None] * scaled).sum(axis=0) / total, trust


@defenses.register("fltrust")
class FLTrust(Defense):
    name = "fltrust"
    needs_root = True

    def _aggregate(self, X, ctx):
        if ctx.root_update is None:
            raise ConfigurationError("fltrust needs the server root update")
        out, trust = fltrust(X, np.asarray(ctx.root_update, dtype=np.float64))
        self.trust = trust
        self.selected = [int(i) for i in np.flatnonzero(trust > 0)]
        return out


def dnc_keep(X: np.ndarray, rng: np.random.Generator, d_sub: int, rounds: int, keep: int) -> np.ndarray:
    """Indices surviving every spectral filtering round."""
    n, d = X.shape
    survivors = set(range(n))
    for _ in range(rounds):
        cols = np.sort(rng.choice(d, size=min(d_sub, d), replace=False))
        sub = X[:, cols]
        centered = sub - sub.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        scores = (centered @ vt[0]) ** 2
        survivors &= set(np.argsort(scores, kind="stable")[:keep].tolist())
    return np.array(sorted(survivors), dtype=int)


@defenses.register("dnc")
class DnC(Defense):
    """Divide-and-conquer: drop the clients with the largest top-singular-direction projections."""

    name = "dnc"
    bounded = True
    defaults = {"d_sub": 1000, "rounds": 5, "beta": 1.0}

    def validate(self):
        if self.d_sub < 1 or self.rounds < 1 or self.beta < 0:
            raise ConfigurationError("dnc needs d_sub >= 1, rounds >= 1 and beta >= 0")

    def _aggregate(self, X, ctx):
        n = X.shape[0]
        keep = n - int(np.floor(self.beta * self.adversaries(ctx)))
        if keep < 1:
            raise ConfigurationError(f"dnc would keep {keep} of {n} clients")
        kept = dnc_keep(X, ctx.rng, int(self.d_sub), int(self.rounds), keep)
        if kept.size == 0:
            log.warning("dnc: empty keep set, falling back to median")
            self.selected = []
            return coordinate_median(X)
        self.selected = kept.tolist()
        return X[kept].mean(axis=0)


def sign_stats(X: np.ndarray, cols: np.ndarray) -> np.ndarray:
    S = np.sign(X[:, cols])
    m = cols.size
    return np.stack([(S > 0).sum(1) / m, (S < 0).sum(1) / m, (S == 0).sum(1) / m], axis=1)


@defenses.register("signguard")
class SignGuard(Defense):
    name = "signguard"
    defaults = {"lower": 0.1, "upper": 3.0, "coord_fraction": 0.1}

    def validate(self):
        if not 0 < self.lower <= self.upper:
            raise ConfigurationError("signguard bounds need 0 < lower <= upper")
        if not 0 < self.coord_fraction <= 1:
            raise ConfigurationError("signguard coord_fraction must lie in (0, 1]")

    def _aggregate(self, X, ctx):
        n, d = X.shape
        norms = np.linalg.norm(X, axis=1)
        med = float(np.median(norms))
        stage1 = (norms >= self.lower * med) & (norms <= self.upper * med)
        m = max(1, int(round(self.coord_fraction * d)))
        cols = np.sort(ctx.rng.choice(d, size=m, replace=False))
        labels = two_means(sign_stats(X, cols))
        stage2 = labels == majority_label(labels)
        keep = np.flatnonzero(stage1 & stage2)
        self.selected = keep.tolist()
        if keep.size == 0:
            log.warning("signguard: no survivors, falling back to median")
            return coordinate_median(X)
        return X[keep].mean(axis=0)
