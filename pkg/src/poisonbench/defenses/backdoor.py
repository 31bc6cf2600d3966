"""Backdoor-oriented defenses: clustering filters, history weighting, clipping and noise."""
from __future__ import annotations

import logging
import math

import numpy as np

from ..errors import ConfigurationError
from ..registry import defenses
from ..vector import coordinate_median, pairwise_cosine
from .base import Defense
from .cluster import majority_label, majority_linkage_cluster, split_1d, two_means

log = logging.getLogger(__name__)


def clip_rows(X: np.ndarray, bound: float) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    factor = np.maximum(1.0, norms / bound) if bound > 0 else np.where(norms > 0, np.inf, 1.0)
    return X / factor[:, None]


@defenses.register("auror")
class Auror(Defense):
    """Coordinates whose values split into two well-separated groups mark the clients to cluster on.

    Without an explicit ``threshold`` a coordinate is indicative when its
    2-means center gap exceeds ``threshold_factor`` times the median
    per-coordinate standard deviation.
    """

    name = "auror"
    defaults = {"threshold": None, "threshold_factor": 4.0, "s": 1000}

    def validate(self):
        if self.s < 1 or self.threshold_factor <= 0:
            raise ConfigurationError("auror needs s >= 1 and threshold_factor > 0")

    def indicative(self, X: np.ndarray) -> np.ndarray:
        if X.shape[0] < 2:
            return np.array([], dtype=int)
        gap, _ = split_1d(X)
        if self.threshold is not None:
            thr = float(self.threshold)
        else:
            thr = self.threshold_factor * float(np.median(X.std(axis=0)))
        cand = np.flatnonzero(gap > thr)
        if cand.size > self.s:
            cand = cand[np.argsort(-gap[cand], kind="stable")[: int(self.s)]]
        return np.sort(cand)

    def _aggregate(self, X, ctx):
        feats = self.indicative(X)
        self.features = feats
        if feats.size == 0:
            return X.mean(axis=0)
        labels = two_means(X[:, feats])
        keep = np.flatnonzero(labels == majority_label(labels))
        self.selected = keep.tolist()
        return X[keep].mean(axis=0)


def foolsgold_weights(H: np.ndarray) -> np.ndarray:
    """Per-client weights from accumulated histories, following the reference FoolsGold code."""
    n = H.shape[0]
    cs = pairwise_cosine(H) - np.eye(n)
    maxcs = cs.max(axis=1)
    for i in range(n):
        for j in range(n):
            if i != j and maxcs[i] < maxcs[j] and maxcs[j] > 0:
                cs[i, j] *= maxcs[i] / maxcs[j]
    wv = np.clip(1.0 - cs.max(axis=1), 0.0, 1.0)
    top = wv.max()
    if top == 0:
        return wv
    wv = wv / top
    wv[wv == 1.0] = 0.99
    with np.errstate(divide="ignore"):
        wv = np.log(wv / (1.0 - wv)) + 0.5
    wv[np.isinf(wv) & (wv > 0)] = 1.0
    return np.clip(wv, 0.0, 1.0)


@defenses.register("foolsgold")
class FoolsGold(Defense):
    name = "foolsgold"
    defaults = {"s": 1000}

    def __init__(self, **params):
        super().__init__(**params)
        self.history: np.ndarray | None = None

    def features(self, ctx, d: int) -> np.ndarray:
        ws, bs = ctx.model.output_layer()
        idx = np.arange(ws.start, bs.stop)
        if idx.size > self.s:
            mag = np.abs(np.asarray(ctx.global_params)[idx])
            idx = np.sort(idx[np.argsort(-mag, kind="stable")[: int(self.s)]])
        return idx

    def _aggregate(self, X, ctx):
        prior = self.history
        if prior is not None and prior.shape != X.shape:
            prior = None
        accumulated = X.copy() if prior is None else prior + X
        if prior is None:
            out = X.mean(axis=0)
            self.weights = np.ones(X.shape[0])
        else:
            idx = self.features(ctx, X.shape[1])
            wv = foolsgold_weights(accumulated[:, idx])
            self.weights = wv
            out = X.mean(axis=0) if wv.sum() == 0 else (wv[:, None] * X).sum(axis=0) / wv.sum()
            self.selected = np.flatnonzero(wv > 0).tolist()
        self.history = accumulated
        return out


@defenses.register("normclipping")
class NormClipping(Defense):
    """Clip each update to norm ``M`` and average. ``M=None`` uses the round's median norm."""

    name = "normclipping"
    defaults = {"M": None}

    def validate(self):
        if self.M is not None and self.M <= 0:
            raise ConfigurationError("normclipping bound M must be positive")

    def _aggregate(self, X, ctx):
        bound = float(np.median(np.linalg.norm(X, axis=1))) if self.M is None else float(self.M)
        self.bound = bound
        return clip_rows(X, bound).mean(axis=0)


@defenses.register("crfl")
class CRFL(Defense):
    """Mean aggregation, then clip and perturb the global parameters; inference votes over noisy copies."""

    name = "crfl"
    defaults = {"rho": 20.0, "sigma": 0.002, "k": 5}

    def validate(self):
        if self.rho <= 0 or self.sigma < 0 or self.k < 1:
            raise ConfigurationError("crfl needs rho > 0, sigma >= 0 and k >= 1")

    def _aggregate(self, X, ctx):
        return X.mean(axis=0)

    def post_update(self, params: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        norm = float(np.linalg.norm(params))
        if norm > self.rho:
            params = params * (self.rho / norm)
        if self.sigma > 0:
            params = params + rng.normal(0.0, self.sigma, size=params.shape)
        return params

    def predict(self, model, w: np.ndarray, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.sigma == 0:
            return model.predict(w, X)
        votes = np.zeros((X.shape[0], model.n_classes), dtype=int)
        rows = np.arange(X.shape[0])
        for _ in range(int(self.k)):
            noisy = w + rng.normal(0.0, self.sigma, size=w.shape)
            votes[rows, model.predict(noisy, X)] += 1
        return np.argmax(votes, axis=1)


def neup(X: np.ndarray, ws: slice, bs: slice, n_classes: int) -> np.ndarray:
    """Normalized update energy of each output neuron, per client."""
    W = np.abs(X[:, ws]).reshape(X.shape[0], -1, n_classes).sum(axis=1)
    energy = W + np.abs(X[:, bs])
    sq = energy ** 2
    total = sq.sum(axis=1, keepdims=True)
    return np.divide(sq, total, out=np.zeros_like(sq), where=total > 0)


def threshold_exceedings(N: np.ndarray, tau: float) -> np.ndarray:
    return (N > tau * N.max(axis=1, keepdims=True)).sum(axis=1)


def _standardize(F: np.ndarray) -> np.ndarray:
    sd = F.std(axis=0)
    return (F - F.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


@defenses.register("deepsight")
class DeepSight(Defense):
    name = "deepsight"
    defaults = {"tau": 0.01, "probes": 2000, "drop_fraction": 1 / 3}

    def validate(self):
        if not 0 < self.tau < 1 or self.probes < 1:
            raise ConfigurationError("deepsight needs 0 < tau < 1 and probes >= 1")

    def _aggregate(self, X, ctx):
        model, g = ctx.model, np.asarray(ctx.global_params, dtype=np.float64)
        L = model.n_classes
        ws, bs = model.output_layer()
        N = neup(X, ws, bs, L)
        te = threshold_exceedings(N, self.tau)
        suspicious = te <= np.median(te) / 2.0

        probes = ctx.rng.random((int(self.probes), model.in_dim))
        base = model.forward(g, probes).mean(axis=0)
        ddif = np.stack([model.forward(g + x, probes).mean(axis=0) for x in X]) / np.maximum(base, 1e-12)
        cos_dist = 1.0 - pairwise_cosine(X[:, bs])
        F = np.hstack([_standardize(ddif), _standardize(N), _standardize(cos_dist)])
        labels = two_means(F)

        keep = np.zeros(X.shape[0], dtype=bool)
        for k in np.unique(labels):
            members = labels == k
            if suspicious[members].mean() < self.drop_fraction:
                keep |= members
        self.suspicious = suspicious
        self.selected = np.flatnonzero(keep).tolist()
        if not keep.any():
            log.warning("deepsight: every cluster dropped, falling back to median")
            return coordinate_median(X)
        bound = float(np.median(np.linalg.norm(X, axis=1)))
        return clip_rows(X[keep], bound).mean(axis=0)


def flame_lambda(epsilon: float, delta: float) -> float:
    return (1.0 / epsilon) * math.sqrt(2.0 * math.log(1.25 / delta))


@defenses.register("flame")
class FLAME(Defense):
    name = "flame"
    defaults = {"epsilon": 3000.0, "delta": 1e-5}

    def validate(self):
        if self.epsilon <= 0 or not 0 < self.delta < 1:
            raise ConfigurationError("flame needs epsilon > 0 and delta in (0, 1)")

    def _aggregate(self, X, ctx):
        n = X.shape[0]
        if n < 3:
            raise ConfigurationError("flame needs at least 3 submissions")
        admitted = majority_linkage_cluster(1.0 - pairwise_cosine(X), n // 2 + 1)
        if admitted is None:
            log.warning("flame: no majority cluster, falling back to median")
            self.selected = []
            return coordinate_median(X)
        self.selected = admitted.tolist()
        med = float(np.median(np.linalg.norm(X, axis=1)))
        out = clip_rows(X[admitted], med).mean(axis=0)
        self.pre_noise = out.copy()
        sigma = flame_lambda(self.epsilon, self.delta) * med
        if sigma > 0:
            out = out + ctx.rng.normal(0.0, sigma, size=out.shape)
        return out
