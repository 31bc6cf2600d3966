"""Untargeted model-poisoning attacks on submitted updates."""
from __future__ import annotations

import logging
from statistics import NormalDist

import numpy as np

from ..errors import ConfigurationError
from ..registry import attacks
from .base import Attack, AttackContext

log = logging.getLogger(__name__)

PERTURBATIONS = ("inverse-unit", "inverse-sign", "inverse-std")


@attacks.register("gaussian")
class Gaussian(Attack):
    name = "gaussian"
    stage = "post-training"
    defaults = {"sigma": 30.0}

    def validate(self):
        if self.sigma <= 0:
            raise ConfigurationError("gaussian attack needs sigma > 0")

    def craft(self, ctx):
        return np.stack([
            ctx.rng("gaussian", cid).normal(0.0, self.sigma, size=ctx.dim)
            for cid in range(ctx.f)
        ])


@attacks.register("signflipping")
class SignFlipping(Attack):
    name = "signflipping"
    stage = "post-training"
    defaults = {"scale": 1.0}

    def validate(self):
        if self.scale <= 0:
            raise ConfigurationError("sign flipping scale must be positive")

    def craft(self, ctx):
        return -self.scale * ctx.own_updates


def alie_z_max(n: int, f: int) -> float:
    """Largest z whose standard normal CDF stays below (n - floor(n/2 + 1)) / (n - f)."""
    if n - f <= 0:
        raise ConfigurationError("ALIE needs at least one benign client")
    s = (n - np.floor(n / 2 + 1)) / (n - f)
    s = min(max(s, 1e-12), 1 - 1e-12)
    return NormalDist().inv_cdf(s)


@attacks.register("alie")
class ALIE(Attack):
    name = "alie"
    stage = "update"
    knows_benign = True
    defaults = {}

    def craft(self, ctx):
        if ctx.n - ctx.f <= 0:
            raise ConfigurationError("ALIE needs at least one benign client")
        B = ctx.benign_updates
        mu, sigma = B.mean(axis=0), B.std(axis=0)
        z = alie_z_max(ctx.n, ctx.f)
        self.last_notes = {"z_max": z}
        return np.tile(mu - z * sigma, (ctx.f, 1))


@attacks.register("ipm")
class IPM(Attack):
    name = "ipm"
    stage = "update"
    knows_benign = True
    defaults = {"epsilon": 0.5, "use_mean": False}

    def validate(self):
        if self.epsilon <= 0:
            raise ConfigurationError("IPM epsilon must be positive")

    def craft(self, ctx):
        total = ctx.benign_updates.sum(axis=0)
        if self.use_mean and ctx.benign_updates.shape[0]:
            total = total / ctx.benign_updates.shape[0]
        return np.tile(-self.epsilon * total, (ctx.f, 1))


@attacks.register("mimic")
class Mimic(Attack):
    name = "mimic"
    stage = "update"
    knows_benign = True
    defaults = {"target": None}

    def craft(self, ctx):
        target = ctx.f if self.target is None else int(self.target)
        if target not in ctx.benign_ids:
            raise ConfigurationError(f"mimic target {target} is not a benign client id")
        row = ctx.benign_updates[ctx.benign_ids.index(target)]
        return np.tile(row, (ctx.f, 1))


def krum_index(X: np.ndarray, f: int) -> int:
    from ..defenses.robust import krum_scores, rank_scores

    return int(rank_scores(krum_scores(X, f))[0])


@attacks.register("fang")
class Fang(Attack):
    """Krum-targeted Fang attack: craft ``-lambda * sign`` and shrink lambda until Krum picks it."""

    name = "fang"
    stage = "update"
    knows_benign = True
    knows_malicious = True
    defaults = {"lambda0": 10.0, "lambda_floor": 1e-5}

    def search(self, ctx: AttackContext):
        s = np.sign(ctx.own_updates.mean(axis=0))
        lam = float(self.lambda0)
        crafted = -lam * s
        accepted = False
        while lam >= self.lambda_floor:
            crafted = -lam * s
            candidates = np.vstack([np.tile(crafted, (ctx.f, 1)), ctx.benign_updates])
            if krum_index(candidates, ctx.f) < ctx.f:
                accepted = True
                break
            lam /= 2.0
        return crafted, lam, accepted

    def craft(self, ctx):
        crafted, lam, accepted = self.search(ctx)
        if not accepted:
            log.debug("fang: lambda search exhausted without Krum selecting the crafted update")
        self.last_notes = {"fang_lambda": lam, "fang_accepted": accepted}
        return np.tile(crafted, (ctx.f, 1))


def perturbation(mean: np.ndarray, benign: np.ndarray, kind: str) -> np.ndarray:
    if kind == "inverse-unit":
        norm = np.linalg.norm(mean)
        return -mean / norm if norm > 0 else np.zeros_like(mean)
    if kind == "inverse-sign":
        return -np.sign(mean)
    if kind == "inverse-std":
        return -benign.std(axis=0)
    raise ConfigurationError(f"unknown perturbation {kind!r}; choose from {PERTURBATIONS}")


class _MinAttack(Attack):
    stage = "update"
    knows_benign = True
    defaults = {"perturbation": "inverse-unit", "gamma_max": 20.0, "iterations": 50}

    def validate(self):
        if self.perturbation not in PERTURBATIONS:
            raise ConfigurationError(f"unknown perturbation {self.perturbation!r}")

    def bound(self, benign: np.ndarray) -> float:
        raise NotImplementedError

    def value(self, g: np.ndarray, benign: np.ndarray) -> float:
        raise NotImplementedError

    def feasible(self, g, benign, bound) -> bool:
        return self.value(g, benign) <= bound

    def search(self, benign: np.ndarray):
        mean = benign.mean(axis=0)
        p = perturbation(mean, benign, self.perturbation)
        if not p.any():
            return mean, 0.0
        bound = self.bound(benign)
        lo, hi = 0.0, float(self.gamma_max)
        for _ in range(int(self.iterations)):
            mid = 0.5 * (lo + hi)
            if self.feasible(mean + mid * p, benign, bound):
                lo = mid
            else:
                hi = mid
        return mean + lo * p, lo

    def craft(self, ctx):
        g, gamma = self.search(ctx.benign_updates)
        self.last_notes = {"gamma": gamma}
        return np.tile(g, (ctx.f, 1))


@attacks.register("minmax")
class MinMax(_MinAttack):
    name = "minmax"

    def bound(self, benign):
        from ..vector import pairwise_sq_distances

        return float(np.sqrt(pairwise_sq_distances(benign).max()))

    def value(self, g, benign):
        return float(np.sqrt(np.max(np.sum((benign - g) ** 2, axis=1))))


@attacks.register("minsum")
class MinSum(_MinAttack):
    name = "minsum"

    def bound(self, benign):
        from ..vector import pairwise_sq_distances

        return float(pairwise_sq_distances(benign).sum(axis=1).max())

    def value(self, g, benign):
        return float(np.sum((benign - g) ** 2))
