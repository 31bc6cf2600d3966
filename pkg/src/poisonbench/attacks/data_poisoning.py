"""Targeted data-poisoning and hybrid backdoor attacks."""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Optional

import numpy as np

from ..data import Dataset, PoisonSpec, flip_labels, n_poisoned
from ..errors import ConfigurationError
from ..learning import ClientState, LocalJob, local_train
from ..registry import attacks
from .base import Attack, TriggerMixin, replacement_scale


@attacks.register("labelflipping")
class LabelFlipping(Attack):
    name = "labelflipping"
    stage = "data"
    targeted = True
    defaults = {"mode": None}

    def setup(self, fed):
        super().setup(fed)
        if self.mode is not None:
            self.poison = replace(self.poison, flip_mode=self.mode)
        if self.poison.source >= self.n_classes or self.poison.target >= self.n_classes:
            raise ConfigurationError("label-flip source/target outside the label range")

    def local_update(self, job):
        spec, L = self.poison, self.n_classes

        def hook(x, y, rng):
            return x, flip_labels(y, spec, L, rng)

        return job.honest(batch_hook=hook)

    def asr_inputs(self, test):
        if self.poison.flip_mode != "target":
            return None
        return test.x[test.y == self.poison.source], self.poison.target


@attacks.register("badnets")
class BadNets(TriggerMixin, Attack):
    name = "badnets"
    stage = "data"
    defaults = {}

    def setup(self, fed):
        super().setup(fed)
        self.poison.trigger.check(self.image_shape)

    def local_update(self, job):
        return job.honest(batch_hook=self.trigger_hook(job.client.cid))


@attacks.register("dba")
class DBA(TriggerMixin, Attack):
    """Each adversary stamps one quarter of the global trigger and scales its update."""

    name = "dba"
    stage = "data"
    defaults = {"scale": None}

    def setup(self, fed):
        super().setup(fed)
        self.poison.trigger.check(self.image_shape)

    def trigger_spec(self, cid):
        return replace(self.poison, part=cid % 4)

    def local_update(self, job):
        return job.honest(batch_hook=self.trigger_hook(job.client.cid))

    def craft(self, ctx):
        return replacement_scale(ctx.n, ctx.global_lr, self.scale) * ctx.own_updates


def cosine_distance_grad(w: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Gradient of ``1 - cos(w, ref)`` with respect to ``w``."""
    nw, nr = np.linalg.norm(w), np.linalg.norm(ref)
    if nw == 0 or nr == 0:
        return np.zeros_like(w)
    return -(ref / (nw * nr) - (w @ ref) * w / (nw ** 3 * nr))


@attacks.register("modelreplacement")
class ModelReplacement(TriggerMixin, Attack):
    """Backdoor training with a cosine anomaly term, then scaling by n / global_lr."""

    name = "modelreplacement"
    stage = "training"
    defaults = {"alpha": 0.5, "scale": None}

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("model replacement alpha must lie in [0, 1]")

    def local_update(self, job):
        ref = job.w_global
        extra = None
        if self.alpha < 1.0:
            weight = 1.0 - self.alpha
            extra = lambda w: weight * cosine_distance_grad(w, ref)
        return job.honest(
            batch_hook=self.trigger_hook(job.client.cid),
            ce_weight=self.alpha,
            extra_grad=extra,
        )

    def craft(self, ctx):
        return replacement_scale(ctx.n, ctx.global_lr, self.scale) * ctx.own_updates


def project_ball(center: np.ndarray, radius: float):
    def project(w):
        diff = w - center
        norm = np.linalg.norm(diff)
        if norm > radius:
            return center + diff * (radius / norm)
        return w
    return project


@attacks.register("edgecase")
class EdgeCase(Attack):
    """Edge-case backdoor with per-step projection onto an L2 ball around the global model."""

    name = "edgecase"
    stage = "training"
    targeted = True
    defaults = {"radius": None, "radius_factor": 2.0, "scaled": False, "scale": None}

    def __init__(self, poison: Optional[PoisonSpec] = None, edge_train: Optional[Dataset] = None,
                 edge_test: Optional[Dataset] = None, **params):
        super().__init__(poison, **params)
        self.edge_train = edge_train
        self.edge_test = edge_test
        self.last_radius: dict[int, float] = {}

    def setup(self, fed):
        super().setup(fed)
        if self.edge_train is None or len(self.edge_train) == 0:
            raise ConfigurationError("edge-case attack needs an edge-case pool")

    def mix_hook(self):
        pool, mix = self.edge_train, self.poison.edge_mix

        def hook(x, y, rng):
            k = n_poisoned(x.shape[0], mix)
            x, y = x.copy(), y.copy()
            if k:
                slots = rng.choice(x.shape[0], size=k, replace=False)
                picks = rng.integers(0, len(pool), size=k)
                x[slots] = pool.x[picks]
                y[slots] = pool.y[picks]
            return x, y

        return hook

    def radius_for(self, job: LocalJob) -> float:
        if self.radius is not None:
            return float(self.radius)
        # calibration: a clean local run from a scratch copy of the optimizer state
        scratch = ClientState(job.client.cid, True, job.client.data,
                              None if job.client.momentum is None else job.client.momentum.copy())
        rng = np.random.default_rng(job.rng.integers(2**63))
        cal = local_train(job.model, job.w_global, job.client.data, job.hyper, rng,
                          lr=job.lr, state=scratch)
        return self.radius_factor * float(np.linalg.norm(cal))

    def local_update(self, job):
        rho = self.radius_for(job)
        self.last_radius[job.client.cid] = rho
        return job.honest(batch_hook=self.mix_hook(), project=project_ball(job.w_global, rho))

    def craft(self, ctx):
        if self.scaled:
            return replacement_scale(ctx.n, ctx.global_lr, self.scale) * ctx.own_updates
        return ctx.own_updates

    def asr_inputs(self, test):
        if self.edge_test is None:
            return None
        return self.edge_test.x, self.poison.target


def neurotoxin_mask(prev_global_update: Optional[np.ndarray], d: int, k_ratio: float) -> np.ndarray:
    """Boolean mask of the ``ceil(k_ratio * d)`` smallest-magnitude coordinates."""
    if prev_global_update is None:
        return np.ones(d, dtype=bool)
    k = min(d, int(math.ceil(k_ratio * d)))
    order = np.argsort(np.abs(prev_global_update), kind="stable")
    mask = np.zeros(d, dtype=bool)
    mask[order[:k]] = True
    return mask


@attacks.register("neurotoxin")
class Neurotoxin(TriggerMixin, Attack):
    name = "neurotoxin"
    stage = "training"
    defaults = {"k_ratio": 0.95, "grad_clip": 10.0}

    def validate(self):
        if not 0.0 < self.k_ratio <= 1.0:
            raise ConfigurationError("neurotoxin k_ratio must lie in (0, 1]")

    def local_update(self, job):
        mask = neurotoxin_mask(job.prev_global_update, job.model.dim, self.k_ratio)
        center = job.w_global

        def project(w):
            return center + np.where(mask, w - center, 0.0)

        return job.honest(
            batch_hook=self.trigger_hook(job.client.cid),
            project=None if mask.all() else project,
            grad_clip=self.grad_clip,
        )


@attacks.register("altermin")
class AlterMin(TriggerMixin, Attack):
    """Alternates backdoor steps with steps pulling the update toward the last global update."""

    name = "altermin"
    stage = "training"
    defaults = {"alternations": 5, "alpha": 0.5, "poison_steps": 1, "stealth_steps": 1}

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("altermin alpha must lie in [0, 1]")
        if self.alternations < 1:
            raise ConfigurationError("altermin needs at least one alternation")

    def local_update(self, job):
        delta, trace = altermin_train(job, self.trigger_hook(job.client.cid), self.alternations,
                                      self.alpha, self.poison_steps, self.stealth_steps)
        self.trace = trace
        return delta


def altermin_train(job: LocalJob, batch_hook, alternations: int, alpha: float,
                   poison_steps: int, stealth_steps: int, probe=None):
    """Run the alternating schedule and return ``(update, local_asr_trace)``.

    ``probe`` is an optional ``(x, target)`` pair; its success rate is recorded
    after every alternation.
    """
    w0 = job.w_global
    ref = job.prev_global_update if job.prev_global_update is not None else np.zeros_like(w0)
    stealth_w = 1.0 - alpha
    w = w0.copy()
    trace = []

    def stealth_grad(v):
        return stealth_w * 2.0 * ((v - w0) - ref)

    for _ in range(alternations):
        if poison_steps:
            w = w + local_train(job.model, w, job.client.data, job.hyper, job.rng, lr=job.lr,
                                state=job.client, steps=poison_steps, batch_hook=batch_hook,
                                ce_weight=alpha)
        if stealth_steps:
            w = w + _stealth_steps(job, w, stealth_steps, stealth_grad)
        if probe is not None:
            x, target = probe
            trace.append(float(np.mean(job.model.predict(w, x) == target)))
    return w - w0, trace


def _stealth_steps(job: LocalJob, w: np.ndarray, steps: int, grad_fn) -> np.ndarray:
    from ..learning import sgd_step

    start = w.copy()
    for _ in range(steps):
        w = sgd_step(w, grad_fn(w), job.lr, job.hyper, job.client)
    return w - start
