"""Attack interface, knowledge gating and shared helpers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..data import Dataset, PoisonSpec, embed_trigger, poisoned_test_set
from ..errors import ConfigurationError, HarnessError
from ..learning import LocalJob
from ..vector import rng_for

STAGES = ("data", "training", "post-training", "update")


@dataclass
class AttackContext:
    """Adversary view of a round.

    ``own_updates`` holds the adversaries' pre-attack updates (row ``i`` is
    client ``i``). ``benign_updates`` is empty unless the attack's knowledge
    row grants benign updates.
    """

    round: int
    n: int
    f: int
    own_updates: np.ndarray
    benign_updates: np.ndarray
    global_params: np.ndarray
    prev_global_update: Optional[np.ndarray] = None
    global_lr: float = 1.0
    seed: int = 0
    benign_ids: list = field(default_factory=list)

    def rng(self, label: str, client: int = -1) -> np.random.Generator:
        return rng_for(self.seed, f"attack:{label}", client, self.round)

    @property
    def dim(self) -> int:
        return self.own_updates.shape[1]


class Attack:
    """Base class. Subclasses set ``name``, ``stage`` and knowledge flags.

    ``local_update`` produces an adversary's (possibly poisoned) local update;
    ``craft`` turns the adversaries' updates into their final submissions.
    """

    name = "attack"
    stage = "post-training"
    knows_benign = False
    knows_malicious = False
    targeted = False
    defaults: dict = {}

    def __init__(self, poison: Optional[PoisonSpec] = None, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigurationError(f"{self.name}: unknown parameter(s) {sorted(unknown)}")
        self.params = {**self.defaults, **params}
        for k, v in self.params.items():
            setattr(self, k, v)
        self.poison = poison or PoisonSpec()
        self.seed = 0
        self.image_shape = None
        self.n_classes = None
        self.last_notes: dict = {}
        self.validate()

    def validate(self) -> None:
        pass

    def setup(self, fed) -> None:
        self.seed = fed.seed
        data = fed.clients[0].data
        self.image_shape = data.image_shape
        self.n_classes = data.n_classes

    def local_update(self, job: LocalJob) -> np.ndarray:
        return job.honest()

    def run_craft(self, fed, updates: np.ndarray, lr: float) -> np.ndarray:
        f = fed.f
        benign = updates[f:] if self.knows_benign else np.empty((0, updates.shape[1]))
        ctx = AttackContext(
            round=fed.round,
            n=fed.n,
            f=f,
            own_updates=updates[:f].copy(),
            benign_updates=benign.copy(),
            global_params=fed.params.copy(),
            prev_global_update=fed.prev_global_update,
            global_lr=fed.hyper.global_lr,
            seed=fed.seed,
            benign_ids=list(range(f, fed.n)) if self.knows_benign else [],
        )
        return self(ctx)

    def __call__(self, ctx: AttackContext) -> np.ndarray:
        if not self.knows_benign and ctx.benign_updates.size:
            raise HarnessError(f"{self.name} is not entitled to benign updates")
        self.last_notes = {}
        if ctx.f == 0:
            return np.empty((0, ctx.dim))
        out = self.craft(ctx)
        return np.asarray(out, dtype=np.float64).reshape(ctx.f, ctx.dim)

    def craft(self, ctx: AttackContext) -> np.ndarray:
        return ctx.own_updates

    def asr_inputs(self, test: Dataset) -> Optional[tuple[np.ndarray, int]]:
        """Inputs on which attack success is measured, and the label counted as success."""
        return None


class TriggerMixin:
    """Pixel-trigger data poisoning shared by the backdoor attacks."""

    targeted = True

    def trigger_spec(self, cid: int) -> PoisonSpec:
        return self.poison

    def trigger_hook(self, cid: int):
        spec = self.trigger_spec(cid)
        shape = self.image_shape

        def hook(x, y, rng):
            return embed_trigger(x, y, spec, shape, rng)

        return hook

    def asr_inputs(self, test: Dataset):
        return poisoned_test_set(test, self.poison), self.poison.target


def replacement_scale(n: int, global_lr: float, scale=None) -> float:
    return float(scale) if scale is not None else n / global_lr
