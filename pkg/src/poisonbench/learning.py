"""Local training, evaluation and the FedSGD / FedAvg / FedOpt round loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, EmptyInputError, IntegrityError
from .models import Model
from .vector import rng_for

ALGORITHMS = ("fedsgd", "fedavg", "fedopt")

BatchHook = Callable[[np.ndarray, np.ndarray, np.random.Generator], tuple]


@dataclass
class TrainingHyper:
    rounds: int = 100
    local_steps: int = 1
    lr: float = 0.01
    global_lr: float = 1.0
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: tuple = (0.5, 0.8)
    gamma: float = 0.01

    def __post_init__(self):
        if self.rounds < 1 or self.local_steps < 1 or self.batch_size < 1:
            raise ConfigurationError("rounds, local steps and batch size must be positive")
        if self.lr < 0 or self.global_lr <= 0:
            raise ConfigurationError("learning rates must be non-negative (global strictly positive)")

    def lr_at(self, round: int) -> float:
        """Local learning rate for 1-based round ``round`` (multi-step decay)."""
        lr = self.lr
        for frac in self.milestones:
            if round > int(frac * self.rounds):
                lr *= self.gamma
        return lr

    def for_algorithm(self, algorithm: str) -> "TrainingHyper":
        algorithm = algorithm.lower()
        if algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {algorithm!r}")
        if algorithm == "fedsgd":
            return replace(self, local_steps=1, global_lr=1.0)
        return self


@dataclass
class ClientState:
    cid: int
    adversary: bool
    data: Dataset
    momentum: Optional[np.ndarray] = None


def sample_batch(n: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    if n <= batch_size:
        return rng.permutation(n)
    return rng.choice(n, size=batch_size, replace=False)


def sgd_step(w, grad, lr, hyper: TrainingHyper, state: Optional[ClientState]):
    g = grad + hyper.weight_decay * w
    if hyper.momentum:
        if state is None:
            buf = g
        else:
            if state.momentum is None:
                state.momentum = np.zeros_like(w)
            state.momentum *= hyper.momentum
            state.momentum += g
            buf = state.momentum
        g = buf
    return w - lr * g


def clip_norm(v: np.ndarray, bound: float) -> np.ndarray:
    norm = np.linalg.norm(v)
    if bound is not None and norm > bound > 0:
        return v * (bound / norm)
    return v


def local_train(
    model,
    w_global: np.ndarray,
    data: Dataset,
    hyper: TrainingHyper,
    rng: np.random.Generator,
    *,
    lr: Optional[float] = None,
    state: Optional[ClientState] = None,
    steps: Optional[int] = None,
    batch_hook: Optional[BatchHook] = None,
    extra_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    grad_clip: Optional[float] = None,
    ce_weight: float = 1.0,
) -> np.ndarray:
    """Run ``steps`` mini-batch SGD steps from ``w_global`` and return ``w - w_global``.

    ``w_global`` is never modified. Hooks let attacks poison batches, add loss
    terms, clip gradients or project the iterate after each step.
    """
    if len(data) == 0:
        raise ConfigurationError("client partition is empty")
    lr = hyper.lr if lr is None else lr
    steps = hyper.local_steps if steps is None else steps
    w = np.array(w_global, dtype=np.float64, copy=True)
    for _ in range(steps):
        idx = sample_batch(len(data), hyper.batch_size, rng)
        x, y = data.x[idx], data.y[idx]
        if batch_hook is not None:
            x, y = batch_hook(x, y, rng)
        _, grad = model.loss_and_grad(w, x, y)
        if ce_weight != 1.0:
            grad = ce_weight * grad
        if extra_grad is not None:
            grad = grad + extra_grad(w)
        if grad_clip is not None:
            grad = clip_norm(grad, grad_clip)
        w = sgd_step(w, grad, lr, hyper, state)
        if project is not None:
            w = project(w)
    return w - w_global


def evaluate(
    model: Model,
    w: np.ndarray,
    test: Dataset,
    asr_x: Optional[np.ndarray] = None,
    target: Optional[int] = None,
    predict: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> tuple[float, Optional[float]]:
    """Clean accuracy and, when ``asr_x`` is given, the fraction predicted as ``target``."""
    if len(test) == 0:
        raise EmptyInputError("empty test set")
    predict = predict or (lambda X: model.predict(w, X))
    acc = float(np.mean(predict(test.x) == test.y))
    if asr_x is None:
        return acc, None
    if target is None:
        raise ConfigurationError("ASR needs a target label")
    if asr_x.shape[0] == 0:
        raise EmptyInputError("empty poisoned test set")
    asr = float(np.mean(predict(asr_x) == target))
    return acc, asr


@dataclass
class ServerContext:
    """What a defense may see besides the submissions themselves."""

    round: int
    model: Model
    global_params: np.ndarray
    n_classes: int
    rng: np.random.Generator
    prev_aggregate: Optional[np.ndarray] = None
    root_update: Optional[np.ndarray] = None
    f: Optional[int] = None
    updates_are_weights: bool = False


@dataclass
class LocalJob:
    """Everything one client needs to produce its update for a round."""

    model: Model
    w_global: np.ndarray
    client: ClientState
    hyper: TrainingHyper
    lr: float
    rng: np.random.Generator
    round: int
    n: int
    f: int
    prev_global_update: Optional[np.ndarray]

    def honest(self, **hooks) -> np.ndarray:
        return local_train(
            self.model, self.w_global, self.client.data, self.hyper, self.rng,
            lr=self.lr, state=self.client, **hooks,
        )


@dataclass
class RoundResult:
    params: np.ndarray
    submissions: np.ndarray
    malicious: np.ndarray
    aggregate: np.ndarray
    agg_seconds: float
    survivors: Optional[int] = None
    notes: dict = field(default_factory=dict)


class Federation:
    """Simulated server plus clients; adversaries occupy ids ``0..f-1``."""

    def __init__(
        self,
        model: Model,
        clients: list[ClientState],
        hyper: TrainingHyper,
        algorithm: str,
        defense,
        attack=None,
        *,
        seed: int = 0,
        root_data: Optional[Dataset] = None,
        init_params: Optional[np.ndarray] = None,
    ):
        self.algorithm = algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
        if not clients:
            raise ConfigurationError("need at least one client")
        self.model = model
        self.clients = sorted(clients, key=lambda c: c.cid)
        self.n = len(self.clients)
        self.f = sum(c.adversary for c in self.clients)
        if any(c.adversary != (c.cid < self.f) for c in self.clients):
            raise ConfigurationError("adversaries must occupy client ids 0..f-1")
        self.hyper = hyper.for_algorithm(self.algorithm)
        self.defense = defense
        self.attack = attack
        self.seed = seed
        self.root_data = root_data
        self.root_state = ClientState(-1, False, root_data) if root_data is not None else None
        if getattr(defense, "needs_root", False) and root_data is None:
            raise ConfigurationError(f"{type(defense).__name__} needs a server root dataset")
        self.params = (
            np.array(init_params, dtype=np.float64)
            if init_params is not None
            else model.init_params(rng_for(seed, "init"))
        )
        self.prev_global_update: Optional[np.ndarray] = None
        self.prev_aggregate: Optional[np.ndarray] = None
        self.round = 0
        if attack is not None:
            attack.setup(self)

    def _job(self, client: ClientState, lr: float) -> LocalJob:
        return LocalJob(
            model=self.model,
            w_global=self.params,
            client=client,
            hyper=self.hyper,
            lr=lr,
            rng=rng_for(self.seed, "local", client.cid, self.round),
            round=self.round,
            n=self.n,
            f=self.f,
            prev_global_update=self.prev_global_update,
        )

    def run_round(self) -> RoundResult:
        self.round += 1
        lr = self.hyper.lr_at(self.round)
        d = self.model.dim
        updates = np.empty((self.n, d))
        for i, client in enumerate(self.clients):
            job = self._job(client, lr)
            if client.adversary and self.attack is not None:
                updates[i] = self.attack.local_update(job)
            else:
                updates[i] = job.honest()

        malicious = np.array([c.adversary for c in self.clients])
        notes = {}
        if self.attack is not None and self.f > 0:
            crafted = self.attack.run_craft(self, updates, lr)
            crafted = np.asarray(crafted, dtype=np.float64)
            if crafted.shape != (self.f, d):
                raise IntegrityError(f"attack returned shape {crafted.shape}, expected {(self.f, d)}")
            updates[: self.f] = crafted
            notes.update(getattr(self.attack, "last_notes", {}) or {})

        weights = self.algorithm == "fedavg"
        submissions = updates + self.params if weights else updates

        root_update = None
        if getattr(self.defense, "needs_root", False):
            root_update = local_train(
                self.model, self.params, self.root_data, self.hyper,
                rng_for(self.seed, "root", -1, self.round), lr=lr, state=self.root_state,
            )
            if weights:
                root_update = root_update + self.params
        ctx = ServerContext(
            round=self.round,
            model=self.model,
            global_params=self.params.copy(),
            n_classes=self.model.n_classes,
            rng=rng_for(self.seed, "defense", -1, self.round),
            prev_aggregate=self.prev_aggregate,
            root_update=root_update,
            f=self.f if getattr(self.defense, "bounded", False) else None,
            updates_are_weights=weights,
        )
        start = time.perf_counter()
        agg = self.defense.aggregate(submissions.copy(), ctx)
        elapsed = time.perf_counter() - start
        agg = np.asarray(agg, dtype=np.float64)
        if agg.shape != (d,):
            raise IntegrityError(f"defense returned shape {agg.shape}, expected {(d,)}")

        old = self.params
        if weights:
            new = agg.copy()
        else:
            new = old + self.hyper.global_lr * agg
        post = getattr(self.defense, "post_update", None)
        if post is not None:
            new = post(new, rng_for(self.seed, "defense-post", -1, self.round))
        self.prev_aggregate = agg - old if weights else agg
        self.prev_global_update = new - old
        self.params = new
        selected = getattr(self.defense, "selected", None)
        return RoundResult(
            params=new,
            submissions=submissions,
            malicious=malicious,
            aggregate=agg,
            agg_seconds=elapsed,
            survivors=None if selected is None else int(len(selected)),
            notes=notes,
        )

    def predict_fn(self, round: int):
        smooth = getattr(self.defense, "predict", None)
        if smooth is None:
            return None
        w = self.params
        return lambda X: smooth(self.model, w, X, rng_for(self.seed, "smoothing", -1, round))
