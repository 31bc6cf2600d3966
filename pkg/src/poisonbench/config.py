"""Experiment configuration: a flat ``dotted.key = value`` text format.

Example::

    algorithm = fedsgd
    n = 10
    f = 2
    attack.name = badnets
    poison.trigger = {x=0, y=0, w=3, h=3, value=1.0}
    defense.name = trimmedmean
    defense.beta = 0.2
    train.rounds = 100

Lines starting with ``#`` are comments. ``defense.params.beta`` and
``defense.beta`` are equivalent (likewise for ``attack``).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .data import PartitionSpec, PoisonSpec, Trigger
from .errors import ConfigurationError
from .learning import TrainingHyper
from .registry import algorithms, attacks, defenses

DATASETS = ("synthetic", "mnist")

# 100 single-step FedSGD rounds at the full-scale rate 0.01 stop short of
# convergence on the desk tasks before the first decay milestone
DESK_LR = 0.05


def desk_hyper(**kw) -> TrainingHyper:
    return TrainingHyper(**{"lr": DESK_LR, **kw})


@dataclass
class ExperimentConfig:
    algorithm: str = "fedsgd"
    dataset: str = "synthetic"
    train_size: int = 2000
    test_size: int = 1000
    root_size: int = 100
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    n: int = 10
    f: int = 4
    arch: str = "mlp"
    hidden: int = 32
    attack: str = "none"
    attack_params: dict = field(default_factory=dict)
    poison: PoisonSpec = field(default_factory=PoisonSpec)
    defense: str = "mean"
    defense_params: dict = field(default_factory=dict)
    hyper: TrainingHyper = field(default_factory=desk_hyper)
    seed: int = 0
    eval_every: int = 5
    eval_window: int = 10
    out: str = "runs"

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        self.attack = self.attack.lower()
        self.defense = self.defense.lower()
        if self.partition.n != self.n:
            self.partition = replace(self.partition, n=self.n)
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.f < self.n:
            raise ConfigurationError(f"need 0 <= f < n, got n={self.n}, f={self.f}")
        if self.dataset not in DATASETS:
            raise ConfigurationError(f"unknown dataset {self.dataset!r}; choose from {DATASETS}")
        algorithms.lookup(self.algorithm)
        defenses.lookup(self.defense)
        if self.attack != "none":
            attacks.lookup(self.attack)
        if self.eval_every < 1 or self.eval_window < 1:
            raise ConfigurationError("evaluation interval and window must be positive")
        if self.train_size < self.n:
            raise ConfigurationError("fewer training samples than clients")

    @property
    def targeted(self) -> bool:
        return self.attack != "none" and attacks.lookup(self.attack).targeted

    def canonical(self) -> dict:
        """Everything that determines the run's results, as plain JSON data."""
        data = asdict(self)
        data.pop("out")
        data["hyper"] = {**data["hyper"], **asdict(self.hyper.for_algorithm(self.algorithm))}
        data["hyper"]["milestones"] = list(data["hyper"]["milestones"])
        return data

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def clean(self) -> "ExperimentConfig":
        return replace(self, attack="none", attack_params={})


# ------------------------------------------------------------------ parsing

def parse_value(text: str) -> Any:
    text = text.strip()
    if text.startswith("{") and text.endswith("}"):
        out = {}
        body = text[1:-1].strip()
        for item in filter(None, (p.strip() for p in body.split(","))):
            if "=" not in item and ":" not in item:
                raise ConfigurationError(f"malformed dict entry {item!r}")
            k, v = item.split("=" if "=" in item else ":", 1)
            out[k.strip()] = parse_value(v)
        return out
    if text.startswith("[") and text.endswith("]"):
        return [parse_value(p) for p in text[1:-1].split(",") if p.strip()]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def parse_text(text: str) -> dict[str, Any]:
    entries: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        entries[key] = parse_value(value)
    return entries


_TOP = {"algorithm", "n", "f", "seed", "out"}
_DATA = {"dataset.name": "dataset", "dataset.train_size": "train_size",
         "dataset.test_size": "test_size", "server.root_size": "root_size",
         "model.arch": "arch", "model.hidden": "hidden",
         "eval.every": "eval_every", "eval.window": "eval_window"}
_HYPER = {f.name for f in fields(TrainingHyper)}
_POISON = {f.name for f in fields(PoisonSpec)}


def build_config(entries: dict[str, Any], **overrides) -> ExperimentConfig:
    kw: dict[str, Any] = {}
    hyper: dict[str, Any] = {}
    poison: dict[str, Any] = {}
    part: dict[str, Any] = {}
    attack_params: dict[str, Any] = {}
    defense_params: dict[str, Any] = {}
    for key, value in entries.items():
        head, _, rest = key.partition(".")
        if key in _TOP:
            kw[key] = value
        elif key in _DATA:
            kw[_DATA[key]] = value
        elif head == "train" and rest in _HYPER:
            hyper[rest] = tuple(value) if rest == "milestones" else value
        elif head == "partition" and rest in ("mode", "alpha"):
            part[rest] = value
        elif head == "poison" and rest in _POISON:
            poison[rest] = Trigger(**value) if rest == "trigger" else value
        elif head in ("attack", "defense") and rest:
            if rest == "name":
                kw[head] = str(value)
            else:
                name = rest[len("params."):] if rest.startswith("params.") else rest
                (attack_params if head == "attack" else defense_params)[name] = value
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(
            hyper=desk_hyper(**hyper),
            poison=PoisonSpec(**poison),
            partition=PartitionSpec(n=int(kw.get("n", 10)), **part),
            attack_params=attack_params,
            defense_params=defense_params,
            **kw,
        )
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(path, **overrides) -> ExperimentConfig:
    text = Path(path).read_text()
    return build_config(parse_text(text), **overrides)
