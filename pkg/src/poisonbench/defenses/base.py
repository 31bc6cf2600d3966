"""Defense interface."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..errors import ConfigurationError
from ..vector import check_finite, stack_updates


class Defense:
    """Aggregation rule. ``aggregate`` never mutates its input.

    ``bounded`` rules receive the adversary count through ``ctx.f`` (or an
    explicit ``f`` parameter); ``needs_root`` asks the server for a root update.
    After each call ``selected`` holds the indices that survived filtering, or
    ``None`` for rules that keep everyone.
    """

    name = "defense"
    bounded = False
    needs_root = False
    defaults: dict = {}

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults) - ({"f"} if self.bounded else set())
        if unknown:
            raise ConfigurationError(f"{self.name}: unknown parameter(s) {sorted(unknown)}")
        self.params = {**self.defaults, **params}
        for k, v in self.params.items():
            setattr(self, k if k != "f" else "f_assumed", v)
        if self.bounded and not hasattr(self, "f_assumed"):
            self.f_assumed = None
        self.selected = None
        self.validate()

    def validate(self) -> None:
        pass

    def adversaries(self, ctx) -> int:
        f = self.f_assumed if self.f_assumed is not None else ctx.f
        if f is None:
            raise ConfigurationError(f"{self.name} needs the number of adversaries f")
        return int(f)

    def aggregate(self, updates, ctx) -> np.ndarray:
        X = stack_updates(updates).copy()
        check_finite(X)
        self.selected = None
        if not getattr(ctx, "updates_are_weights", False):
            return self._aggregate(X, ctx)
        # weight submissions are judged as offsets from the current global model
        g = np.asarray(ctx.global_params, dtype=np.float64)
        root = None if ctx.root_update is None else ctx.root_update - g
        inner = replace(ctx, updates_are_weights=False, root_update=root)
        return g + self._aggregate(X - g, inner)

    def _aggregate(self, X: np.ndarray, ctx) -> np.ndarray:
        raise NotImplementedError
