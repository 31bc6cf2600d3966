"""Name -> factory registries for attacks, defenses and FL algorithms."""
from __future__ import annotations

import difflib
from typing import Callable, Iterator

from .errors import ConfigurationError


class Registry:
    def __init__(self, kind: str):
        self.kind = kind
        self._items: dict[str, Callable] = {}

    def register(self, name: str | None = None):
        def deco(obj):
            key = (name or getattr(obj, "name", None) or obj.__name__).lower()
            if key in self._items:
                raise ValueError(f"{self.kind} {key!r} registered twice")
            self._items[key] = obj
            return obj
        return deco

    def lookup(self, name: str) -> Callable:
        key = name.lower()
        try:
            return self._items[key]
        except KeyError:
            close = difflib.get_close_matches(key, self._items, n=3, cutoff=0.5)
            hint = f"; did you mean {', '.join(repr(c) for c in close)}?" if close else ""
            raise ConfigurationError(f"unknown {self.kind} {name!r}{hint}") from None

    def names(self) -> list[str]:
        return list(self._items)

    def __contains__(self, name: str) -> bool:
        return name.lower() in self._items

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)


attacks = Registry("attack")
defenses = Registry("defense")
algorithms = Registry("algorithm")
for _alg in ("fedsgd", "fedavg", "fedopt"):
    algorithms.register(_alg)(_alg)
