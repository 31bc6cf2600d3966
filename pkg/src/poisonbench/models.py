"""Desk-scale classifiers with hand-written backprop.

Parameters live in one flat float64 vector. Layer order is input to output;
within a layer the weight matrix (``in x out``, row-major) precedes the bias.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .vector import flatten, unflatten

ARCHITECTURES = ("logreg", "mlp")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class Model:
    """Architecture descriptor; the weights themselves are passed around as vectors."""

    arch: str
    in_dim: int
    n_classes: int
    hidden: int = 32

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {self.arch!r}; choose from {ARCHITECTURES}")
        if self.in_dim < 1 or self.n_classes < 2:
            raise ConfigurationError("model needs in_dim >= 1 and at least 2 classes")
        if self.arch == "mlp" and self.hidden < 1:
            raise ConfigurationError("mlp hidden width must be positive")

    @property
    def shapes(self) -> list[tuple]:
        if self.arch == "logreg":
            return [(self.in_dim, self.n_classes), (self.n_classes,)]
        return [
            (self.in_dim, self.hidden),
            (self.hidden,),
            (self.hidden, self.n_classes),
            (self.n_classes,),
        ]

    @property
    def dim(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)

    def output_layer(self) -> tuple[slice, slice]:
        """Flat-vector slices of the output layer's weight matrix and bias."""
        sizes = [int(np.prod(s)) for s in self.shapes]
        start_b = sum(sizes[:-1])
        start_w = start_b - sizes[-2]
        return slice(start_w, start_b), slice(start_b, start_b + sizes[-1])

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        layers = []
        for shape in self.shapes:
            if len(shape) == 2:
                bound = 1.0 / np.sqrt(shape[0])
                layers.append(rng.uniform(-bound, bound, size=shape))
            else:
                layers.append(np.zeros(shape))
        return flatten(layers)

    def unpack(self, w: np.ndarray) -> list[np.ndarray]:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.dim,):
            raise DimensionError(f"parameter vector has shape {w.shape}, model needs ({self.dim},)")
        return unflatten(w, self.shapes)

    def _views(self, w: np.ndarray) -> list[np.ndarray]:
        if w.shape != (self.dim,):
            raise DimensionError(f"parameter vector has shape {w.shape}, model needs ({self.dim},)")
        out, pos = [], 0
        for s in self.shapes:
            k = int(np.prod(s))
            out.append(w[pos:pos + k].reshape(s))
            pos += k
        return out

    def logits(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        p = self._views(w)
        if self.arch == "logreg":
            return X @ p[0] + p[1]
        h = np.tanh(X @ p[0] + p[1])
        return h @ p[2] + p[3]

    def forward(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        return softmax(self.logits(w, X))

    def predict(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(w, X), axis=1)

    def loss_and_grad(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean cross-entropy over the batch and its gradient w.r.t. ``w``."""
        p = self._views(w)
        m = X.shape[0]
        if self.arch == "logreg":
            logits = X @ p[0] + p[1]
        else:
            h = np.tanh(X @ p[0] + p[1])
            logits = h @ p[2] + p[3]
        z = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(logsum - z[np.arange(m), y]))
        delta = np.exp(z - logsum[:, None])
        delta[np.arange(m), y] -= 1.0
        delta /= m

        grad = np.empty(self.dim)
        g = self._views(grad)
        if self.arch == "logreg":
            g[0][...] = X.T @ delta
            g[1][...] = delta.sum(axis=0)
            return loss, grad
        g[2][...] = h.T @ delta
        g[3][...] = delta.sum(axis=0)
        dh = (delta @ p[2].T) * (1.0 - h * h)
        g[0][...] = X.T @ dh
        g[1][...] = dh.sum(axis=0)
        return loss, grad
