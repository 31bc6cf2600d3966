"""Flat update vectors: distances, similarity, coordinate statistics and seeding.

Every client update travels through the system as a 1-D float64 array of
length ``d``. Model parameters are flattened layer by layer, row-major within
each layer, so ``unflatten(flatten(p), shapes)`` reproduces ``p`` bit-exactly.
"""
from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError, NumericError


def as_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D update vector, got shape {v.shape}")
    return v


def check_finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite entry in update vector")


def stack_updates(vs) -> np.ndarray:
    """Stack a list of updates into an ``(n, d)`` array, validating shapes."""
    if isinstance(vs, np.ndarray) and vs.ndim == 2:
        if vs.shape[0] == 0:
            raise EmptyInputError("no updates supplied")
        return vs.astype(np.float64, copy=False)
    vs = list(vs)
    if not vs:
        raise EmptyInputError("no updates supplied")
    rows = [as_vector(v) for v in vs]
    d = rows[0].shape[0]
    for r in rows:
        if r.shape[0] != d:
            raise DimensionError(f"update lengths differ: {d} vs {r.shape[0]}")
    return np.stack(rows)


def l2_distance(a, b) -> float:
    a, b = as_vector(a), as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    check_finite(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def cosine_similarity(a, b, *, return_flag: bool = False):
    """Cosine of the angle between ``a`` and ``b``.

    A zero-norm input has no direction; the similarity is reported as 0 and,
    with ``return_flag=True``, a second value ``True`` marks the degenerate case.
    """
    a, b = as_vector(a), as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    check_finite(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return (0.0, True) if return_flag else 0.0
    c = float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
    return (c, False) if return_flag else c


def pairwise_cosine(X: np.ndarray) -> np.ndarray:
    """Cosine similarity matrix of the rows of ``X`` (zero rows give 0)."""
    norms = np.linalg.norm(X, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    U = X / safe[:, None]
    C = np.clip(U @ U.T, -1.0, 1.0)
    zero = norms == 0
    C[zero, :] = 0.0
    C[:, zero] = 0.0
    return C


def pairwise_sq_distances(X: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows, computed from explicit differences."""
    n = X.shape[0]
    D = np.zeros((n, n))
    for i in range(n):
        diff = X[i + 1:] - X[i]
        row = np.einsum("ij,ij->i", diff, diff)
        D[i, i + 1:] = row
        D[i + 1:, i] = row
    return D


def coordinate_median(vs) -> np.ndarray:
    """Per-coordinate median; even counts average the two middle values."""
    X = stack_updates(vs)
    return np.median(X, axis=0)


def flatten(params: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in params])


def unflatten(vector, shapes: Sequence[tuple]) -> list[np.ndarray]:
    v = as_vector(vector)
    total = sum(int(np.prod(s)) for s in shapes)
    if v.shape[0] != total:
        raise DimensionError(f"vector has {v.shape[0]} entries, shapes need {total}")
    out, pos = [], 0
    for s in shapes:
        k = int(np.prod(s))
        out.append(v[pos:pos + k].reshape(s).copy())
        pos += k
    return out


class RngStream:
    """Named random stream derived from a master seed.

    The stream identity is ``(label, client, round)``; the same identity under
    the same master seed always yields the same numbers. Mixing is delegated to
    :class:`numpy.random.SeedSequence`, whose hash has full avalanche.
    """

    def __init__(self, master_seed: int, label: str, client: int = -1, round: int = 0):
        self.master_seed = int(master_seed)
        self.label = label
        self.client = int(client)
        self.round = int(round)
        entropy = [
            self.master_seed & 0xFFFFFFFFFFFFFFFF,
            zlib.crc32(label.encode("utf-8")),
            self.client + 1,
            self.round,
        ]
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def __repr__(self):
        return f"RngStream(seed={self.master_seed}, label={self.label!r}, client={self.client}, round={self.round})"


def rng_for(master_seed: int, label: str, client: int = -1, round: int = 0) -> np.random.Generator:
    return RngStream(master_seed, label, client, round).generator
