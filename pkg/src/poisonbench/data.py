"""Datasets, client partitioning and the data-poisoning synthesizer."""
from __future__ import annotations

import gzip
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, EmptyInputError

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class Dataset:
    """Images stored flat as ``(N, H*W)`` with values in [0, 1]."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    image_shape: tuple[int, int]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim == 3:
            self.x = self.x.reshape(self.x.shape[0], -1)
        if self.x.shape[0] != self.y.shape[0]:
            raise ConfigurationError("sample and label counts differ")
        if self.x.shape[1] != self.image_shape[0] * self.image_shape[1]:
            raise ConfigurationError("feature count does not match image shape")
        if not np.all(np.isfinite(self.x)):
            raise ConfigurationError("dataset contains non-finite features")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ConfigurationError("label out of range")

    def __len__(self):
        return self.y.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.n_classes, self.image_shape)


# ---------------------------------------------------------------- loading

def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzipped) into an ndarray."""
    path = Path(path)
    with _open(path) as fh:
        zero, dtype_code, ndim = struct.unpack(">HBB", fh.read(4))
        if zero != 0 or dtype_code != 0x08:
            raise ConfigurationError(f"{path}: unsupported IDX header")
        dims = struct.unpack(">" + "I" * ndim, fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise ConfigurationError(f"{path}: expected {int(np.prod(dims))} bytes, found {data.size}")
    return data.reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, 0x08, array.ndim))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def _find(directory: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        p = directory / name
        if p.exists():
            return p
    return None


def load_mnist(directory=None, split: str = "train") -> Dataset | None:
    """Load MNIST from IDX files in ``directory`` (default ``$FLP_DATA_DIR``).

    Returns ``None`` when the files are absent so callers can fall back to the
    synthetic generator.
    """
    directory = directory or os.environ.get("FLP_DATA_DIR")
    if not directory:
        return None
    prefix = "train" if split == "train" else "t10k"
    img = _find(Path(directory), f"{prefix}-images-idx3-ubyte")
    lab = _find(Path(directory), f"{prefix}-labels-idx1-ubyte")
    if img is None or lab is None:
        return None
    images = read_idx(img).astype(np.float64) / 255.0
    labels = read_idx(lab).astype(np.int64)
    return Dataset(images.reshape(images.shape[0], -1), labels, 10, images.shape[1:3])


def synthetic_blobs(
    n_samples: int,
    rng: np.random.Generator,
    *,
    n_classes: int = 10,
    side: int = 10,
    noise: float = 0.35,
    prototype_seed: int = 12345,
    margin: int = 2,
) -> Dataset:
    """Gaussian blobs shaped as small grayscale images.

    Each class has a fixed prototype (sparse bright strokes inside a dark
    border of width ``margin``); samples are prototype plus Gaussian pixel
    noise, clipped to [0, 1]. Prototypes depend only on ``prototype_seed`` so
    train, test and reserve draws share them.
    """
    if side <= 2 * margin:
        raise ConfigurationError("image side too small for the border margin")
    proto_rng = np.random.default_rng(prototype_seed)
    protos = np.zeros((n_classes, side, side))
    inner = side - 2 * margin
    for c in range(n_classes):
        mask = proto_rng.random((inner, inner)) < 0.35
        protos[c, margin:side - margin, margin:side - margin] = 0.9 * mask
    y = np.arange(n_samples) % n_classes
    y = rng.permutation(y)
    x = protos[y] + noise * rng.standard_normal((n_samples, side, side))
    x = np.clip(x, 0.0, 1.0)
    return Dataset(x.reshape(n_samples, -1), y, n_classes, (side, side))


# ---------------------------------------------------------------- partitioning

@dataclass
class PartitionSpec:
    mode: str = "iid"
    alpha: float = 0.5
    n: int = 10

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in ("iid", "dirichlet"):
            raise ConfigurationError(f"unknown partition mode {self.mode!r}")
        if self.alpha <= 0:
            raise ConfigurationError("Dirichlet alpha must be positive")
        if self.n < 1:
            raise ConfigurationError("need at least one client")


def partition(labels: np.ndarray, spec: PartitionSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Split sample indices among ``spec.n`` clients.

    IID deals class-sorted (shuffled within class) indices round-robin, which
    balances both class mix and quantity. Dirichlet draws, per class, client
    proportions from Dir(alpha) and cuts the class's shuffled indices at the
    rounded cumulative proportions.
    """
    labels = np.asarray(labels)
    n = spec.n
    if labels.shape[0] < n:
        raise ConfigurationError(f"{labels.shape[0]} samples cannot cover {n} clients")
    classes = np.unique(labels)
    if spec.mode == "iid":
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in classes])
        parts = [order[i::n] for i in range(n)]
    else:
        buckets: list[list[np.ndarray]] = [[] for _ in range(n)]
        for c in classes:
            idx = rng.permutation(np.flatnonzero(labels == c))
            props = rng.dirichlet(np.full(n, spec.alpha))
            cuts = np.round(np.cumsum(props)[:-1] * idx.size).astype(int)
            for i, chunk in enumerate(np.split(idx, cuts)):
                buckets[i].append(chunk)
        parts = [np.concatenate(b) for b in buckets]
        while True:
            sizes = np.array([p.size for p in parts])
            empty = np.flatnonzero(sizes == 0)
            if empty.size == 0:
                break
            donor = int(np.argmax(sizes))
            parts[empty[0]] = parts[donor][-1:]
            parts[donor] = parts[donor][:-1]
    return [np.sort(p) for p in parts]


# ---------------------------------------------------------------- poisoning

@dataclass
class Trigger:
    x: int = 0
    y: int = 0
    w: int = 3
    h: int = 3
    value: float = 1.0

    def check(self, image_shape: tuple[int, int]) -> None:
        rows, cols = image_shape
        if self.w < 1 or self.h < 1 or self.x < 0 or self.y < 0:
            raise ConfigurationError("trigger needs non-negative origin and positive size")
        if self.y + self.h > rows or self.x + self.w > cols:
            raise ConfigurationError(f"trigger {self} does not fit in a {rows}x{cols} image")

    def mask(self, image_shape: tuple[int, int], part: int | None = None, parts: int = 4) -> np.ndarray:
        """Boolean pixel mask of the full trigger or of one distributed piece.

        The block is cut at ``ceil(h/2)`` and ``ceil(w/2)`` into four disjoint
        quadrants; piece ``k`` is quadrant ``k mod 4``.
        """
        self.check(image_shape)
        m = np.zeros(image_shape, dtype=bool)
        if part is None:
            m[self.y:self.y + self.h, self.x:self.x + self.w] = True
            return m
        if parts != 4:
            raise ConfigurationError("distributed triggers are split into exactly 4 pieces")
        hr, wc = math.ceil(self.h / 2), math.ceil(self.w / 2)
        rows = [(self.y, self.y + hr), (self.y + hr, self.y + self.h)]
        cols = [(self.x, self.x + wc), (self.x + wc, self.x + self.w)]
        r0, r1 = rows[(part % 4) // 2]
        c0, c1 = cols[(part % 4) % 2]
        m[r0:r1, c0:c1] = True
        return m


@dataclass
class PoisonSpec:
    """What an adversary does to its data.

    ``kind`` is one of ``label-flip``, ``pixel-trigger``, ``distributed-trigger``
    or ``edge-case``; ``flip_mode`` selects the label-flip strategy.
    """

    kind: str = "pixel-trigger"
    flip_mode: str = "target"
    source: int = 7
    target: int = 1
    ratio: float = 20 / 64
    trigger: Trigger = field(default_factory=Trigger)
    part: int | None = None
    edge_mix: float = 0.5
    edge_rotation: float = 60.0
    edge_contrast: float = 0.5
    edge_noise: float = 0.15
    edge_pool: int = 200

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigurationError("poison ratio must lie in [0, 1]")
        if not 0.0 <= self.edge_mix <= 1.0:
            raise ConfigurationError("edge-case mix ratio must lie in [0, 1]")
        if self.flip_mode not in ("random", "inverse", "target"):
            raise ConfigurationError(f"unknown label-flip mode {self.flip_mode!r}")
        if self.flip_mode == "target" and self.kind == "label-flip" and self.source == self.target:
            raise ConfigurationError("targeted label flip needs source != target")


def n_poisoned(batch_size: int, ratio: float) -> int:
    # half-up rounding: 0.32 of 64 is 20 samples, and exact products stay exact
    return min(batch_size, int(math.floor(ratio * batch_size + 0.5)))


def flip_labels(y: np.ndarray, spec: PoisonSpec, n_classes: int, rng: np.random.Generator | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).copy()
    if spec.flip_mode == "inverse":
        return n_classes - y - 1
    if spec.flip_mode == "target":
        y[y == spec.source] = spec.target
        return y
    if rng is None:
        raise ConfigurationError("random label flipping needs an rng")
    shift = rng.integers(1, n_classes, size=y.shape)
    return (y + shift) % n_classes


def stamp(x: np.ndarray, image_shape: tuple[int, int], mask: np.ndarray, value: float) -> np.ndarray:
    """Write ``value`` over the masked pixels of every row of flat images ``x``."""
    out = np.array(x, dtype=np.float64, copy=True)
    out[:, mask.ravel()] = value
    return out


def embed_trigger(
    x: np.ndarray,
    y: np.ndarray,
    spec: PoisonSpec,
    image_shape: tuple[int, int],
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Stamp the trigger on a deterministic random subset of the batch and relabel it."""
    if len(image_shape) != 2:
        raise ConfigurationError("triggers need 2-D images")
    mask = spec.trigger.mask(image_shape, spec.part)
    k = n_poisoned(x.shape[0], spec.ratio)
    x, y = np.array(x, dtype=np.float64, copy=True), np.array(y, copy=True)
    if k == 0:
        return x, y
    chosen = rng.choice(x.shape[0], size=k, replace=False)
    x[chosen] = stamp(x[chosen], image_shape, mask, spec.trigger.value)
    y[chosen] = spec.target
    return x, y


def make_edge_case(dataset: Dataset, spec: PoisonSpec, rng: np.random.Generator, size: int | None = None) -> Dataset:
    """Surrogate tail-distribution pool built from source-class samples.

    Each source image is rotated, contrast-compressed and overlaid with pixel
    noise, then relabelled as the target class. ``dataset`` must be disjoint
    from the clean train/test splits.
    """
    size = spec.edge_pool if size is None else size
    src = np.flatnonzero(dataset.y == spec.source)
    if src.size == 0 or src.size < min(size, 10):
        raise ConfigurationError(f"only {src.size} samples of class {spec.source} available for the edge-case pool")
    pick = rng.choice(src, size=min(size, src.size), replace=False)
    imgs = dataset.x[pick].reshape(-1, *dataset.image_shape)
    out = np.empty_like(imgs)
    for i, img in enumerate(imgs):
        angle = spec.edge_rotation * (1.0 if rng.random() < 0.5 else -1.0)
        rot = ndimage.rotate(img, angle, reshape=False, order=1, mode="constant")
        out[i] = spec.edge_contrast * rot + (1.0 - spec.edge_contrast) * 0.5
    out += spec.edge_noise * rng.standard_normal(out.shape)
    out = np.clip(out, 0.0, 1.0)
    labels = np.full(out.shape[0], spec.target, dtype=np.int64)
    return Dataset(out.reshape(out.shape[0], -1), labels, dataset.n_classes, dataset.image_shape)


def poisoned_test_set(test: Dataset, spec: PoisonSpec) -> np.ndarray:
    """Triggered copies of every test image whose true label differs from the target."""
    keep = test.y != spec.target
    if not np.any(keep):
        raise EmptyInputError("no test samples outside the target class")
    mask = spec.trigger.mask(test.image_shape)
    return stamp(test.x[keep], test.image_shape, mask, spec.trigger.value)
