"""Small deterministic clustering routines used by the filtering defenses."""
from __future__ import annotations

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform


def two_means(P: np.ndarray, max_iter: int = 100) -> np.ndarray:
    """Lloyd's 2-means with a deterministic farthest-point start.

    Returns labels in {0, 1}. Identical points all get label 0.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    n = P.shape[0]
    if n < 2:
        return np.zeros(n, dtype=int)
    a = int(np.argmax(np.sum((P - P.mean(axis=0)) ** 2, axis=1)))
    b = int(np.argmax(np.sum((P - P[a]) ** 2, axis=1)))
    if np.allclose(P[a], P[b]):
        return np.zeros(n, dtype=int)
    c = np.stack([P[a], P[b]])
    labels = None
    for _ in range(max_iter):
        d = np.sum((P[:, None, :] - c[None, :, :]) ** 2, axis=2)
        new = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in (0, 1):
            if np.any(labels == k):
                c[k] = P[labels == k].mean(axis=0)
    return labels


def majority_label(labels: np.ndarray) -> int:
    """Label of the larger cluster; ties go to the cluster holding the lowest index."""
    counts = np.bincount(labels, minlength=2)
    if counts[0] == counts[1]:
        return int(labels[0])
    return int(np.argmax(counts))


def split_1d(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact 1-D 2-means on every column of ``X``.

    The optimal 2-means split of sorted values is contiguous, so every split
    point is scored. Returns ``(gap, threshold)`` per column: the distance
    between the two centers and the boundary value separating them.
    """
    n, d = X.shape
    S = np.sort(X, axis=0)
    csum = np.cumsum(S, axis=0)
    csq = np.cumsum(S * S, axis=0)
    total, total_sq = csum[-1], csq[-1]
    k = np.arange(1, n)[:, None]
    left_sum, left_sq = csum[:-1], csq[:-1]
    right_sum, right_sq = total - left_sum, total_sq - left_sq
    sse = (left_sq - left_sum ** 2 / k) + (right_sq - right_sum ** 2 / (n - k))
    best = np.argmin(sse, axis=0)
    cols = np.arange(d)
    kb = best + 1
    left_mean = left_sum[best, cols] / kb
    right_mean = right_sum[best, cols] / (n - kb)
    boundary = 0.5 * (S[best, cols] + S[best + 1, cols])
    return right_mean - left_mean, boundary


def majority_linkage_cluster(D: np.ndarray, min_size: int) -> np.ndarray | None:
    """Largest dense single-linkage group holding at least ``min_size`` points.

    The dendrogram is cut inside its widest gap between consecutive merge
    heights. If the largest resulting cluster is too small, the first cluster
    to reach ``min_size`` during merging is returned instead.
    """
    n = D.shape[0]
    if n < min_size:
        return None
    if n == 1:
        return np.array([0])
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    Z = linkage(squareform(np.clip(D, 0.0, None), checks=False), method="single")
    h = Z[:, 2]
    if h.size > 1 and np.diff(h).max() > 0:
        k = int(np.argmax(np.diff(h)))
        labels = fcluster(Z, 0.5 * (h[k] + h[k + 1]), criterion="distance")
        counts = np.bincount(labels)
        best = int(np.argmax(counts))
        if counts[best] >= max(min_size, 1):
            return np.flatnonzero(labels == best)
    if min_size <= 1:
        return np.array([0])
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    for step, (a, b, _, size) in enumerate(Z):
        merged = members.pop(int(a)) + members.pop(int(b))
        members[n + step] = merged
        if size >= min_size:
            return np.array(sorted(merged))
    return None
