"""Similarity measures between aligned representations.

All functions take two activation matrices whose rows describe the same probe
points in the same order. Neighbour ranks break distance ties by point index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.stats import rankdata

from . import network as nn
from ._validation import check_features, check_same_rows


@dataclass
class Representation:
    """Activations on a probe set, one row per probe point."""

    matrix: np.ndarray
    layer: int = 0
    network: str = ""

    def __post_init__(self):
        self.matrix = check_features(self.matrix, min_samples=3, name="representation")


def _as_matrix(rep):
    if isinstance(rep, Representation):
        return rep.matrix
    return check_features(rep, min_samples=1, name="representation")


def pairwise_sq_dist(rep) -> np.ndarray:
    """Exact squared Euclidean distances (symmetric, zero diagonal)."""
    X = _as_matrix(rep)
    if X.shape[0] < 2:
        return np.zeros((X.shape[0], X.shape[0]))
    return squareform(pdist(X, "sqeuclidean"))


def _pair(A, B, min_n=3):
    A, B = _as_matrix(A), _as_matrix(B)
    check_same_rows(A, B)
    if A.shape[0] < min_n:
        raise ValueError(f"need at least {min_n} points, got {A.shape[0]}")
    return A, B


def _neighbour_order(dist):
    """Row-wise neighbour ordering with self removed; ties go to the lower index."""
    n = dist.shape[0]
    d = dist.copy()
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, : n - 1]


def information_imbalance(A, B) -> float:
    """Directional information imbalance ``II(A -> B)``.

    For each point ``i`` take its nearest neighbour ``j`` in ``A`` and count the
    points strictly closer to ``i`` than ``j`` in ``B`` (excluding ``i`` and
    ``j``). The result is ``2 / N^2`` times the total count: 0 when ``A``
    predicts the neighbourhoods of ``B`` perfectly, about 1 when it carries no
    information about them.
    """
    A, B = _pair(A, B)
    n = A.shape[0]
    dA = pairwise_sq_dist(A)
    dB = pairwise_sq_dist(B)
    np.fill_diagonal(dA, np.inf)
    nn_idx = np.argmin(dA, axis=1)
    ref = dB[np.arange(n), nn_idx]
    counts = np.sum(dB < ref[:, None], axis=1)
    # point i itself sits at distance 0 and is counted whenever ref > 0
    counts = counts - (ref > 0)
    return 2.0 * float(np.sum(counts)) / n**2


def _knn(dist, k):
    return _neighbour_order(dist)[:, :k]


def neighborhood_overlap(A, B, k: int = 30) -> float:
    """Mean fraction of shared ``k`` nearest neighbours."""
    A, B = _pair(A, B, min_n=2)
    n = A.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    nA = _knn(pairwise_sq_dist(A), k)
    nB = _knn(pairwise_sq_dist(B), k)
    # boolean membership, row by row
    member = np.zeros((n, n), dtype=bool)
    member[np.arange(n)[:, None], nA] = True
    shared = member[np.arange(n)[:, None], nB].sum(axis=1)
    # one division of exact integer counts keeps the result order-independent
    return float(shared.sum() / (n * k))


def _row_pearson(x, y):
    x = x - x.mean(axis=1, keepdims=True)
    y = y - y.mean(axis=1, keepdims=True)
    num = np.sum(x * y, axis=1)
    den = np.sqrt(np.sum(x * x, axis=1) * np.sum(y * y, axis=1))
    out = np.zeros_like(num)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def spearman_neighborhoods(A, B, k: int = 100) -> float:
    """Mean Spearman correlation of neighbour distances within ``A``'s neighbourhoods.

    For each point, its ``k`` nearest neighbours in ``A`` are ranked by their
    distance from the point in ``A`` and in ``B`` (mid-ranks for ties); the
    Spearman coefficient of the two rankings is averaged over points. A row
    with constant ranks in either space contributes 0.
    """
    A, B = _pair(A, B, min_n=4)
    n = A.shape[0]
    if not 3 <= k <= n - 1:
        raise ValueError(f"k must lie in [3, {n - 1}], got {k}")
    dA = pairwise_sq_dist(A)
    dB = pairwise_sq_dist(B)
    nbrs = _knn(dA, k)
    rows = np.arange(n)[:, None]
    rA = rankdata(dA[rows, nbrs], axis=1)
    rB = rankdata(dB[rows, nbrs], axis=1)
    return float(np.mean(_row_pearson(rA, rB)))


def linear_cka(A, B) -> float:
    """Linear centred kernel alignment on column-centred features."""
    A, B = _pair(A, B, min_n=2)
    A = A - A.mean(axis=0)
    B = B - B.mean(axis=0)
    norm_a = np.linalg.norm(A.T @ A)
    norm_b = np.linalg.norm(B.T @ B)
    if norm_a == 0 or norm_b == 0:
        raise ValueError("linear CKA is undefined for a zero-variance representation")
    value = np.linalg.norm(B.T @ A) ** 2 / (norm_a * norm_b)
    return float(min(1.0, max(0.0, value)))


METRICS = {
    "ii": information_imbalance,
    "information_imbalance": information_imbalance,
    "cka": linear_cka,
    "overlap": neighborhood_overlap,
    "neighborhood_overlap": neighborhood_overlap,
    "spearman": spearman_neighborhoods,
}


def get_metric(name):
    try:
        return METRICS[name]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; expected one of {sorted(METRICS)}") from None


@dataclass
class SimilarityCurve:
    layers: list[int] = field(default_factory=list)
    metric: str = ""
    values: list[float] = field(default_factory=list)

    def rows(self):
        return [(layer, self.metric, v) for layer, v in zip(self.layers, self.values)]

    def first_exceeding(self, threshold: float):
        """First layer whose value is above ``threshold``, or ``None``."""
        for layer, v in zip(self.layers, self.values):
            if v > threshold:
                return layer
        return None


def layerwise_curve(spec_a, params_a, spec_b, params_b, X, metric="ii", **metric_params) -> SimilarityCurve:
    """Apply ``metric`` to both networks' representations at every layer ``1..L``."""
    if spec_a.n_layers != spec_b.n_layers:
        raise ValueError(f"layer counts differ: {spec_a.n_layers} vs {spec_b.n_layers}")
    fn = get_metric(metric)
    acts_a = nn.forward(spec_a, params_a, X)
    acts_b = nn.forward(spec_b, params_b, X)
    curve = SimilarityCurve(metric=metric)
    for layer in range(1, spec_a.n_layers + 1):
        curve.layers.append(layer)
        curve.values.append(fn(acts_a[layer], acts_b[layer], **metric_params))
    return curve
