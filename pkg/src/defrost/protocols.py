"""Layer-wise defrosting and compliant learning.

A cut ``k`` keeps the first ``k`` layers of a source network frozen, draws
fresh weights for the remaining layers and trains them on the target task.
The readout is always retrained, so ``k`` ranges over ``0 .. L-1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from . import network as nn
from ._validation import check_features, check_labelled
from .datagen import LabeledDataset

log = logging.getLogger(__name__)


@dataclass
class TransferTask:
    source_spec: nn.NetworkSpec
    source_params: nn.ParamSet
    train: LabeledDataset
    test: LabeledDataset

    def __post_init__(self):
        self.source_params.check(self.source_spec)
        for name, ds in (("train", self.train), ("test", self.test)):
            if ds.n_features != self.source_spec.n_input:
                raise ValueError(
                    f"target {name} set has {ds.n_features} features; source network expects "
                    f"{self.source_spec.n_input}"
                )
        if self.train.num_classes != self.test.num_classes:
            raise ValueError("target train and test sets disagree on the number of classes")
        if self.source_spec.n_output != self.train.num_classes:
            raise ValueError(
                f"readout width {self.source_spec.n_output} does not match "
                f"{self.train.num_classes} target classes"
            )

    @property
    def n_layers(self) -> int:
        return self.source_spec.n_layers

    @property
    def cuts(self) -> list[int]:
        return list(range(self.n_layers))


def _cell_seeds(seed):
    """Independent streams for re-initialisation and batch shuffling."""
    init_ss, shuffle_ss = np.random.SeedSequence(int(seed)).spawn(2)
    shuffle_seed = int(shuffle_ss.generate_state(1)[0])
    return init_ss, shuffle_seed


def defrosted_init(task: TransferTask, cut: int, seed) -> nn.ParamSet:
    """Source weights for layers ``< cut``, fresh He draws for the rest."""
    init_ss, _ = _cell_seeds(seed)
    fresh = nn.he_init(task.source_spec, init_ss)
    for i in range(cut):
        fresh.weights[i] = task.source_params.weights[i].copy()
        fresh.biases[i] = task.source_params.biases[i].copy()
    return fresh


def freeze_mask(n_layers: int, cut: int) -> list[bool]:
    return [i < cut for i in range(n_layers)]


def _check_cut(task, cut):
    if not 0 <= cut <= task.n_layers - 1:
        raise ValueError(f"cut {cut} outside [0, {task.n_layers - 1}]")


def defrost_train(task: TransferTask, cut: int, config: nn.TrainConfig, seed, cache_prefix=True):
    """Train the defrosted network for one cut and return its parameters."""
    _check_cut(task, cut)
    init = defrosted_init(task, cut, seed)
    _, shuffle_seed = _cell_seeds(seed)
    params, _ = nn.train(
        task.source_spec, init, task.train.features, task.train.labels, config.with_seed(shuffle_seed),
        mask=freeze_mask(task.n_layers, cut), cache_prefix=cache_prefix,
    )
    return params


def defrost_at(task: TransferTask, cut: int, config: nn.TrainConfig, seed, cache_prefix=True) -> float:
    """Test accuracy on the target after defrosting at ``cut``."""
    params = defrost_train(task, cut, config, seed, cache_prefix=cache_prefix)
    return nn.evaluate(task.source_spec, params, task.test.features, task.test.labels)


@dataclass
class ProfileEntry:
    cut: int
    mean_acc: float
    std_acc: float
    n_seeds: int
    accuracies: list[float] = field(default_factory=list)


@dataclass
class DefrostingProfile:
    entries: list[ProfileEntry]
    architecture: str = ""
    n_per_class: int | None = None

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: e.cut)
        cuts = [e.cut for e in self.entries]
        if len(set(cuts)) != len(cuts):
            raise ValueError("profile cuts must be distinct")

    @classmethod
    def from_means(cls, pairs, **kw) -> "DefrostingProfile":
        """Profile from ``(cut, mean accuracy)`` pairs, one seed each."""
        return cls([ProfileEntry(int(k), float(a), 0.0, 1, [float(a)]) for k, a in pairs], **kw)

    @property
    def cuts(self) -> list[int]:
        return [e.cut for e in self.entries]

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean_acc for e in self.entries])

    @property
    def stds(self) -> np.ndarray:
        return np.array([e.std_acc for e in self.entries])

    def entry(self, cut: int) -> ProfileEntry:
        for e in self.entries:
            if e.cut == cut:
                return e
        raise KeyError(cut)

    def per_seed(self, index: int) -> "DefrostingProfile":
        """Single-seed profile from the ``index``-th run of every cut."""
        return DefrostingProfile.from_means(
            [(e.cut, e.accuracies[index]) for e in self.entries],
            architecture=self.architecture, n_per_class=self.n_per_class,
        )

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "n_per_class": self.n_per_class,
            "optimal_depth": optimal_depth(self),
            "entries": [
                {"cut": e.cut, "mean_acc": e.mean_acc, "std_acc": e.std_acc, "n_seeds": e.n_seeds,
                 "accuracies": list(e.accuracies)}
                for e in self.entries
            ],
        }


def build_profile(task: TransferTask, cuts: Sequence[int], seeds: Sequence[int], config: nn.TrainConfig,
                  n_jobs: int = 1, cache_prefix=True) -> DefrostingProfile:
    """Mean and (population) standard deviation of :func:`defrost_at` over seeds, per cut.

    Every ``(cut, seed)`` cell is independent, so ``n_jobs > 1`` fans them out
    without changing any number.
    """
    cuts, seeds = list(cuts), list(seeds)
    if not cuts or not seeds:
        raise ValueError("cuts and seeds must be non-empty")
    for k in cuts:
        _check_cut(task, k)
    cells = [(k, s) for k in cuts for s in seeds]
    if n_jobs == 1:
        accs = [defrost_at(task, k, config, s, cache_prefix) for k, s in cells]
    else:
        accs = Parallel(n_jobs=n_jobs)(delayed(defrost_at)(task, k, config, s, cache_prefix) for k, s in cells)
    by_cut: dict[int, list[float]] = {k: [] for k in cuts}
    for (k, _), a in zip(cells, accs):
        by_cut[k].append(a)
    entries = [ProfileEntry(k, float(np.mean(v)), float(np.std(v)), len(v), v) for k, v in by_cut.items()]
    widths = "-".join(str(w) for w in task.source_spec.widths)
    counts = task.train.class_counts()
    n_per_class = int(counts[0]) if np.all(counts == counts[0]) else None
    return DefrostingProfile(entries, architecture=widths, n_per_class=n_per_class)


def optimal_depth(profile: DefrostingProfile) -> int:
    """Cut with the highest mean accuracy; ties go to the deeper cut."""
    if not profile.entries:
        raise ValueError("empty profile")
    best = max(profile.entries, key=lambda e: (e.mean_acc, e.cut))
    return best.cut


# ---------------------------------------------------------------------------
# budget-limited probing


def probe_anchors(spec: nn.NetworkSpec) -> list[int]:
    """Next-to-last cut, the cut right after the first narrowing layer, and their midpoint."""
    last = spec.n_layers - 1
    narrowing = next((i + 1 for i, l in enumerate(spec.layers[:-1]) if l.n_out < l.n_in), 0)
    narrowing = min(narrowing, last)
    mid = (last + narrowing) // 2
    anchors = []
    for k in (last, narrowing, mid):
        if k not in anchors:
            anchors.append(k)
    return anchors


def _better(a, b, scores):
    """Is cut ``a`` preferred over cut ``b``? Higher score, ties to the deeper cut."""
    return (scores[a], a) > (scores[b], b)


def _best(scores):
    best = None
    for k in scores:
        if best is None or _better(k, best, scores):
            best = k
    return best


def probe_search(cuts: Sequence[int], anchors: Sequence[int], budget: int, score: Callable[[int], float]):
    """Locate the best cut while evaluating at most ``budget`` of them.

    The anchors are scored first. Remaining evaluations go to a discrete
    ternary refinement: the unexplored gap next to the current best cut is
    split at its midpoint, larger gap first.

    Returns the best evaluated cut and the ``{cut: score}`` evaluations.
    """
    cuts = sorted(int(k) for k in cuts)
    if budget < 2:
        raise ValueError(f"probe budget must be >= 2, got {budget}")
    scores: dict[int, float] = {}

    def probe(k):
        if k not in scores and len(scores) < budget:
            scores[k] = float(score(k))

    if budget >= len(cuts):
        for k in cuts:
            probe(k)
        return _best(scores), scores

    for k in anchors:
        if k in cuts:
            probe(k)
    while len(scores) < budget:
        best = _best(scores)
        lo = max((k for k in scores if k < best), default=None)
        hi = min((k for k in scores if k > best), default=None)
        left = [k for k in cuts if k < best and (lo is None or k > lo)]
        right = [k for k in cuts if k > best and (hi is None or k < hi)]
        gaps = sorted((g for g in (left, right) if g), key=len, reverse=True)
        if gaps:
            gap = gaps[0]
            probe(gap[len(gap) // 2])
            continue
        # bracket fully explored: take the nearest unexplored cut
        rest = [k for k in cuts if k not in scores]
        if not rest:
            break
        probe(min(rest, key=lambda k: (abs(k - best), -k)))
    return _best(scores), scores


def efficient_probe(task: TransferTask, budget: int, config: nn.TrainConfig, seeds: Sequence[int],
                    score: Callable[[int], float] | None = None):
    """Estimate the optimal cut from at most ``budget`` profile points.

    ``score`` replaces the default evaluation (mean of :func:`defrost_at` over
    ``seeds``), e.g. to replay a profile that was already computed.
    Returns the estimated cut and the partial :class:`DefrostingProfile`.
    """
    if budget < 2:
        raise ValueError(f"probe budget must be >= 2, got {budget}")
    seeds = list(seeds)
    runs: dict[int, list[float]] = {}

    def default_score(k):
        runs[k] = [defrost_at(task, k, config, s) for s in seeds]
        return float(np.mean(runs[k]))

    best, scores = probe_search(task.cuts, probe_anchors(task.source_spec), budget, score or default_score)
    entries = []
    for k, m in scores.items():
        accs = runs.get(k, [m])
        entries.append(ProfileEntry(k, m, float(np.std(accs)), len(accs), accs))
    return best, DefrostingProfile(entries)


# ---------------------------------------------------------------------------
# compliant learning


@dataclass
class CompliantPoint:
    strength: float
    mean_acc: float
    std_acc: float
    cos_dist: float
    accuracies: list[float] = field(default_factory=list)
    distances: list[float] = field(default_factory=list)


@dataclass
class CompliantSweepResult:
    points: list[CompliantPoint]
    coupled_layers: tuple[int, ...] = ()

    @property
    def strengths(self):
        return [p.strength for p in self.points]

    def to_dict(self):
        return {
            "coupled_layers": list(self.coupled_layers),
            "points": [
                {"lambda": p.strength, "mean_acc": p.mean_acc, "std_acc": p.std_acc, "cos_dist": p.cos_dist,
                 "accuracies": p.accuracies, "distances": p.distances}
                for p in self.points
            ],
        }


def compliant_train(task: TransferTask, strength: float, layers: Sequence[int], config: nn.TrainConfig, seed):
    """Train a fresh network under an elastic pull toward the source weights."""
    init_ss, shuffle_seed = _cell_seeds(seed)
    init = nn.he_init(task.source_spec, init_ss)
    coupling = nn.ElasticCoupling(strength, tuple(layers), task.source_params) if strength > 0 else None
    params, _ = nn.train(task.source_spec, init, task.train.features, task.train.labels,
                         config.with_seed(shuffle_seed), coupling=coupling)
    return params


def _compliant_cell(task, strength, layers, config, seed):
    params = compliant_train(task, strength, layers, config, seed)
    acc = nn.evaluate(task.source_spec, params, task.test.features, task.test.labels)
    return acc, nn.cosine_distance(params, task.source_params, layers[0])


def compliant_sweep(task: TransferTask, strengths: Sequence[float], layers: Sequence[int], config: nn.TrainConfig,
                    seeds: Sequence[int], n_jobs: int = 1) -> CompliantSweepResult:
    """Accuracy and first-coupled-layer cosine distance for each coupling strength."""
    strengths = [float(s) for s in strengths]
    layers = [int(i) for i in layers]
    seeds = list(seeds)
    if not layers:
        raise ValueError("at least one coupled layer is required")
    if any(s < 0 for s in strengths):
        raise ValueError("coupling strengths must be non-negative")
    if any(b <= a for a, b in zip(strengths, strengths[1:])):
        raise ValueError("coupling strengths must be strictly increasing")
    cells = [(s, seed) for s in strengths for seed in seeds]
    if n_jobs == 1:
        out = [_compliant_cell(task, s, layers, config, seed) for s, seed in cells]
    else:
        out = Parallel(n_jobs=n_jobs)(delayed(_compliant_cell)(task, s, layers, config, seed) for s, seed in cells)
    points = []
    for i, s in enumerate(strengths):
        block = out[i * len(seeds):(i + 1) * len(seeds)]
        accs = [a for a, _ in block]
        dists = [d for _, d in block]
        points.append(CompliantPoint(s, float(np.mean(accs)), float(np.std(accs)), float(np.mean(dists)), accs, dists))
    return CompliantSweepResult(points, tuple(layers))


# ---------------------------------------------------------------------------
# estimator front-end


class LayerwiseDefroster(ClassifierMixin, BaseEstimator):
    """Classifier that reuses the first ``cut`` layers of a trained source network.

    ``fit`` re-initialises layers ``cut..L-1`` and trains them on ``(X, y)``
    with the leading layers frozen. Because ``cut`` is an ordinary parameter,
    a grid search over it with cross-validation yields a defrosting profile.
    """

    def __init__(self, source_spec=None, source_params=None, cut=0, config=None, random_state=0):
        self.source_spec = source_spec
        self.source_params = source_params
        self.cut = cut
        self.config = config
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_labelled(X, y)
        self.classes_ = unique_labels(y)
        spec = self.source_spec
        if spec is None or self.source_params is None:
            raise ValueError("source_spec and source_params are required")
        n_classes = spec.n_output
        if y.max() >= n_classes:
            raise ValueError(f"labels exceed the readout width {n_classes}")
        dummy = LabeledDataset(X[:1], y[:1], n_classes)
        task = TransferTask(spec, self.source_params, LabeledDataset(X, y, n_classes), dummy)
        config = self.config if self.config is not None else nn.TrainConfig()
        self.params_ = defrost_train(task, int(self.cut), config, self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        return nn.predict_logits(self.source_spec, self.params_, check_features(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def transform(self, X, layer=None):
        """Activations at ``layer`` (defaults to ``cut``, the frozen representation)."""
        check_is_fitted(self, "params_")
        layer = self.cut if layer is None else layer
        return nn.extract_representation(self.source_spec, self.params_, check_features(X), layer)
