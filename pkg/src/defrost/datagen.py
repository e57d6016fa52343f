"""Synthetic datasets: a reference task and its moment-matched clones.

The clone family approximates a reference distribution with increasing
fidelity: an isotropic Gaussian per class (:class:`IsoGMClone`), a
full-covariance Gaussian per class (:class:`GMClone`) and reconstructions from
a trained autoencoder (:class:`AutoencoderClone`). All clones keep the
reference labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import network as nn
from ._validation import check_features, check_labelled, check_positive_int


@dataclass
class LabeledDataset:
    """``N x D`` features with integer labels in ``[0, num_classes)``."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.num_classes = int(self.num_classes)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("features and labels disagree on the number of samples")
        if self.num_classes < 2:
            raise ValueError("a labelled dataset needs at least 2 classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")

    @classmethod
    def from_arrays(cls, X, y, num_classes=None):
        X, y = check_labelled(X, y)
        if num_classes is None:
            num_classes = max(int(y.max()) + 1, 2)
        return cls(X, y, num_classes)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def take(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)

    def __len__(self):
        return self.n_samples


# ---------------------------------------------------------------------------
# standardisation


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray = field(default=None)

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


def _column_stats(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # a column is constant when its spread is at rounding level
    scale = np.maximum(np.abs(mean), 1.0)
    constant = std <= 1e-12 * scale
    std = np.where(constant, 1.0, std)
    return StandardizationStats(mean, std, constant)


def standardize(dataset: LabeledDataset):
    """Zero mean, unit (population) standard deviation per feature.

    Constant columns are centred but not rescaled; they are flagged in
    ``stats.constant``. Returns the new dataset and the statistics so that
    held-out data can be mapped with the training-set values.
    """
    if dataset.n_samples < 2:
        raise ValueError("standardization needs at least 2 samples")
    stats = _column_stats(dataset.features)
    return LabeledDataset(stats.apply(dataset.features), dataset.labels.copy(), dataset.num_classes), stats


class Standardizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`standardize`."""

    def fit(self, X, y=None):
        X = check_features(X, min_samples=2)
        stats = _column_stats(X)
        self.mean_, self.scale_, self.constant_ = stats.mean, stats.std, stats.constant
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_features(X)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        return check_features(X) * self.scale_ + self.mean_


# ---------------------------------------------------------------------------
# Gaussian clones


def _class_blocks(X, y, n_classes):
    blocks = []
    for c in range(n_classes):
        Xc = X[y == c]
        if Xc.shape[0] == 0:
            raise ValueError(f"class {c} has no samples")
        blocks.append(Xc)
    return blocks


def cholesky(sigma, jitter: float = 0.0) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == sigma + jitter * I``.

    Raises ``np.linalg.LinAlgError`` naming the smallest eigenvalue when the
    jittered matrix is not positive definite.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=1e-10, atol=1e-12):
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (sigma + sigma.T) + jitter * np.eye(sigma.shape[0])
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(A)[0])
        raise np.linalg.LinAlgError(
            f"matrix is not positive definite after jitter {jitter:g}; smallest eigenvalue {smallest:.3e}"
        ) from None


def covariance_jitter(sigma) -> float:
    """``1e-6 * trace / D``, with an absolute floor for an all-zero covariance."""
    eps = 1e-6 * float(np.trace(sigma)) / sigma.shape[0]
    return eps if eps > 0 else 1e-6


class _GaussianCloneMixin:
    def sample(self, n_per_class: int, random_state=None) -> LabeledDataset:
        """Draw exactly ``n_per_class`` points per class, ``mean + L z``."""
        check_is_fitted(self, "means_")
        n_per_class = check_positive_int(n_per_class, "n_per_class")
        rng = np.random.default_rng(random_state)
        n_classes, dim = self.means_.shape
        X = np.empty((n_classes * n_per_class, dim))
        for c in range(n_classes):
            z = rng.standard_normal((n_per_class, dim))
            X[c * n_per_class:(c + 1) * n_per_class] = self.means_[c] + self._colour(c, z)
        y = np.repeat(np.arange(n_classes), n_per_class)
        return LabeledDataset(X, y, n_classes)

    def _n_classes_for(self, y):
        return self.n_classes if self.n_classes is not None else int(y.max()) + 1


class IsoGMClone(_GaussianCloneMixin, BaseEstimator):
    """One isotropic Gaussian per class.

    ``variances_[c]`` is the average over features of the maximum-likelihood
    per-feature variance of class ``c``.
    """

    def __init__(self, n_classes=None):
        self.n_classes = n_classes

    def fit(self, X, y):
        X, y = check_labelled(X, y)
        blocks = _class_blocks(X, y, self._n_classes_for(y))
        self.means_ = np.stack([b.mean(axis=0) for b in blocks])
        self.variances_ = np.array([b.var(axis=0).mean() for b in blocks])
        self.n_features_in_ = X.shape[1]
        return self

    def _colour(self, c, z):
        return np.sqrt(self.variances_[c]) * z


class GMClone(_GaussianCloneMixin, BaseEstimator):
    """One full-covariance Gaussian per class, with cached Cholesky factors."""

    def __init__(self, n_classes=None):
        self.n_classes = n_classes

    def fit(self, X, y):
        X, y = check_labelled(X, y)
        blocks = _class_blocks(X, y, self._n_classes_for(y))
        means, covs, chols, jitters = [], [], [], []
        for b in blocks:
            mu = b.mean(axis=0)
            centred = b - mu
            cov = centred.T @ centred / b.shape[0]
            cov = 0.5 * (cov + cov.T)
            eps = covariance_jitter(cov)
            means.append(mu)
            covs.append(cov)
            chols.append(cholesky(cov, eps))
            jitters.append(eps)
        self.means_ = np.stack(means)
        self.covariances_ = np.stack(covs)
        self.cholesky_ = np.stack(chols)
        self.jitters_ = np.array(jitters)
        self.n_features_in_ = X.shape[1]
        return self

    def _colour(self, c, z):
        return z @ self.cholesky_[c].T


# functional aliases; the fitted estimators are the models
IsoGMModel = IsoGMClone
GMModel = GMClone


def fit_isogm(dataset: LabeledDataset) -> IsoGMClone:
    return IsoGMClone(n_classes=dataset.num_classes).fit(dataset.features, dataset.labels)


def fit_gm(dataset: LabeledDataset) -> GMClone:
    return GMClone(n_classes=dataset.num_classes).fit(dataset.features, dataset.labels)


def sample_mixture(model, n_per_class: int, rng_seed) -> LabeledDataset:
    return model.sample(n_per_class, random_state=rng_seed)


# ---------------------------------------------------------------------------
# reference task


@dataclass(frozen=True)
class ReferenceConfig:
    """Stand-in ground-truth distribution.

    Per class ``c`` the latent ``z ~ N(0, I_K)`` is mapped to
    ``x = B_c z + alpha * q_c(z)``, where ``q_c(z)_i = z[a_i] * z[b_i]`` over a
    fixed class-specific pairing. ``alpha`` sets how much class information
    lives beyond the second moment. ``seed`` fixes ``B_c`` and the pairings.
    """

    n_features: int = 32
    n_classes: int = 4
    latent_dim: int = 16
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.n_features, "n_features")
        check_positive_int(self.n_classes, "n_classes", minimum=2)
        check_positive_int(self.latent_dim, "latent_dim", minimum=2)
        if self.latent_dim > self.n_features:
            raise ValueError("latent_dim cannot exceed n_features")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError("alpha must be finite and >= 0")

    def structure(self):
        """Class-specific mixing matrices ``(C, D, K)`` and pairings ``(C, D, 2)``."""
        rng = np.random.default_rng(self.seed)
        D, K, C = self.n_features, self.latent_dim, self.n_classes
        mixing = rng.standard_normal((C, D, K)) / np.sqrt(K)
        pairs_all = np.array([(a, b) for a in range(K) for b in range(a + 1, K)])
        pairings = np.empty((C, D, 2), dtype=np.int64)
        for c in range(C):
            pick = rng.choice(len(pairs_all), size=D, replace=D > len(pairs_all))
            pairings[c] = pairs_all[pick]
        return mixing, pairings


def make_reference(cfg: ReferenceConfig, n_per_class: int, rng_seed) -> LabeledDataset:
    """Sample ``n_per_class`` points per class from the reference distribution."""
    n_per_class = check_positive_int(n_per_class, "n_per_class")
    mixing, pairings = cfg.structure()
    rng = np.random.default_rng(rng_seed)
    C, D = cfg.n_classes, cfg.n_features
    X = np.empty((C * n_per_class, D))
    for c in range(C):
        z = rng.standard_normal((n_per_class, cfg.latent_dim))
        x = z @ mixing[c].T
        if cfg.alpha:
            x = x + cfg.alpha * z[:, pairings[c, :, 0]] * z[:, pairings[c, :, 1]]
        X[c * n_per_class:(c + 1) * n_per_class] = x
    y = np.repeat(np.arange(C), n_per_class)
    return LabeledDataset(X, y, C)


# ---------------------------------------------------------------------------
# autoencoder clones


class AutoencoderClone(TransformerMixin, BaseEstimator):
    """Dense mirror-symmetric autoencoder ``D -> hidden -> B -> hidden -> D``.

    The bottleneck is linear; hidden layers use ``activation``. Training uses
    Adam on the mean squared reconstruction error with a linear warm-up to
    ``lr`` followed by cosine annealing to ``lr_floor``.
    """

    def __init__(self, bottleneck=8, hidden=(64,), activation="gelu", epochs=60, batch_size=256,
                 lr=1e-3, lr_floor=1e-5, warmup_epochs=12, random_state=0):
        self.bottleneck = bottleneck
        self.hidden = hidden
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_floor = lr_floor
        self.warmup_epochs = warmup_epochs
        self.random_state = random_state

    def _build_spec(self, dim):
        hidden = list(self.hidden)
        widths = [dim] + hidden + [self.bottleneck] + hidden[::-1] + [dim]
        acts = [self.activation] * len(hidden) + ["identity"] + [self.activation] * len(hidden) + ["identity"]
        layers = tuple(nn.Layer(a, b, act) for a, b, act in zip(widths[:-1], widths[1:], acts))
        return nn.NetworkSpec(layers), len(hidden) + 1

    def train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, momentum=0.0, weight_decay=0.0,
            schedule="warmup_anneal", loss="mse", optimizer="adam", warmup_epochs=self.warmup_epochs,
            lr_floor=self.lr_floor, seed=_child_seed(self.random_state, 1),
        )

    def initialize(self, dim):
        check_positive_int(self.bottleneck, "bottleneck")
        self.spec_, self.n_encoder_layers_ = self._build_spec(dim)
        self.params_ = nn.he_init(self.spec_, _child_seed(self.random_state, 0))
        self.n_features_in_ = dim
        return self

    def fit(self, X, y=None):
        X = check_features(X)
        self.initialize(X.shape[1])
        self.params_, self.history_ = nn.train(self.spec_, self.params_, X, X, self.train_config())
        self.reconstruction_error_ = self.score_error(X)
        return self

    def encode(self, X):
        check_is_fitted(self, "params_")
        return nn.forward(self.spec_, self.params_, check_features(X))[self.n_encoder_layers_]

    def transform(self, X):
        """Reconstruction ``decoder(encoder(X))``."""
        check_is_fitted(self, "params_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"autoencoder expects {self.n_features_in_} features, got {X.shape[1]}")
        return nn.forward(self.spec_, self.params_, X)[-1]

    def score_error(self, X) -> float:
        X = check_features(X)
        return nn.mean_squared_error(self.transform(X), X)


AutoencoderModel = AutoencoderClone


def _child_seed(seed, index):
    return np.random.SeedSequence([int(seed), int(index)])


def train_autoencoder(dataset: LabeledDataset, bottleneck: int, rng_seed=0, **config) -> AutoencoderClone:
    """Fit an :class:`AutoencoderClone`; ``config`` overrides its hyper-parameters."""
    return AutoencoderClone(bottleneck=bottleneck, random_state=rng_seed, **config).fit(dataset.features)


def clone_via_autoencoder(ae: AutoencoderClone, dataset: LabeledDataset, restandardize: bool = True) -> LabeledDataset:
    """Replace every row by its reconstruction; labels are copied verbatim."""
    recon = ae.transform(dataset.features)
    clone = LabeledDataset(recon, dataset.labels.copy(), dataset.num_classes)
    if restandardize:
        clone, _ = standardize(clone)
    return clone


# ---------------------------------------------------------------------------
# subsampling


def subsample_balanced(dataset: LabeledDataset, n_per_class: int, rng_seed) -> LabeledDataset:
    """Exactly ``n_per_class`` rows per class, without replacement."""
    n_per_class = check_positive_int(n_per_class, "n_per_class")
    rng = np.random.default_rng(rng_seed)
    picked = []
    for c in range(dataset.num_classes):
        rows = np.flatnonzero(dataset.labels == c)
        if rows.size < n_per_class:
            raise ValueError(f"class {c} has {rows.size} samples, fewer than the {n_per_class} requested")
        picked.append(rng.choice(rows, size=n_per_class, replace=False))
    return dataset.take(np.concatenate(picked))
