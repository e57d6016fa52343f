"""Dense feed-forward networks trained from scratch in float64.

Everything here is plain numpy. A network is described by a
:class:`NetworkSpec` (an ordered list of dense layers) and its weights live in
a :class:`ParamSet`. Training supports per-layer freeze masks and an elastic
penalty pulling selected layers toward reference weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "gelu", "tanh", "identity")

# tanh approximation of GeLU
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")


@dataclass(frozen=True)
class Layer:
    n_in: int
    n_out: int
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if self.n_in < 1 or self.n_out < 1:
            raise ValueError(f"layer widths must be positive, got {self.n_in}->{self.n_out}")


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered dense layers; the last one is the identity readout."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if len(layers) < 2:
            raise ValueError("a network needs at least 2 parameterized layers")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ValueError(f"layer widths do not chain: {prev.n_out} -> {nxt.n_in}")
        if layers[-1].activation != "identity":
            raise ValueError("the readout (last layer) must use the identity activation")

    @classmethod
    def from_widths(cls, widths: Sequence[int], activation: str = "relu") -> "NetworkSpec":
        """Build a spec from ``[n_input, hidden..., n_output]``."""
        widths = [int(w) for w in widths]
        if len(widths) < 3:
            raise ValueError("widths must list the input, at least one hidden and the output width")
        layers = [Layer(a, b, activation) for a, b in zip(widths[:-2], widths[1:-1])]
        layers.append(Layer(widths[-2], widths[-1], "identity"))
        return cls(tuple(layers))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_input(self) -> int:
        return self.layers[0].n_in

    @property
    def n_output(self) -> int:
        return self.layers[-1].n_out

    @property
    def widths(self) -> list[int]:
        """Widths at every tap: index 0 is the input, index L the readout."""
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def to_dict(self) -> dict:
        return {"layers": [[l.n_in, l.n_out, l.activation] for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        if "widths" in d:
            return cls.from_widths(d["widths"], d.get("activation", "relu"))
        return cls(tuple(Layer(int(a), int(b), str(act)) for a, b, act in d["layers"]))


@dataclass
class ParamSet:
    """Weights ``(n_in, n_out)`` and biases ``(n_out,)`` for every layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.weights)

    def copy(self) -> "ParamSet":
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check(self, spec: NetworkSpec) -> None:
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise ValueError(f"expected {spec.n_layers} layers of parameters, got {len(self.weights)}")
        for i, (layer, w, b) in enumerate(zip(spec.layers, self.weights, self.biases)):
            if w.shape != (layer.n_in, layer.n_out) or b.shape != (layer.n_out,):
                raise ValueError(
                    f"layer {i}: parameter shapes {w.shape}/{b.shape} do not match "
                    f"{layer.n_in}->{layer.n_out}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")

    def equals(self, other: "ParamSet", layers: Sequence[int] | None = None) -> bool:
        """Bit-level equality, optionally restricted to some layer indices."""
        idx = range(len(self)) if layers is None else layers
        return all(
            np.array_equal(self.weights[i], other.weights[i]) and np.array_equal(self.biases[i], other.biases[i])
            for i in idx
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation hyper-parameters.

    Defaults follow the classic wide-network recipe: SGD with momentum 0.9,
    batch 128, weight decay 5e-4 and a cosine schedule starting at 0.1.
    """

    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "cosine"
    loss: str = "cross_entropy"
    optimizer: str = "sgd"
    warmup_epochs: int = 0
    lr_floor: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.schedule not in ("cosine", "warmup_anneal", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.loss not in ("cross_entropy", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule == "warmup_anneal" and self.warmup_epochs > self.epochs:
            raise ValueError("warmup_epochs cannot exceed epochs")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=int(seed))


@dataclass
class ElasticCoupling:
    """Penalty ``strength * ||theta - theta_ref||^2`` on the listed layers."""

    strength: float
    layers: tuple[int, ...]
    reference: ParamSet

    def __post_init__(self):
        self.layers = tuple(int(i) for i in self.layers)
        if self.strength < 0:
            raise ValueError("coupling strength must be >= 0")
        for i in self.layers:
            if not 0 <= i < len(self.reference):
                raise ValueError(f"coupled layer index {i} out of range")


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)

    def rows(self):
        return zip(self.epoch, self.lr, self.train_loss, self.train_acc)


# ---------------------------------------------------------------------------
# activations


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "gelu":
        return 0.5 * z * (1.0 + np.tanh(_GELU_C * (z + _GELU_A * z**3)))
    return z


def _activation_grad(z: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of the activation evaluated at the pre-activation ``z``."""
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if kind == "gelu":
        u = _GELU_C * (z + _GELU_A * z**3)
        t = np.tanh(u)
        return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * z**2)
    return np.ones_like(z)


def row_stable_affine(X: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``X @ W + b`` where each output row depends only on its input row.

    BLAS picks kernels by matrix size, so the rows of ``X @ W`` can differ in
    the last bit from ``X[rows] @ W``. This accumulates over the input
    dimension with elementwise operations instead, which keeps frozen-layer
    outputs identical whether computed per mini-batch or once up front.
    """
    out = np.empty((X.shape[0], W.shape[1]))
    out[...] = b
    for j in range(W.shape[0]):
        out += X[:, j, None] * W[j]
    return out


# ---------------------------------------------------------------------------
# initialisation and forward pass


def he_init(spec: NetworkSpec, seed) -> ParamSet:
    """Gaussian weights with variance ``2 / fan_in`` and zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for layer in spec.layers:
        weights.append(rng.normal(0.0, math.sqrt(2.0 / layer.n_in), size=(layer.n_in, layer.n_out)))
        biases.append(np.zeros(layer.n_out))
    return ParamSet(weights, biases)


def _check_input(spec: NetworkSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.n_input:
        raise ValueError(f"expected input of shape (N, {spec.n_input}), got {X.shape}")
    return X


def _forward_cache(spec, params, X, start=0, stable_until=0):
    """Return pre-activations and post-activations for layers ``start..L-1``.

    ``acts[0]`` is the input to layer ``start``. Layers with index below
    ``stable_until`` use :func:`row_stable_affine`.
    """
    acts = [X]
    pres = []
    h = X
    for i in range(start, spec.n_layers):
        layer = spec.layers[i]
        if i < stable_until:
            z = row_stable_affine(h, params.weights[i], params.biases[i])
        else:
            z = h @ params.weights[i] + params.biases[i]
        h = _activate(z, layer.activation)
        pres.append(z)
        acts.append(h)
    return pres, acts


def forward(spec: NetworkSpec, params: ParamSet, X) -> list[np.ndarray]:
    """Activation stack: the input followed by each layer's post-activation output.

    The last entry holds the readout (pre-softmax logits).
    """
    X = _check_input(spec, X)
    _, acts = _forward_cache(spec, params, X)
    return acts


def cross_entropy(logits, labels) -> float:
    """Mean negative log-likelihood of the softmax of ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_norm - shifted[np.arange(len(labels)), labels]))


def mean_squared_error(outputs, targets) -> float:
    outputs = np.asarray(outputs, dtype=np.float64)
    return float(np.mean((outputs - np.asarray(targets, dtype=np.float64)) ** 2))


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_delta(out, targets, loss):
    n = out.shape[0]
    if loss == "cross_entropy":
        value = cross_entropy(out, targets)
        delta = _softmax(out)
        delta[np.arange(n), targets] -= 1.0
        return value, delta / n
    value = mean_squared_error(out, targets)
    return value, 2.0 * (out - targets) / out.size


def _backprop(spec, params, pres, acts, delta, start, stop):
    """Gradients for layers ``stop..L-1``; ``acts``/``pres`` begin at ``start``."""
    n_layers = spec.n_layers
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, stop - 1, -1):
        local = i - start
        delta = delta * _activation_grad(pres[local], spec.layers[i].activation)
        gw[i] = acts[local].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > stop:
            delta = delta @ params.weights[i].T
    return gw, gb


def backward(spec: NetworkSpec, params: ParamSet, X, targets, loss: str = "cross_entropy"):
    """Loss value and exact gradients with respect to every weight and bias.

    Returns
    -------
    loss : float
    grads : ParamSet
        Same layout as ``params``. Frozen layers are not special here.
    """
    X = _check_input(spec, X)
    if loss == "cross_entropy":
        targets = np.asarray(targets, dtype=np.intp)
    else:
        targets = np.asarray(targets, dtype=np.float64)
    pres, acts = _forward_cache(spec, params, X)
    value, delta = _loss_and_delta(acts[-1], targets, loss)
    gw, gb = _backprop(spec, params, pres, acts, delta, 0, 0)
    return value, ParamSet(gw, gb)


# ---------------------------------------------------------------------------
# schedules


def cosine_lr(t: float, T: float, lr0: float) -> float:
    """Cosine annealing from ``lr0`` at ``t=0`` down to 0 at ``t=T``."""
    if T == 0:
        return lr0
    if t >= T:
        return 0.0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / T))


def warmup_anneal_lr(t: float, warmup: float, T: float, peak: float, floor: float) -> float:
    """Linear ramp 0 -> ``peak`` over ``warmup`` epochs, then cosine decay to ``floor`` at ``T``."""
    if warmup > 0 and t <= warmup:
        return peak * t / warmup
    if t >= T:
        return floor
    frac = (t - warmup) / (T - warmup)
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * frac))


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Learning rate used during ``epoch`` (0-based)."""
    if config.schedule == "cosine":
        return cosine_lr(epoch, config.epochs, config.lr)
    if config.schedule == "warmup_anneal":
        # evaluated at the end of the epoch so the first epoch is not a no-op
        return warmup_anneal_lr(epoch + 1, config.warmup_epochs, config.epochs, config.lr, config.lr_floor)
    return config.lr


# ---------------------------------------------------------------------------
# optimiser steps


def _frozen(mask, i):
    return mask is not None and bool(mask[i])


def _regularised_grad(i, params, grads, weight_decay, coupling, which):
    if which == "w":
        g = grads.weights[i]
        p = params.weights[i]
        if weight_decay:
            g = g + weight_decay * p
    else:
        g = grads.biases[i]
        p = params.biases[i]
    if coupling is not None and coupling.strength > 0 and i in coupling.layers:
        ref = coupling.reference.weights[i] if which == "w" else coupling.reference.biases[i]
        g = g + 2.0 * coupling.strength * (p - ref)
    return g


def sgd_momentum_step(params, grads, velocity, lr, config: TrainConfig, mask=None, coupling=None):
    """One heavy-ball step, in place. Frozen layers (and their velocity) are untouched.

    ``velocity`` is a :class:`ParamSet` of buffers. Layers whose gradient is
    ``None`` are skipped as well.
    """
    for i in range(len(params)):
        if _frozen(mask, i) or grads.weights[i] is None:
            continue
        for which, store, vstore in (("w", params.weights, velocity.weights), ("b", params.biases, velocity.biases)):
            g = _regularised_grad(i, params, grads, config.weight_decay, coupling, which)
            v = config.momentum * vstore[i] + g
            vstore[i] = v
            store[i] = store[i] - lr * v
    return params, velocity


@dataclass
class AdamState:
    m: ParamSet
    v: ParamSet
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "AdamState":
        zero = ParamSet([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])
        return cls(zero, zero.copy(), 0)


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=0.0, mask=None, coupling=None):
    """Bias-corrected Adam update, in place; frozen layers are skipped."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for i in range(len(params)):
        if _frozen(mask, i) or grads.weights[i] is None:
            continue
        for which, store, mstore, vstore in (
            ("w", params.weights, state.m.weights, state.v.weights),
            ("b", params.biases, state.m.biases, state.v.biases),
        ):
            g = _regularised_grad(i, params, grads, weight_decay, coupling, which)
            mstore[i] = beta1 * mstore[i] + (1.0 - beta1) * g
            vstore[i] = beta2 * vstore[i] + (1.0 - beta2) * g * g
            store[i] = store[i] - lr * (mstore[i] / c1) / (np.sqrt(vstore[i] / c2) + eps)
    return params, state


# ---------------------------------------------------------------------------
# training


def _normalise_mask(spec, mask):
    if mask is None:
        return [False] * spec.n_layers
    mask = [bool(m) for m in mask]
    if len(mask) != spec.n_layers:
        raise ValueError(f"freeze mask has {len(mask)} entries for {spec.n_layers} layers")
    if mask[-1]:
        raise ValueError("the readout layer cannot be frozen")
    return mask


def frozen_prefix_length(mask) -> int:
    n = 0
    for m in mask:
        if not m:
            break
        n += 1
    return n


def train(spec: NetworkSpec, init: ParamSet, X, y, config: TrainConfig, mask=None,
          coupling: ElasticCoupling | None = None, cache_prefix: bool = True,
          callback: Callable[[int, ParamSet], None] | None = None):
    """Mini-batch training loop.

    Parameters
    ----------
    spec, init : network and its starting parameters (``init`` is not modified)
    X, y : training inputs and targets (class labels, or target matrix for MSE)
    config : :class:`TrainConfig`; its ``seed`` drives batch shuffling
    mask : per-layer booleans, True keeps a layer fixed
    coupling : optional elastic penalty toward reference weights
    cache_prefix : compute the leading run of frozen layers once instead of
        per batch. Results are bit-identical either way.

    Returns
    -------
    params : trained :class:`ParamSet`
    history : :class:`History` with one row per epoch
    """
    X = _check_input(spec, X)
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    classification = config.loss == "cross_entropy"
    y = np.asarray(y, dtype=np.intp if classification else np.float64)
    if y.shape[0] != X.shape[0]:
        raise ValueError("X and y have different numbers of rows")
    mask = _normalise_mask(spec, mask)
    init.check(spec)
    if coupling is not None:
        coupling.reference.check(spec)

    params = init.copy()
    history = History()
    if config.epochs == 0:
        return params, history

    prefix = frozen_prefix_length(mask)
    # first layer that needs a gradient
    stop = next(i for i, m in enumerate(mask) if not m)
    if cache_prefix and prefix > 0:
        _, acts = _forward_cache(spec, params, X, stable_until=prefix)
        inputs, start = acts[prefix], prefix
        stable = 0
    else:
        inputs, start = X, 0
        stable = prefix

    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    velocity = ParamSet([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])
    adam = AdamState.zeros_like(params) if config.optimizer == "adam" else None

    for epoch in range(config.epochs):
        lr = learning_rate(config, epoch)
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            xb = inputs[idx]
            yb = y[idx]
            pres, acts = _forward_cache(spec, params, xb, start=start, stable_until=stable)
            value, delta = _loss_and_delta(acts[-1], yb, config.loss)
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, b, value)
            gw, gb = _backprop(spec, params, pres, acts, delta, start, stop)
            grads = ParamSet(gw, gb)
            if adam is not None:
                adam_step(params, grads, adam, lr, weight_decay=config.weight_decay, mask=mask, coupling=coupling)
            else:
                sgd_momentum_step(params, grads, velocity, lr, config, mask=mask, coupling=coupling)
            total_loss += value * len(idx)
            if classification:
                correct += int(np.sum(np.argmax(acts[-1], axis=1) == yb))
        history.epoch.append(epoch)
        history.lr.append(lr)
        history.train_loss.append(total_loss / n)
        history.train_acc.append(correct / n if classification else float("nan"))
        if callback is not None:
            callback(epoch, params)
    return params, history


# ---------------------------------------------------------------------------
# evaluation and inspection


def predict_logits(spec, params, X) -> np.ndarray:
    return forward(spec, params, X)[-1]


def evaluate(spec: NetworkSpec, params: ParamSet, X, y) -> float:
    """Fraction of rows whose arg-max logit equals the label."""
    X = _check_input(spec, X)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(np.argmax(predict_logits(spec, params, X), axis=1) == y))


def extract_representation(spec: NetworkSpec, params: ParamSet, X, layer: int) -> np.ndarray:
    """Post-activation values at ``layer`` (0 is the input, ``L`` the logits)."""
    if not 0 <= layer <= spec.n_layers:
        raise IndexError(f"layer index {layer} outside [0, {spec.n_layers}]")
    X = _check_input(spec, X)
    if layer == 0:
        return X
    _, acts = _forward_cache(spec, params, X)
    return acts[layer]


def cosine_distance(params_a: ParamSet, params_b: ParamSet, layer: int) -> float:
    """``1 - cos`` between the flattened weight matrices of one layer."""
    a = params_a.weights[layer].ravel()
    b = params_b.weights[layer].ravel()
    if a.shape != b.shape:
        raise ValueError("weight shapes differ")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError(f"layer {layer} has zero-norm weights")
    return float(min(2.0, max(0.0, 1.0 - np.dot(a, b) / (na * nb))))
