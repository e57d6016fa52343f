"""scikit-learn front-end for the dense training engine."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from . import network as nn
from ._validation import check_features, check_labelled


class DenseClassifier(ClassifierMixin, BaseEstimator):
    """Feed-forward classifier trained with SGD and momentum.

    Parameters
    ----------
    hidden : tuple of int
        Hidden-layer widths.
    activation : {"relu", "gelu", "tanh"}
    epochs, batch_size, lr, momentum, weight_decay, schedule :
        See :class:`defrost.network.TrainConfig`.
    random_state : int
        Seeds both the He initialisation and the batch order.
    """

    def __init__(self, hidden=(64, 64), activation="relu", epochs=30, batch_size=128, lr=0.1, momentum=0.9,
                 weight_decay=5e-4, schedule="cosine", random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_labelled(X, y)
        self.classes_ = unique_labels(y)
        encoded = np.searchsorted(self.classes_, y)
        n_out = max(len(self.classes_), 2)
        self.spec_ = nn.NetworkSpec.from_widths([X.shape[1], *self.hidden, n_out], self.activation)
        init_ss, shuffle_ss = np.random.SeedSequence(int(self.random_state)).spawn(2)
        config = nn.TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
                                weight_decay=self.weight_decay, schedule=self.schedule,
                                seed=int(shuffle_ss.generate_state(1)[0]))
        self.params_, self.history_ = nn.train(self.spec_, nn.he_init(self.spec_, init_ss), X, encoded, config)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        return nn.predict_logits(self.spec_, self.params_, check_features(X))

    def predict_proba(self, X):
        logits = self.decision_function(X)
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits[:, : len(self.classes_)], axis=1)]

    def transform(self, X, layer=1):
        """Post-activation representation at ``layer`` (0 is the input)."""
        check_is_fitted(self, "params_")
        return nn.extract_representation(self.spec_, self.params_, check_features(X), layer)
