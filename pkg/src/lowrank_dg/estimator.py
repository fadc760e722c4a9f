"""scikit-learn compatible front end.

>>> clf = DomainGeneralizationClassifier(mode="full", random_state=0)
>>> clf.fit(X, y, domains=d).predict(X_unseen_domain)      # doctest: +SKIP

``fit`` takes a per-sample ``domains`` array (like ``groups`` in sklearn's
splitters). Predictions always use the extracted domain-agnostic model.
"""

from __future__ import annotations

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, column_or_1d, validate_data

from .dataset_io import Domain, MultiDomainDataset
from .experiment import ModeRunner, check_mode
from .network import TrainConfig, predict_labels


class DomainGeneralizationClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Multi-source classifier that generalizes to unseen domains.

    Parameters
    ----------
    mode : {"deep_all", "tuning_last", "two_hot_last", "two_hot_decomp_last", "full"}
        Which layers are domain-conditioned (see :mod:`lowrank_dg.experiment`).
    hidden_layer_sizes : tuple of int
        Widths of the hidden ReLU layers.
    rho : float
        Weight of the domain-specific slot in the training 2-hot codes.
    epsilon : float
        Relative reconstruction budget used to pick Tucker ranks.
    max_iter, pretrain_iter, single_iter : int
        SGD steps for the mode's own fine-tuning, the shared pretraining
        stage, and each single-domain fine-tune used for initialization.
    random_state : int or None
        Seed for every random draw; ``None`` means 0.

    Attributes
    ----------
    classes_ : ndarray of shape (n_classes,)
    domains_ : ndarray of shape (n_source_domains,)
    network_ : Network
        Trained domain-conditioned network.
    model_ : ConcreteNetwork
        Its domain-agnostic extraction, used by ``predict``.
    train_report_ : TrainReport
    """

    def __init__(self, mode="full", hidden_layer_sizes=(32,), rho=0.3, learning_rate=1e-2,
                 momentum=0.9, batch_size=64, max_iter=300, pretrain_iter=300, single_iter=200,
                 epsilon=0.1, val_fraction=0.1, weight_decay=0.0, eval_every=50,
                 random_state=0):
        self.mode = mode
        self.hidden_layer_sizes = hidden_layer_sizes
        self.rho = rho
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.pretrain_iter = pretrain_iter
        self.single_iter = single_iter
        self.epsilon = epsilon
        self.val_fraction = val_fraction
        self.weight_decay = weight_decay
        self.eval_every = eval_every
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            batch_size=self.batch_size,
            max_iterations=self.max_iter,
            rho=self.rho,
            seed=0 if self.random_state is None else int(self.random_state),
            val_fraction=self.val_fraction,
            weight_decay=self.weight_decay,
            eval_every=self.eval_every,
        )

    def fit(self, X, y, domains=None):
        X, y = validate_data(self, X, y)
        check_classification_targets(y)
        if domains is None:
            domains = np.zeros(len(y), dtype=int)
        domains = column_or_1d(domains)
        if len(domains) != len(y):
            raise ValueError(f"domains has {len(domains)} entries, expected {len(y)}")
        check_mode(self.mode)

        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.domains_ = np.unique(domains)
        for name in self.domains_:
            if np.sum(domains == name) < 2:
                raise ValueError(f"domain {name!r} has 1 sample; each domain needs at least 2")
        dataset = MultiDomainDataset(
            [Domain(str(name), X[domains == name], y_enc[domains == name],
                    np.flatnonzero(domains == name)) for name in self.domains_],
            len(self.classes_),
        )
        runner = ModeRunner(
            dataset, self._train_config(), hidden=self.hidden_layer_sizes,
            pretrain_iterations=self.pretrain_iter, single_iterations=self.single_iter,
            epsilon=self.epsilon,
        )
        self.network_ = runner.fit(self.mode)
        self.model_ = self.network_.extract_agnostic()
        self.train_report_ = runner.reports[self.mode]
        self.n_iter_ = int(self.train_report_.iterations[-1])
        return self

    def _scores(self, X):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, reset=False)
        return self.model_.forward(X)

    def decision_function(self, X):
        """Class scores; for two classes, the margin of ``classes_[1]`` over ``classes_[0]``."""
        scores = self._scores(X)
        return scores[:, 1] - scores[:, 0] if scores.shape[1] == 2 else scores

    def predict_proba(self, X):
        return softmax(self._scores(X), axis=1)

    def predict(self, X):
        labels = predict_labels(self._scores(X))
        return self.classes_[labels]

    def transform(self, X):
        """Penultimate-layer activations of the agnostic model."""
        check_is_fitted(self, "model_")
        return self.model_.features(validate_data(self, X, reset=False))
