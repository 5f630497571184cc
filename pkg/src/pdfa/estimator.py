"""scikit-learn compatible classifier around the DFA-family trainers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .clipping import ClipConfig
from .network import softmax
from .data import LabeledDataset
from .training import Seeds, TrainConfig, train


class DFAClassifier(ClassifierMixin, BaseEstimator):
    """Fully-connected classifier trained with BP, DFA, ternarized DFA or simulated photonic DFA.

    Parameters
    ----------
    algorithm : {"bp", "noisy_bp", "dfa", "tdfa", "pdfa"}
        Update rule. ``"pdfa"`` routes the ternarized error through the
        simulated optical projection.
    hidden_layer_sizes : tuple of int
    activation : {"tanh", "relu", "sigmoid"}
    epochs, batch_size, learning_rate, momentum
        Minibatch SGD with classical momentum.
    private : bool
        Enable clipping, feedback scaling and Gaussian noise of scale
        ``noise_sigma``.
    noise_sigma : float
    ternary_threshold : float
    tau_h_min, tau_h_max, tau_B, input_cap, magnitude_floor
        Clipping parameters (see ``pdfa.clipping``).
    feedback_std : float or None
        Entry std of the feedback matrices; None uses ``1/sqrt(n_classes)``.
    per_pass_noise : bool
    random_state : int
        Base seed; data order, initialization, noise and feedback matrices use
        ``random_state + 0..3``.
    """

    def __init__(self, algorithm="dfa", hidden_layer_sizes=(512, 512), activation="tanh",
                 epochs=15, batch_size=256, learning_rate=0.01, momentum=0.9, private=False,
                 noise_sigma=0.0, ternary_threshold=0.15, tau_h_min=0.1, tau_h_max=1.0, tau_B=1.0,
                 input_cap=1.0, magnitude_floor=False, feedback_std=None, per_pass_noise=False,
                 record_alignment=False, random_state=0):
        self.algorithm = algorithm
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.private = private
        self.noise_sigma = noise_sigma
        self.ternary_threshold = ternary_threshold
        self.tau_h_min = tau_h_min
        self.tau_h_max = tau_h_max
        self.tau_B = tau_B
        self.input_cap = input_cap
        self.magnitude_floor = magnitude_floor
        self.feedback_std = feedback_std
        self.per_pass_noise = per_pass_noise
        self.record_alignment = record_alignment
        self.random_state = random_state

    def _train_config(self, n_features: int, n_classes: int) -> TrainConfig:
        rs = int(self.random_state)
        fb = self.feedback_std if self.feedback_std is not None else 1.0 / np.sqrt(n_classes)
        return TrainConfig(
            algorithm=self.algorithm, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, momentum=self.momentum, private=self.private,
            noise_sigma=self.noise_sigma, ternary_threshold=self.ternary_threshold,
            per_pass_noise=self.per_pass_noise, feedback_std=fb,
            widths=(n_features, *self.hidden_layer_sizes, n_classes),
            hidden_activation=self.activation, record_alignment=self.record_alignment,
            clip=ClipConfig(tau_h_min=self.tau_h_min, tau_h_max=self.tau_h_max, tau_B=self.tau_B,
                            input_cap=self.input_cap, magnitude_floor_mode=self.magnitude_floor),
            seeds=Seeds(data=rs, init=rs + 1, noise=rs + 2, matrix=rs + 3),
        )

    def fit(self, X, y, eval_set=None):
        """Train on ``(X, y)``; ``eval_set=(X_val, y_val)`` adds per-epoch validation accuracy."""
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        self.config_ = self._train_config(X.shape[1], len(self.classes_))
        val = None
        if eval_set is not None:
            Xv, yv = check_X_y(*eval_set, dtype=np.float64)
            val = LabeledDataset(Xv, np.searchsorted(self.classes_, yv))
        self.trainer_, self.metrics_ = train(self.config_, LabeledDataset(X, encoded), val_set=val)
        self.network_ = self.trainer_.net
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.network_.predict_logits(X)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def privacy_report(self, delta: float = 1e-5, **kwargs):
        """Accountant report for the fitted run (see ``pdfa.privacy.audit_report``)."""
        from .training import privacy_report_for_run

        check_is_fitted(self, "network_")
        return privacy_report_for_run(self.trainer_, self.metrics_, self.metrics_.n_train, delta, **kwargs)
