"""scikit-learn style estimator wrapping the spectral ODE classifier.

``BfnoNodeClassifier`` follows the usual conventions: hyperparameters are
stored untouched in ``__init__`` (so ``get_params``/``set_params``/``clone``
work), ``fit`` learns ``classes_`` and the trained parameter vector, and
``predict``/``predict_proba`` run the frozen model.

Inputs are either image batches of shape (n, C, H, W) or flat 2-D arrays of
shape (n, features) together with ``image_shape`` saying how to fold them,
which keeps the estimator usable inside ordinary sklearn pipelines.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .data import Dataset
from .layers import OdeFunctionConfig
from .odeint import SolverConfig
from .training import Model, MetricsRow, TrainConfig, fit as train_fit, softmax


class BfnoNodeClassifier(BaseEstimator, ClassifierMixin):
    """Image classifier whose hidden state evolves under a learned spectral field.

    Parameters mirror the run-config keys: ``variant`` picks the derivative
    body (branched spectral, truncated-mode spectral, or convolutional),
    ``num_layers``/``branches``/``width`` set its size, and the solver block
    controls how the state is integrated from t=0 to t=1.
    """

    def __init__(self, variant="bfno", num_layers=2, branches=2, width=16,
                 activation="relu", augment=0, kernel_sharing="per-channel",
                 fno_modes=4, solver="rk4", fixed_steps=4, rtol=1e-3, atol=1e-3,
                 grad_mode="discrete", lr=1e-3, batch_size=64, epochs=3,
                 validation_fraction=0.1, seed=0, image_shape=None, verbose=False):
        self.variant = variant
        self.num_layers = num_layers
        self.branches = branches
        self.width = width
        self.activation = activation
        self.augment = augment
        self.kernel_sharing = kernel_sharing
        self.fno_modes = fno_modes
        self.solver = solver
        self.fixed_steps = fixed_steps
        self.rtol = rtol
        self.atol = atol
        self.grad_mode = grad_mode
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.image_shape = image_shape
        self.verbose = verbose

    # ------------------------------------------------ validation helpers

    def _fold_images(self, X, fitting: bool) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            if self.image_shape is None:
                raise ValueError(
                    "2-D input needs image_shape=(C, H, W) to fold the features"
                )
            c, h, w = self.image_shape
            if X.shape[1] != c * h * w:
                raise ValueError(
                    f"X has {X.shape[1]} features, image_shape {self.image_shape} "
                    f"needs {c * h * w}"
                )
            X = X.reshape(len(X), c, h, w)
        elif X.ndim != 4:
            raise ValueError(f"X must be (n, C, H, W) or (n, features), got ndim={X.ndim}")
        if X.shape[0] == 0:
            raise ValueError("X is empty")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if not fitting:
            if X.shape[1:] != self._image_shape_:
                raise ValueError(
                    f"X images have shape {X.shape[1:]}, fitted on {self._image_shape_}"
                )
        return X

    def _solver_config(self) -> SolverConfig:
        return SolverConfig(method=self.solver, fixed_steps=self.fixed_steps,
                            rtol=self.rtol, atol=self.atol)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this BfnoNodeClassifier instance is not fitted yet; call fit first"
            )

    # ------------------------------------------------ sklearn surface

    def fit(self, X, y):
        X = self._fold_images(X, fitting=True)
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(X):
            raise ValueError("y must be a label vector matching X")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self._image_shape_ = X.shape[1:]
        self.n_features_in_ = int(np.prod(X.shape[1:]))

        func_cfg = OdeFunctionConfig(
            variant=self.variant,
            num_layers=self.num_layers,
            branches=self.branches,
            hidden_channels=self.width,
            state_channels=X.shape[1] + self.augment,
            augment=self.augment,
            activation=self.activation,
            kernel_sharing=self.kernel_sharing,
            fno_modes=self.fno_modes,
        )
        model = Model(func_cfg, X.shape[1:], len(self.classes_), self.seed)
        train_cfg = TrainConfig(lr=self.lr, batch_size=self.batch_size,
                                epochs=self.epochs, seed=self.seed,
                                grad_mode=self.grad_mode)

        # deterministic tail split for per-epoch validation metrics
        n_val = int(len(X) * self.validation_fraction)
        n_val = min(max(n_val, 1), len(X) - 1)
        train_ds = Dataset(X[:-n_val], encoded[:-n_val], "fit", "train", len(self.classes_))
        val_ds = Dataset(X[-n_val:], encoded[-n_val:], "fit", "val", len(self.classes_))
        log = print if self.verbose else None
        rows: list[MetricsRow] = train_fit(
            model, train_ds, val_ds, self._solver_config(), train_cfg, log=log
        )
        self.model_ = model
        self.history_ = rows
        self.param_count_ = model.param_count
        return self

    def decision_function(self, X):
        self._check_fitted()
        X = self._fold_images(X, fitting=False)
        logits, _ = self.model_.logits(X, self._solver_config())
        return logits

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[logits.argmax(axis=1)]
