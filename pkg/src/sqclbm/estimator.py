"""scikit-learn wrappers: the trained surrogate as a regressor, BGK as a transformer.

Both accept populations either as 9 physical columns or as the 16-slot
register layout and answer in the same width they were given.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_tau
from .circuit import PAPER_BLOCK, collide_sqc
from .lattice import bgk_collide
from .qstate import DIM, SURPLUS, embed, physical
from .training import Dataset, TrainConfig, train


def _check_width(X, expected=None):
    if X.shape[1] not in (9, DIM):
        raise ValueError(f"expected 9 or {DIM} population columns, got {X.shape[1]}")
    if expected is not None and X.shape[1] != expected:
        raise ValueError(f"X has {X.shape[1]} columns but the estimator was fitted on {expected}")
    if np.any(X < 0):
        raise ValueError("populations must be non-negative")


def _to_physical(X):
    if X.shape[1] == 9:
        return X
    if np.any(X[:, SURPLUS] != 0):
        raise ValueError("training data must not populate surplus register slots")
    return physical(X)


class SQCRegressor(RegressorMixin, BaseEstimator):
    """Learns circuit angles that map pre- to post-collision populations.

    Parameters mirror :class:`~sqclbm.training.TrainConfig`; ``random_state``
    seeds both the initial angles and the batch order.
    """

    def __init__(self, block=",".join(PAPER_BLOCK), n_blocks=15, tail="", learning_rate=0.05,
                 iterations=10_000, batch_size=5, alpha0=1e-4, alpha_step_every=10_000, alpha_max=0.5,
                 init_low=-np.pi, init_high=np.pi, val_every=1000, n_val=1000, epsilon_acc=1e-5,
                 random_state=0):
        self.block = block
        self.n_blocks = n_blocks
        self.tail = tail
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.batch_size = batch_size
        self.alpha0 = alpha0
        self.alpha_step_every = alpha_step_every
        self.alpha_max = alpha_max
        self.init_low = init_low
        self.init_high = init_high
        self.val_every = val_every
        self.n_val = n_val
        self.epsilon_acc = epsilon_acc
        self.random_state = random_state

    def _train_config(self):
        seed = 0 if self.random_state is None else int(self.random_state)
        return TrainConfig(
            block=self.block, n_blocks=self.n_blocks, tail=self.tail, learning_rate=self.learning_rate,
            iterations=self.iterations, batch_size=self.batch_size, alpha0=self.alpha0,
            alpha_step_every=self.alpha_step_every, alpha_max=self.alpha_max, epsilon_acc=self.epsilon_acc,
            init_low=self.init_low, init_high=self.init_high, seed=seed, val_every=self.val_every,
            n_val=self.n_val,
        )

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        _check_width(X)
        if y.shape != X.shape:
            raise ValueError(f"y shape {y.shape} does not match X shape {X.shape}")
        data = Dataset(_to_physical(X), _to_physical(y))
        ckpt, report = train(self._train_config(), data)
        self.checkpoint_ = ckpt
        self.architecture_ = ckpt.architecture
        self.theta_ = ckpt.theta
        self.loss_curve_ = np.asarray(report.loss_curve, dtype=np.float64)
        self.n_iter_ = ckpt.iteration
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=np.float64)
        _check_width(X, self.n_features_in_)
        out = collide_sqc(self.architecture_, self.theta_, embed(X) if X.shape[1] == 9 else X)
        return physical(out) if X.shape[1] == 9 else out


class BGKCollision(TransformerMixin, BaseEstimator):
    """Stateless exact BGK relaxation, ``f - (f - f_eq) / tau``."""

    def __init__(self, tau=1.0):
        self.tau = tau

    def fit(self, X, y=None):
        check_tau(self.tau)
        X = check_array(X, dtype=np.float64)
        _check_width(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        _check_width(X, self.n_features_in_)
        if X.shape[1] == 9:
            return bgk_collide(X, self.tau)
        return embed(bgk_collide(_to_physical(X), self.tau))
