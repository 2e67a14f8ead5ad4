"""
scikit-learn style wrapper around the two-layer deep linear network.

``DeepLinearRegressor`` trains ``V U`` on the full-batch MSE with any of
the package optimizers, so the optimizers can be compared inside ordinary
sklearn tooling (``clone``, ``cross_val_score``, pipelines).
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .datagen import Rng, balanced_small_init
from .errors import NumericalDivergenceError
from .linalg import singular_values
from .models import PopulationStats, dln_population_grads
from .optim import make_optimizer


class DeepLinearRegressor(RegressorMixin, BaseEstimator):
    """
    Two-layer linear network ``y = V U x`` trained from small initialization.

    Parameters
    ----------
    hidden : int
        Width ``H`` of the hidden layer.
    optimizer : str
        One of ``muonlab.optim.KINDS``.
    learning_rate, momentum : float
    steps : int
        Number of full-batch updates.
    init_scale : float
        Standard deviation of the Gaussian initialization.
    svd_method : {"jacobi", "lapack"}
    random_state : int
        Seed of the initialization stream.

    Attributes
    ----------
    u_, v_ : ndarray
        Trained layers.
    loss_curve_ : ndarray
        Training MSE after every update.
    """

    def __init__(self, hidden=4, optimizer="gd", learning_rate=1e-2, momentum=0.0, steps=2000,
                 init_scale=1e-2, svd_method="lapack", random_state=0):
        self.hidden = hidden
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.steps = steps
        self.init_scale = init_scale
        self.svd_method = svd_method
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        self._y_1d = y.ndim == 1
        ys = y.reshape(len(y), -1).astype(np.float64)
        stats = PopulationStats.from_samples(X, ys)
        yy = float(np.mean(np.sum(ys * ys, axis=1)))
        net = balanced_small_init(Rng(self.random_state), X.shape[1], self.hidden, ys.shape[1],
                                  self.init_scale)
        opt = make_optimizer(self.optimizer, learning_rate=self.learning_rate,
                             momentum=self.momentum, svd_method=self.svd_method)
        curve = np.empty(self.steps)
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(self.steps):
                gu, gv = dln_population_grads(net, stats)
                if not (np.all(np.isfinite(gu)) and np.all(np.isfinite(gv))):
                    raise NumericalDivergenceError(f"training diverged at step {i + 1}")
                net.u, net.v = opt.step([net.u, net.v], [gu, gv])
                w = net.v @ net.u
                curve[i] = 0.5 * (np.sum((w @ stats.sigma_xx) * w) - 2 * np.sum(w * stats.sigma_yx) + yy)
                if not np.isfinite(curve[i]):
                    raise NumericalDivergenceError(f"training diverged at step {i + 1}")
        self.u_, self.v_ = net.u, net.v
        self.loss_curve_ = curve
        return self

    def predict(self, X):
        check_is_fitted(self, ("u_", "v_"))
        X = validate_data(self, X, reset=False)
        out = X @ (self.v_ @ self.u_).T
        return out.ravel() if self._y_1d else out

    def product_singular_values(self):
        check_is_fitted(self, ("u_", "v_"))
        return singular_values(self.v_ @ self.u_, method=self.svd_method)
