"""Scikit-learn style front-end for the broadcast tensor regression."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import Dataset
from .model import identifiability_check
from .solver import FitConfig, fit
from .validation import as_sample_tensors, check_responses, check_unit_interval


class BroadcastTensorRegressor(BaseEstimator, RegressorMixin):
    """Scalar-on-tensor regression with broadcast spline effects scaled by a
    low-CP-rank coefficient tensor, fit by penalized block relaxation.

    Parameters
    ----------
    rank : int
        Number of CP components.
    lambda1, lambda2 : float
        Elastic-net penalty strength and mix (1 = lasso, 0 = ridge) applied
        to the scaling factors.  ``lambda1=0`` fits the unpenalized,
        unconstrained problem.
    n_basis, spline_order : int
        Spline basis size K and order (4 = cubic); interior knots sit at
        equally spaced quantiles of the pooled training entries.
    epsilon : float
        Relative objective-decrease stopping threshold (absolute when
        ``absolute_epsilon``).
    init : str
        ``"sequential_downsize"`` chains unpenalized fits on block-averaged
        problems of increasing size; ``"random"`` starts from seeded noise.
    dims : tuple or None
        Covariate shape when X is passed as a 2-D matrix of flattened rows
        (first index fastest); inferred from X's shape otherwise.
    clamp : bool
        Clip prediction inputs into [0, 1] instead of raising.
    random_state : int
        Seed for initialization.

    Attributes
    ----------
    model_ : BroadcastModel
        The fitted model (prediction, entrywise effects, norm tensor).
    result_ : FitResult
        Objective trace and convergence information.
    """

    def __init__(
        self,
        rank: int = 1,
        lambda1: float = 1.0,
        lambda2: float = 0.5,
        n_basis: int = 7,
        spline_order: int = 4,
        epsilon: float = 1e-6,
        absolute_epsilon: bool = False,
        max_iters: int = 500,
        init: str = "sequential_downsize",
        init_size_constant: float = 10.0,
        init_ladder_steps: int = 3,
        init_max_iters: int = 100,
        unpenalized: bool = False,
        dims: tuple[int, ...] | None = None,
        clamp: bool = False,
        cache_budget_bytes: int = 2_000_000_000,
        random_state: int = 0,
    ):
        self.rank = rank
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.n_basis = n_basis
        self.spline_order = spline_order
        self.epsilon = epsilon
        self.absolute_epsilon = absolute_epsilon
        self.max_iters = max_iters
        self.init = init
        self.init_size_constant = init_size_constant
        self.init_ladder_steps = init_ladder_steps
        self.init_max_iters = init_max_iters
        self.unpenalized = unpenalized
        self.dims = dims
        self.clamp = clamp
        self.cache_budget_bytes = cache_budget_bytes
        self.random_state = random_state

    def _config(self) -> FitConfig:
        return FitConfig(
            rank=self.rank,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            n_basis=self.n_basis,
            spline_order=self.spline_order,
            epsilon=self.epsilon,
            absolute_epsilon=self.absolute_epsilon,
            max_iters=self.max_iters,
            seed=self.random_state,
            init=self.init,
            init_size_constant=self.init_size_constant,
            init_ladder_steps=self.init_ladder_steps,
            init_max_iters=self.init_max_iters,
            unpenalized=self.unpenalized,
            cache_budget_bytes=self.cache_budget_bytes,
        )

    def fit(self, X, y):
        """Fit on covariates of shape ``(n, *dims)`` (or flattened rows with
        the ``dims`` parameter set) and responses of length n."""
        X = as_sample_tensors(X, self.dims)
        X = check_unit_interval(X, clamp=False)
        y = check_responses(y, X.shape[0])
        result = fit(Dataset(X, y), self._config())
        self.result_ = result
        self.model_ = result.model
        self.dims_ = result.model.dims
        self.n_iter_ = result.iterations
        self.converged_ = result.converged
        self.objective_trace_ = list(result.objective_trace)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = as_sample_tensors(X, self.dims_)
        return self.model_.predict(X, clamp=self.clamp)

    def norm_tensor(self) -> np.ndarray:
        """Per-entry effect-size tensor of the fitted model."""
        check_is_fitted(self, "model_")
        return self.model_.norm_tensor()

    def identifiability(self) -> tuple[list[int], bool]:
        """k-ranks of the fitted factors and the uniqueness condition."""
        check_is_fitted(self, "model_")
        return identifiability_check(self.model_.factors)
