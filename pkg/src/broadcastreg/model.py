"""The fitted regression object: prediction, per-entry effect functions,
norm tensors for region selection, and the k-rank identifiability check."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .splines import SplineBasis
from .tensor_ops import CPFactors, cp_weights, unflatten_canonical

# cap on elements of one basis-evaluation block during batched prediction
_PREDICT_BLOCK_ELEMENTS = 1 << 24


def flatten_samples(covariates: np.ndarray) -> np.ndarray:
    """Rows of shape (n, s): each sample tensor flattened in canonical order."""
    X = np.asarray(covariates)
    n = X.shape[0]
    stacked = np.moveaxis(X, 0, -1)
    return stacked.reshape(-1, n, order="F").T


@dataclass(frozen=True)
class BroadcastModel:
    """Fitted broadcast spline regression with a low-rank scaling tensor.

    The regression function is
    ``intercept + (1/s) * sum_r sum_j (prod_d factors[d][j_d, r]) *
    (coeffs[:, r] @ reduced_basis(x_j))`` over all entry multi-indices j.
    Models are immutable; prediction and norm computation are pure.
    """

    intercept: float
    factors: CPFactors
    basis: SplineBasis

    def __post_init__(self):
        if self.factors.coeffs is None:
            raise ValueError("a fitted model requires a coefficient matrix")
        if self.factors.coeffs.shape[0] != self.basis.size - 1:
            raise ValueError(
                f"coefficient rows ({self.factors.coeffs.shape[0]}) must match the "
                f"reduced basis size ({self.basis.size - 1})"
            )
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def dims(self) -> tuple[int, ...]:
        return self.factors.dims

    @property
    def n_entries(self) -> int:
        return int(np.prod(self.dims))

    @property
    def rank(self) -> int:
        return self.factors.rank

    # -- prediction -----------------------------------------------------------

    def _prepare_inputs(self, x, clamp: bool) -> tuple[np.ndarray, bool]:
        X = np.asarray(x, dtype=np.float64)
        single = X.shape == self.dims
        if single:
            X = X[None]
        if X.shape[1:] != self.dims:
            raise ValueError(f"covariate shape {X.shape[1:]} does not match model dims {self.dims}")
        if not np.all(np.isfinite(X)):
            raise ValueError("covariate entries must be finite")
        if clamp:
            X = np.clip(X, 0.0, 1.0)
        elif X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError(
                "covariate entries outside [0, 1]; pass clamp=True to clip test data "
                "that slightly exceeds the training range"
            )
        return X, single

    def predict(self, x, clamp: bool = False):
        """Predicted response for one tensor of shape ``dims`` or a batch of
        shape ``(n, *dims)``.  Entries outside [0, 1] raise unless ``clamp``."""
        X, single = self._prepare_inputs(x, clamp)
        n = X.shape[0]
        flat = flatten_samples(X)
        weights = cp_weights(self.factors.factors) @ self.factors.coeffs.T  # (s, K-1)
        out = np.empty(n)
        block = max(1, _PREDICT_BLOCK_ELEMENTS // max(weights.size, 1))
        for start in range(0, n, block):
            stop = min(start + block, n)
            phi = self.basis.eval_truncated_reduced(flat[start:stop])
            out[start:stop] = np.einsum("csk,sk->c", phi, weights)
        out = self.intercept + out / self.n_entries
        return float(out[0]) if single else out

    # -- entrywise effects ----------------------------------------------------

    def entry_coefficients(self) -> np.ndarray:
        """Coefficients c_j of every entrywise effect function, shape
        ``(s, K-1)`` with rows in canonical entry order."""
        weights = cp_weights(self.factors.factors)
        return weights @ self.factors.coeffs.T / self.n_entries

    def entrywise_function(self, index: tuple[int, ...]) -> tuple[np.ndarray, float]:
        """Coefficient vector and centering constant of one entry's effect.

        The effect function is ``x -> c @ (reduced_basis(x) - integrals)``;
        the returned constant ``c @ integrals`` belongs to the aggregate
        intercept, not to the stored parametrization.
        """
        index = tuple(int(i) for i in index)
        if len(index) != len(self.dims) or any(
            not 0 <= i < p for i, p in zip(index, self.dims)
        ):
            raise ValueError(f"index {index} out of range for dims {self.dims}")
        j = int(np.ravel_multi_index(index, self.dims, order="F"))
        coeff = self.entry_coefficients()[j]
        constant = float(coeff @ self.basis.centered_data().reduced_integrals)
        return coeff, constant

    def aggregate_intercept(self) -> float:
        """Intercept of the centered additive form: the stored intercept plus
        every entry's centering constant."""
        coeffs = self.entry_coefficients()
        reduced = self.basis.centered_data().reduced_integrals
        return self.intercept + float((coeffs @ reduced).sum())

    def norm_tensor(self) -> np.ndarray:
        """Tensor of per-entry L2 norms of the centered effect functions,
        shape ``dims``, nonnegative."""
        coeffs = self.entry_coefficients()
        gram = self.basis.centered_data().gram
        sq = np.einsum("jk,kl,jl->j", coeffs, gram, coeffs)
        return unflatten_canonical(np.sqrt(np.maximum(sq, 0.0)), self.dims)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "dims": list(self.dims),
            "basis": self.basis.to_dict(),
            "factors": [f.tolist() for f in self.factors.factors],
            "coeffs": self.factors.coeffs.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "BroadcastModel":
        basis = SplineBasis.from_dict(payload["basis"])
        factors = tuple(np.asarray(f, dtype=np.float64) for f in payload["factors"])
        coeffs = np.asarray(payload["coeffs"], dtype=np.float64)
        model = cls(
            intercept=float(payload["intercept"]),
            factors=CPFactors(factors, coeffs=coeffs),
            basis=basis,
        )
        if list(model.dims) != list(payload["dims"]):
            raise ValueError("model payload dims disagree with factor shapes")
        return model


def save_model(path, model: BroadcastModel) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path) -> BroadcastModel:
    with open(path) as fh:
        return BroadcastModel.from_dict(json.load(fh))


# -- identifiability diagnostic ------------------------------------------------

_KRANK_MAX_COLUMNS = 12


def k_rank(mat: np.ndarray, tol: float = 1e-8) -> int:
    """Largest k such that every k-subset of columns is linearly independent."""
    mat = np.asarray(mat, dtype=np.float64)
    n_cols = mat.shape[1]
    if n_cols > _KRANK_MAX_COLUMNS:
        raise ValueError(f"k-rank enumeration is unsupported beyond {_KRANK_MAX_COLUMNS} columns")
    best = 0
    for k in range(1, min(n_cols, mat.shape[0]) + 1):
        for combo in itertools.combinations(range(n_cols), k):
            sv = np.linalg.svd(mat[:, combo], compute_uv=False)
            if sv[-1] <= tol * max(1.0, sv[0]):
                return best
        best = k
    return best


def identifiability_check(factors: CPFactors) -> tuple[list[int], bool]:
    """k-ranks of the factor matrices and whether their sum meets the
    sufficient uniqueness condition ``sum_d k_d >= 2R + D - 1``."""
    ranks = [k_rank(f) for f in factors.factors]
    bound = 2 * factors.rank + len(factors.factors) - 1
    return ranks, sum(ranks) >= bound
