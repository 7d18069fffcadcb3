"""Spline bases on [0, 1]: clamped B-splines, the equivalent truncated-power
basis with its constant dropped, exact integrals, and the Gram matrix of the
mean-centered basis functions used for entrywise effect norms."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


class DegenerateDataError(ValueError):
    """Raised when sample values cannot support strictly increasing knots."""


@dataclass(frozen=True)
class CenteredBasisData:
    """Integrals and L2 geometry of the reduced truncated-power basis.

    Attributes
    ----------
    integrals : ndarray, shape (K,)
        Exact integrals of the full truncated-power basis over [0, 1]
        (the leading constant integrates to 1).
    reduced_integrals : ndarray, shape (K-1,)
        Integrals of the K-1 non-constant basis functions.
    gram : ndarray, shape (K-1, K-1)
        Gram matrix of the centered functions g_k(x) = b_{k+1}(x) - u_{k+1},
        symmetric positive semidefinite.
    """

    integrals: np.ndarray
    reduced_integrals: np.ndarray
    gram: np.ndarray


@dataclass(frozen=True)
class SplineBasis:
    """Spline basis of order ``zeta`` (degree ``zeta - 1``) on [0, 1] with
    strictly increasing interior knots; the basis size is
    ``K = zeta + len(interior_knots)``."""

    zeta: int
    interior_knots: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if int(self.zeta) != self.zeta or self.zeta < 1:
            raise ValueError("spline order must be an integer >= 1")
        object.__setattr__(self, "zeta", int(self.zeta))
        knots = tuple(float(x) for x in self.interior_knots)
        object.__setattr__(self, "interior_knots", knots)
        if any(not (0.0 < x < 1.0) for x in knots):
            raise ValueError("interior knots must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError("interior knots must be strictly increasing")

    @property
    def size(self) -> int:
        """Number of basis functions K."""
        return self.zeta + len(self.interior_knots)

    @property
    def knot_vector(self) -> np.ndarray:
        """Clamped knot vector: ``zeta`` copies of each boundary."""
        return np.concatenate(
            [np.zeros(self.zeta), np.asarray(self.interior_knots), np.ones(self.zeta)]
        )

    @property
    def breakpoints(self) -> np.ndarray:
        return np.concatenate([[0.0], np.asarray(self.interior_knots), [1.0]])

    # -- evaluation ---------------------------------------------------------

    def _check_domain(self, x: np.ndarray) -> None:
        if x.size and (np.min(x) < 0.0 or np.max(x) > 1.0 or not np.all(np.isfinite(x))):
            raise ValueError("evaluation points must lie in [0, 1]")

    def eval_bspline(self, x) -> np.ndarray:
        """B-spline values at ``x`` via the Cox-de Boor recursion.

        Returns an array of shape ``x.shape + (K,)``; the values are
        nonnegative and sum to one at every point of [0, 1].
        """
        xs = np.asarray(x, dtype=np.float64)
        self._check_domain(xs)
        flat = xs.ravel()
        t = self.knot_vector
        n_level0 = len(t) - 1
        values = np.zeros((flat.size, n_level0))
        for i in range(n_level0):
            if t[i] < t[i + 1]:
                values[:, i] = (flat >= t[i]) & (flat < t[i + 1])
        # the right boundary belongs to the last nonempty interval
        last = max(i for i in range(n_level0) if t[i] < t[i + 1])
        values[flat == 1.0, last] = 1.0
        for degree in range(1, self.zeta):
            n_fun = n_level0 - degree
            nxt = np.zeros((flat.size, n_fun))
            for i in range(n_fun):
                left = t[i + degree] - t[i]
                if left > 0:
                    nxt[:, i] += (flat - t[i]) / left * values[:, i]
                right = t[i + degree + 1] - t[i + 1]
                if right > 0:
                    nxt[:, i] += (t[i + degree + 1] - flat) / right * values[:, i + 1]
            values = nxt
        return values[:, : self.size].reshape(xs.shape + (self.size,))

    def eval_truncated(self, x) -> np.ndarray:
        """Full truncated-power basis ``(1, x, ..., x^{zeta-1},
        (x - xi_2)_+^{zeta-1}, ...)``, shape ``x.shape + (K,)``."""
        xs = np.asarray(x, dtype=np.float64)
        reduced = self.eval_truncated_reduced(xs)
        ones = np.ones(xs.shape + (1,))
        return np.concatenate([ones, reduced], axis=-1)

    def eval_truncated_reduced(self, x) -> np.ndarray:
        """The K-1 non-constant truncated-power functions at ``x``.

        Shape ``x.shape + (K-1,)``.  For order 1 the monomial block is empty
        and the truncated terms degenerate to step functions.
        """
        xs = np.asarray(x, dtype=np.float64)
        self._check_domain(xs)
        flat = xs.ravel()
        cols = np.empty((flat.size, self.size - 1))
        power = None
        for m in range(1, self.zeta):
            power = flat if power is None else power * flat
            cols[:, m - 1] = power
        degree = self.zeta - 1
        for j, knot in enumerate(self.interior_knots):
            if degree == 0:
                cols[:, j] = flat >= knot
            else:
                # max() before powering avoids signed-zero surprises
                cols[:, self.zeta - 1 + j] = np.maximum(flat - knot, 0.0) ** degree
        return cols.reshape(xs.shape + (self.size - 1,))

    # -- integrals and Gram matrix ------------------------------------------

    def truncated_integrals(self) -> np.ndarray:
        """Exact integrals of the full truncated-power basis over [0, 1]."""
        out = np.empty(self.size)
        out[0] = 1.0
        for m in range(1, self.zeta):
            out[m] = 1.0 / (m + 1)
        for j, knot in enumerate(self.interior_knots):
            out[self.zeta + j] = (1.0 - knot) ** self.zeta / self.zeta
        return out

    def centered_data(self) -> CenteredBasisData:
        """Integrals plus the Gram matrix of the centered reduced basis.

        The Gram entries are integrals of piecewise polynomials of degree at
        most ``2*zeta - 2``, so Gauss-Legendre with ``zeta`` nodes per
        knot-delimited interval evaluates them exactly.
        """
        return _centered_data_cached(self)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "zeta": self.zeta,
            "interior_knots": list(self.interior_knots),
            "K": self.size,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SplineBasis":
        basis = cls(zeta=payload["zeta"], interior_knots=tuple(payload["interior_knots"]))
        if "K" in payload and payload["K"] != basis.size:
            raise ValueError(
                f"inconsistent basis payload: K={payload['K']} but "
                f"order {basis.zeta} with {len(basis.interior_knots)} knots gives {basis.size}"
            )
        return basis


@lru_cache(maxsize=128)
def _centered_data_cached(basis: SplineBasis) -> CenteredBasisData:
    integrals = basis.truncated_integrals()
    reduced = integrals[1:].copy()
    nodes, weights = np.polynomial.legendre.leggauss(basis.zeta)
    points = []
    scaled_weights = []
    bp = basis.breakpoints
    for a, b in zip(bp[:-1], bp[1:]):
        half = (b - a) / 2.0
        points.append(half * nodes + (a + b) / 2.0)
        scaled_weights.append(half * weights)
    x = np.concatenate(points)
    w = np.concatenate(scaled_weights)
    centered = basis.eval_truncated_reduced(x) - reduced
    gram = centered.T @ (centered * w[:, None])
    gram = (gram + gram.T) / 2.0
    return CenteredBasisData(integrals=integrals, reduced_integrals=reduced, gram=gram)


def default_knots(samples, n_basis: int = 7, zeta: int = 4) -> SplineBasis:
    """Basis with interior knots at equally spaced empirical quantiles of the
    pooled sample entries.

    Coinciding or boundary-touching quantiles are nudged by the smallest
    spacing that restores strict monotonicity inside (0, 1); samples without
    enough distinct values raise :class:`DegenerateDataError`.
    """
    if n_basis < zeta:
        raise ValueError("basis size K must be at least the spline order")
    values = np.asarray(samples, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot place knots from an empty sample")
    if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("sample entries must be finite and lie in [0, 1]")
    n_interior = n_basis - zeta
    if n_interior == 0:
        return SplineBasis(zeta=zeta, interior_knots=())
    levels = np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.quantile(values, levels)

    distinct = np.unique(values)
    gaps = np.diff(distinct)
    positive = gaps[gaps > 0]
    if positive.size == 0:
        raise DegenerateDataError("all sample values coincide; cannot place strict knots")
    step = min(float(positive.min()), 1.0) / (n_interior + 1)

    knots = np.clip(knots, step, 1.0 - step)
    for i in range(1, n_interior):  # forward pass: push ties up
        knots[i] = max(knots[i], knots[i - 1] + step)
    for i in range(n_interior - 2, -1, -1):  # backward pass: pull back inside
        knots[i] = min(knots[i], knots[i + 1] - step)
    if knots[0] < step / 2 or knots[-1] > 1.0 - step / 2 or np.any(np.diff(knots) <= 0):
        raise DegenerateDataError("too few distinct sample values to place strict knots")
    return SplineBasis(zeta=zeta, interior_knots=tuple(float(k) for k in knots))


def change_of_basis(basis: SplineBasis, grid_size: int = 400) -> np.ndarray:
    """Matrix Q with ``b(x) = Q @ b_trunc(x)``, fit by least squares on a
    fine grid; the two bases span the same space so the residual is zero up
    to conditioning."""
    x = np.linspace(0.0, 1.0, grid_size)
    bs = basis.eval_bspline(x)
    tr = basis.eval_truncated(x)
    q, *_ = np.linalg.lstsq(tr, bs, rcond=None)
    return q.T


DEFAULT_ORDER = 4
DEFAULT_BASIS_SIZE = 7
