"""Penalized fitting by scale-adjusted block relaxation.

One outer iteration cycles: an elastic-net update of each factor matrix, a
sphere-constrained update of the spline-coefficient columns, the intercept,
and a rescaling step that balances the factor norms without changing the
squared loss.  Every block update is an exact minimizer given the others, so
the objective trace is nonincreasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset
from .model import BroadcastModel, flatten_samples
from .splines import DEFAULT_BASIS_SIZE, DEFAULT_ORDER, SplineBasis, default_knots
from .tensor_ops import CPFactors, cp_weights

# elementwise budget for one block of basis evaluations on the uncached path
_PHI_BLOCK_ELEMENTS = 1 << 24

INIT_RANDOM = "random"
INIT_SEQUENTIAL = "sequential_downsize"


@dataclass
class FitConfig:
    """Solver hyperparameters.

    ``epsilon`` bounds the relative objective decrease at which the outer
    loop stops; set ``absolute_epsilon`` for a literal absolute threshold.
    ``lambda1 == 0`` (or ``unpenalized``) solves the unconstrained problem:
    no penalty, no unit-norm coefficient columns, no rescaling step.
    """

    rank: int = 1
    lambda1: float = 0.0
    lambda2: float = 0.5
    n_basis: int = DEFAULT_BASIS_SIZE
    spline_order: int = DEFAULT_ORDER
    epsilon: float = 1e-6
    absolute_epsilon: bool = False
    max_iters: int = 500
    seed: int = 0
    init: str = INIT_SEQUENTIAL
    init_size_constant: float = 10.0
    init_ladder_steps: int = 3
    init_max_iters: int = 100
    init_replicates: int = 1
    unpenalized: bool = False
    cache_budget_bytes: int = 2_000_000_000

    def validate(self) -> None:
        if self.rank < 1 or int(self.rank) != self.rank:
            raise ValueError("rank must be a positive integer")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be nonnegative")
        if not 0.0 <= self.lambda2 <= 1.0:
            raise ValueError("lambda2 must lie in [0, 1]")
        if self.n_basis < self.spline_order:
            raise ValueError("n_basis must be at least the spline order")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1 or self.init_max_iters < 1:
            raise ValueError("iteration caps must be positive")
        if self.init not in (INIT_RANDOM, INIT_SEQUENTIAL):
            raise ValueError(f"unknown init plan {self.init!r}")
        if self.init_size_constant <= 0:
            raise ValueError("init_size_constant must be positive")
        if self.init_ladder_steps < 1:
            raise ValueError("init_ladder_steps must be positive")
        if self.init_replicates < 1:
            raise ValueError("init_replicates must be positive")
        if self.unpenalized and self.lambda1 > 0:
            raise ValueError("unpenalized mode requires lambda1 == 0")

    @property
    def effective_unpenalized(self) -> bool:
        return self.unpenalized or self.lambda1 == 0.0


@dataclass
class FitResult:
    model: BroadcastModel
    objective_trace: list[float]
    loss_trace: list[float]
    penalty_trace: list[float]
    converged: bool
    iterations: int


# ---------------------------------------------------------------------------
# Cached design structures
# ---------------------------------------------------------------------------

class _DesignContext:
    """Reduced-basis evaluations for one training set, cached when they fit
    the configured memory budget and recomputed blockwise otherwise."""

    def __init__(self, data: Dataset, basis: SplineBasis, budget_bytes: int):
        self.basis = basis
        self.dims = data.dims
        self.n = data.n
        self.s = int(np.prod(self.dims))
        self.km = basis.size - 1
        self.flat = flatten_samples(data.covariates)
        table_bytes = self.n * self.s * self.km * 8
        self.budget = int(budget_bytes)
        if 2 * table_bytes <= self.budget:
            self._set_phi(basis.eval_truncated_reduced(self.flat))
        else:
            self.phi = None
            self.phi_t = None
            self.collapse_budget = self.budget

    def _set_phi(self, phi: np.ndarray) -> None:
        self.phi = phi
        self.phi_t = np.ascontiguousarray(
            phi.transpose(0, 2, 1).reshape(self.n * self.km, self.s)
        )
        self.collapse_budget = max(self.budget - 2 * phi.nbytes, 0)

    @classmethod
    def from_features(cls, phi: np.ndarray, dims, basis: SplineBasis,
                      budget_bytes: int) -> "_DesignContext":
        """Context over precomputed (n, s, km) feature evaluations whose
        entry axis is in canonical order; used for pooled problems."""
        ctx = cls.__new__(cls)
        ctx.basis = basis
        ctx.dims = tuple(int(p) for p in dims)
        ctx.n, ctx.s, ctx.km = phi.shape
        ctx.flat = None
        ctx.budget = int(budget_bytes)
        ctx._set_phi(np.ascontiguousarray(phi))
        return ctx

    def _blocks(self):
        if self.phi is not None:
            yield slice(0, self.n), self.phi
            return
        block = max(1, _PHI_BLOCK_ELEMENTS // (self.s * self.km))
        for start in range(0, self.n, block):
            stop = min(start + block, self.n)
            yield slice(start, stop), self.basis.eval_truncated_reduced(self.flat[start:stop])

    def collapse(self, coeffs: np.ndarray) -> np.ndarray | None:
        """``phi`` contracted with the coefficient matrix, shape (n, s, R),
        or None when it exceeds the remaining budget."""
        rank = coeffs.shape[1]
        if self.phi is None or self.n * self.s * rank * 8 > self.collapse_budget:
            return None
        return (self.phi.reshape(self.n * self.s, self.km) @ coeffs).reshape(
            self.n, self.s, rank
        )

    def factor_design(self, coeffs, factors, skip, collapsed=None) -> np.ndarray:
        """Design block Z with ``Z[i, l, r]`` the inner product of sample i's
        basis tensor against every component's rank-one weight, holding mode
        ``skip`` free.  (The 1/s loss scaling is applied by the caller.)"""
        rank = coeffs.shape[1]
        if collapsed is not None:
            return _contract_other_modes(collapsed, self.dims, factors, skip)
        out = np.empty((self.n, self.dims[skip], rank))
        for rows, phi in self._blocks():
            c = phi.shape[0]
            coll = (phi.reshape(c * self.s, self.km) @ coeffs).reshape(c, self.s, rank)
            out[rows] = _contract_other_modes(coll, self.dims, factors, skip)
        return out

    def coeff_design(self, weights: np.ndarray) -> np.ndarray:
        """Per-component design for the coefficient block, shape (n, km, R):
        basis evaluations contracted with the CP entry weights."""
        rank = weights.shape[1]
        if self.phi_t is not None:
            return (self.phi_t @ weights).reshape(self.n, self.km, rank)
        out = np.empty((self.n, self.km, rank))
        for rows, phi in self._blocks():
            out[rows] = np.einsum("csk,sr->ckr", phi, weights, optimize=True)
        return out

    def predict_linear(self, entry_weights: np.ndarray) -> np.ndarray:
        """Inner products of each sample's basis tensor with per-entry
        coefficient weights of shape (s, km)."""
        if self.phi is not None:
            return self.phi.reshape(self.n, -1) @ entry_weights.ravel()
        out = np.empty(self.n)
        for rows, phi in self._blocks():
            out[rows] = phi.reshape(phi.shape[0], -1) @ entry_weights.ravel()
        return out


def _contract_other_modes(collapsed, dims, factors, skip):
    """Contract (n, s, R) against every factor column except mode ``skip``."""
    n, _, rank = collapsed.shape
    # the entry axis is in canonical (first index fastest) order
    arr = collapsed.reshape((n, *dims[::-1], rank))
    arr = arr.transpose((0, *range(len(dims), 0, -1), len(dims) + 1))
    for mode in range(len(dims) - 1, -1, -1):
        if mode == skip:
            continue
        moved = np.moveaxis(arr, 1 + mode, -2)
        arr = np.einsum("...lr,lr->...r", moved, factors[mode], optimize=True)
    return arr


# ---------------------------------------------------------------------------
# Block solvers
# ---------------------------------------------------------------------------

def soft_threshold(value: float, amount: float) -> float:
    if value > amount:
        return value - amount
    if value < -amount:
        return value + amount
    return 0.0


def _cd_sweeps(gram2, lin2, denom, threshold, v, gv, tol, max_sweeps):
    """Cyclic coordinate sweeps over the covariance-form elastic net."""
    for _ in range(max_sweeps):
        max_change = 0.0
        for j in range(v.size):
            current = lin2[j] - gv[j] + gram2[j, j] * v[j]
            if denom[j] > 0.0:
                if current > threshold:
                    new = (current - threshold) / denom[j]
                elif current < -threshold:
                    new = (current + threshold) / denom[j]
                else:
                    new = 0.0
            else:
                new = 0.0  # zero design column with no ridge: coefficient is set to 0
            change = new - v[j]
            if change != 0.0:
                gv += gram2[j] * change  # symmetric Gram: row j == column j
                v[j] = new
                max_change = max(max_change, abs(change))
        if max_change < tol:
            break
    return v


try:  # the jitted kernel is identical in arithmetic to the numpy loop
    from numba import njit

    _cd_sweeps_fast = njit(cache=True)(_cd_sweeps)
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _cd_sweeps_fast = _cd_sweeps


def elastic_net_coordinate_descent(design, target, start, lambda1, lambda2,
                                   tol: float = 1e-9, max_sweeps: int = 200) -> np.ndarray:
    """Exact coordinate-descent minimizer of
    ``||target - design @ v||^2 + lambda1 * sum(0.5*(1-lambda2)*v^2 + lambda2*|v|)``.

    Covariance-style updates: the Gram matrix is formed once per call since
    block designs change every outer iteration.  Columns are not
    standardized; penalties act on raw scales.
    """
    gram2 = np.ascontiguousarray(2.0 * (design.T @ design))
    lin2 = 2.0 * (design.T @ target)
    denom = np.diag(gram2).copy() + lambda1 * (1.0 - lambda2)
    threshold = lambda1 * lambda2
    v = np.asarray(start, dtype=np.float64).copy()
    gv = gram2 @ v
    return _cd_sweeps_fast(gram2, lin2, denom, threshold, v, gv, float(tol), int(max_sweeps))


def _linear_block_solve(design, target, ridge: float) -> np.ndarray:
    """Exact minimizer of ``||target - design v||^2 + (ridge/2)||v||^2``."""
    if ridge > 0.0:
        gram = 2.0 * (design.T @ design) + ridge * np.eye(design.shape[1])
        return np.linalg.solve(gram, 2.0 * (design.T @ target))
    return np.linalg.lstsq(design, target, rcond=None)[0]


def update_factor_block(raw_design, target, current, cfg: FitConfig, n_entries: int) -> np.ndarray:
    """New factor matrix minimizing the penalized loss over one mode.

    ``raw_design`` is the (n, p_d, R) block from :meth:`factor_design`; the
    effective regression design carries the model's 1/s scaling.
    """
    n, p, rank = raw_design.shape
    design = raw_design.reshape(n, p * rank) / n_entries
    start = current.reshape(p * rank)
    if cfg.lambda1 * cfg.lambda2 > 0.0:
        flat = elastic_net_coordinate_descent(design, target, start, cfg.lambda1, cfg.lambda2)
    else:
        flat = _linear_block_solve(design, target, cfg.lambda1 * (1.0 - cfg.lambda2))
    return flat.reshape(p, rank)


def sphere_constrained_lstsq(design, target, norm_tol: float = 1e-10,
                             max_iter: int = 200) -> tuple[np.ndarray, float]:
    """Global minimizer of ``||target - design @ a||`` subject to ``||a|| = 1``.

    Solves the stationarity system ``(M'M + mu I) a = M't`` for the unique
    ``mu >= -lambda_min`` with unit solution norm, via safeguarded Newton
    plus bisection on the secular equation.  Returns ``(a, mu)``.

    Degenerate right-hand sides fall back to the smallest-eigenvalue
    eigenvector, ties broken toward the first canonical direction.
    """
    design = np.asarray(design, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    gram = design.T @ design
    rhs = design.T @ target
    eigvals, eigvecs = np.linalg.eigh(gram)
    rotated = eigvecs.T @ rhs
    scale = max(1.0, float(eigvals[-1]), float(np.abs(rotated).max(initial=0.0)))
    lam0 = float(eigvals[0])
    min_space = eigvals - lam0 <= 1e-12 * scale

    if np.linalg.norm(rotated) <= 1e-14 * scale:
        return _smallest_eig_direction(eigvecs, min_space), -lam0

    if np.abs(rotated[min_space]).max(initial=0.0) <= 1e-13 * scale:
        core = rotated[~min_space] / (eigvals[~min_space] - lam0)
        core_norm_sq = float(core @ core)
        if core_norm_sq <= 1.0:
            # boundary multiplier: fill the remaining norm inside the
            # smallest-eigenvalue eigenspace
            alpha = eigvecs[:, ~min_space] @ core
            alpha += math.sqrt(max(0.0, 1.0 - core_norm_sq)) * _smallest_eig_direction(
                eigvecs, min_space
            )
            return alpha, -lam0

    def norm_sq(mu):
        return float(np.sum((rotated / (eigvals + mu)) ** 2))

    hi = float(np.linalg.norm(rotated)) - lam0
    delta = 1e-14 * scale
    lo = -lam0 + delta
    for _ in range(60):
        if norm_sq(lo) >= 1.0 or delta < 1e-300:
            break
        delta /= 16.0
        lo = -lam0 + delta
    mu = 0.5 * (lo + max(hi, lo))
    hi = max(hi, lo)
    for _ in range(max_iter):
        f = norm_sq(mu)
        norm = math.sqrt(f)
        if abs(norm - 1.0) <= norm_tol:
            break
        if norm > 1.0:
            lo = mu
        else:
            hi = mu
        derivative = float(np.sum(rotated**2 / (eigvals + mu) ** 3)) / (f * norm)
        step = (1.0 / norm - 1.0) / derivative if derivative > 0 else 0.0
        candidate = mu - step
        mu = candidate if lo < candidate < hi else 0.5 * (lo + hi)
    alpha = eigvecs @ (rotated / (eigvals + mu))
    return alpha, mu


def _smallest_eig_direction(eigvecs, min_space_mask) -> np.ndarray:
    basis = eigvecs[:, min_space_mask]
    for i in range(eigvecs.shape[0]):  # first canonical direction with mass
        projection = basis @ basis[i, :]
        norm = float(np.linalg.norm(projection))
        if norm > 1e-9:
            return projection / norm
    return basis[:, 0]


def update_coeff_block(coeff_design, target, coeffs, unpenalized: bool,
                       tol: float = 1e-8, max_passes: int = 30):
    """New coefficient matrix plus per-component fitted contributions.

    Penalized mode cycles over components, each solved exactly on the unit
    sphere, repeating the cycle until the block stabilizes (the block update
    is an argmin over the whole matrix); unpenalized mode is one joint
    least-squares solve.
    """
    n, km, rank = coeff_design.shape
    if unpenalized:
        flat = np.linalg.lstsq(coeff_design.reshape(n, km * rank), target, rcond=None)[0]
        new = flat.reshape(km, rank)
        contributions = np.einsum("nkr,kr->nr", coeff_design, new)
        return new, contributions
    new = coeffs.copy()
    contributions = np.einsum("nkr,kr->nr", coeff_design, new)
    for _ in range(max_passes):
        max_change = 0.0
        for r in range(rank):
            partial = target - contributions.sum(axis=1) + contributions[:, r]
            alpha, _ = sphere_constrained_lstsq(coeff_design[:, :, r], partial)
            max_change = max(max_change, float(np.abs(alpha - new[:, r]).max()))
            new[:, r] = alpha
            contributions[:, r] = coeff_design[:, :, r] @ alpha
        if max_change < tol:
            break
    return new, contributions


# ---------------------------------------------------------------------------
# Rescaling (the scale-adjustment step)
# ---------------------------------------------------------------------------

def rescale_factors(factors, lambda2: float):
    """Optimal per-component column scalings with unit product over active
    modes; modes with a zero column are pinned at 1.

    Returns ``(scaled factors, rho)`` with ``rho[r, d]`` the applied scale.
    """
    n_modes = len(factors)
    rank = factors[0].shape[1]
    rho = np.ones((rank, n_modes))
    for r in range(rank):
        columns = [f[:, r] for f in factors]
        l1 = np.array([float(np.abs(c).sum()) for c in columns])
        l2sq = np.array([float(c @ c) for c in columns])
        active = np.flatnonzero(l2sq > 0.0)
        if active.size <= 1:
            continue
        if lambda2 >= 1.0:
            logs = np.log(l1[active])
            t = logs.mean() - logs
        elif lambda2 <= 0.0:
            logs = 0.5 * np.log(l2sq[active])
            t = logs.mean() - logs
        else:
            t = _rescale_newton(l2sq[active], l1[active], lambda2)
        t = t - t.mean()  # unit product, enforced in log space
        rho[r, active] = np.exp(t)
    scaled = [f * rho[:, d] for d, f in enumerate(factors)]
    return scaled, rho


def rescale_objective(factors, lambda2: float) -> float:
    """Penalty value balanced by the rescaling step (lambda1 factored out)."""
    total = 0.0
    for f in factors:
        total += 0.5 * (1.0 - lambda2) * float(np.sum(f * f))
        total += lambda2 * float(np.abs(f).sum())
    return total


def _rescale_newton(sq_norms, abs_norms, lambda2, tol: float = 1e-10,
                    max_iter: int = 200) -> np.ndarray:
    """Newton iteration on the log-scale stationarity system of the convex
    balancing problem; converges when the KKT residual norm drops below tol."""
    t = np.zeros(sq_norms.size)

    def penalty_gradient(tv):
        e = np.exp(tv)
        return (1.0 - lambda2) * sq_norms * e * e + lambda2 * abs_norms * e

    mu = float(np.mean(penalty_gradient(t)))
    residual = penalty_gradient(t) - mu
    gnorm = math.hypot(float(np.linalg.norm(residual)), float(t.sum()))
    for _ in range(max_iter):
        if gnorm < tol:
            break
        e = np.exp(t)
        curvature = 2.0 * (1.0 - lambda2) * sq_norms * e * e + lambda2 * abs_norms * e
        inv = 1.0 / curvature
        t_sum = float(t.sum())
        d_mu = (float(residual @ inv) - t_sum) / float(inv.sum())
        d_t = (d_mu - residual) * inv
        step = 1.0
        for _ in range(60):
            t_new = t + step * d_t
            mu_new = mu + step * d_mu
            residual_new = penalty_gradient(t_new) - mu_new
            gnorm_new = math.hypot(float(np.linalg.norm(residual_new)), float(t_new.sum()))
            if gnorm_new < gnorm or step < 1e-12:
                break
            step *= 0.5
        t, mu, residual, gnorm = t_new, mu_new, residual_new, gnorm_new
    return t


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def plan_downsize_ladder(dims, n, rank, size_constant, ladder_steps) -> list[tuple[int, ...]]:
    """Problem sizes for the sequential down-sizing initialization.

    With shrinkage ``n / (C * R * sum(dims))`` at most one, the sample is
    used at the original size; otherwise an arithmetic ladder of sizes
    strictly between C and each p_d is returned, smallest first.
    """
    shrinkage = n / (size_constant * rank * sum(dims))
    if shrinkage <= 1.0:
        return [tuple(dims)]
    rungs = []
    for step in range(1, ladder_steps + 1):
        frac = step / (ladder_steps + 1)
        rung = tuple(
            p if p <= size_constant else max(1, min(p, int(round(size_constant + frac * (p - size_constant)))))
            for p in dims
        )
        if not rungs or rung != rungs[-1]:
            rungs.append(rung)
    return rungs


def _partition_edges(p_full: int, p_small: int) -> np.ndarray:
    return np.array([(i * p_full) // p_small for i in range(p_small + 1)], dtype=np.int64)


def pool_covariates(covariates: np.ndarray, small_dims) -> np.ndarray:
    """Block-average each mode of a sample stack down to ``small_dims``."""
    arr = np.asarray(covariates, dtype=np.float64)
    for axis, (p, q) in enumerate(zip(arr.shape[1:], small_dims), start=1):
        if p == q:
            continue
        if q > p:
            raise ValueError("pooled size cannot exceed the original size")
        edges = _partition_edges(p, q)
        counts = np.diff(edges).astype(np.float64)
        arr = np.add.reduceat(arr, edges[:-1], axis=axis)
        shape = [1] * arr.ndim
        shape[axis] = q
        arr = arr / counts.reshape(shape)
    return arr


def upsize_factor(matrix: np.ndarray, p_new: int) -> np.ndarray:
    """Replicate rows of a pooled factor matrix back onto the finer grid."""
    p_old = matrix.shape[0]
    if p_new == p_old:
        return matrix.copy()
    counts = np.diff(_partition_edges(p_new, p_old))
    return np.repeat(matrix, counts, axis=0)


def _pool_entry_axis(phi: np.ndarray, dims, rung) -> np.ndarray:
    """Block-average the canonical entry axis of an (n, s, km) feature array
    down to the ``rung`` sizes, returning (n, s_small, km)."""
    n, _, km = phi.shape
    arr = phi.reshape((n, *dims[::-1], km))  # canonical axis: first mode fastest
    order = len(dims)
    for mode in range(order):
        p, q = dims[mode], rung[mode]
        if p == q:
            continue
        axis = 1 + (order - 1 - mode)
        edges = _partition_edges(p, q)
        counts = np.diff(edges).astype(np.float64)
        arr = np.add.reduceat(arr, edges[:-1], axis=axis)
        shape = [1] * arr.ndim
        shape[axis] = q
        arr = arr / counts.reshape(shape)
    return np.ascontiguousarray(arr.reshape(n, -1, km))


def _pooled_context(ctx: _DesignContext, rung, budget_bytes: int) -> _DesignContext:
    """Down-sized problem sharing the parent's responses: features are
    block-averaged per mode.  The model is linear in the features, so an
    up-sized factor set reproduces the pooled predictions (exactly so for
    evenly divisible blocks)."""
    if tuple(rung) == tuple(ctx.dims):
        return ctx
    small = int(np.prod(rung))
    pooled = np.zeros((ctx.n, small, ctx.km))
    for rows, phi in ctx._blocks():
        pooled[rows] = _pool_entry_axis(phi, ctx.dims, rung)
    return _DesignContext.from_features(pooled, rung, ctx.basis, budget_bytes)


def _random_start(rng, dims, cfg: FitConfig, basis: SplineBasis, intercept: float) -> BroadcastModel:
    factors = tuple(rng.standard_normal((p, cfg.rank)) for p in dims)
    coeffs = rng.standard_normal((basis.size - 1, cfg.rank))
    return BroadcastModel(intercept, CPFactors(factors, coeffs=coeffs), basis)


def _upsize_model(model: BroadcastModel, new_dims) -> BroadcastModel:
    factors = tuple(
        upsize_factor(f, p_new) for f, p_new in zip(model.factors.factors, new_dims)
    )
    return BroadcastModel(model.intercept, CPFactors(factors, coeffs=model.factors.coeffs), model.basis)


def normalize_coeff_columns(model: BroadcastModel) -> BroadcastModel:
    """Impose unit-norm coefficient columns, folding the norms into the
    first factor matrix so predictions are unchanged.  Zero columns are
    replaced by the first canonical direction."""
    coeffs = model.factors.coeffs.copy()
    factors = [f.copy() for f in model.factors.factors]
    for r in range(coeffs.shape[1]):
        norm = float(np.linalg.norm(coeffs[:, r]))
        if norm > 0.0:
            coeffs[:, r] /= norm
            factors[0][:, r] *= norm
        else:
            coeffs[0, r] = 1.0
    return BroadcastModel(model.intercept, CPFactors(tuple(factors), coeffs=coeffs), model.basis)


def initialize(data: Dataset, cfg: FitConfig, basis: SplineBasis) -> BroadcastModel:
    """Starting parameters: seeded random, or chained unpenalized fits on a
    sequence of block-averaged problems of increasing size."""
    cfg.validate()
    ctx = _DesignContext(data, basis, cfg.cache_budget_bytes)
    return _initialize_from_context(ctx, data.responses, cfg, basis)


def _balance_for_penalized(model: BroadcastModel, lambda2: float) -> BroadcastModel:
    """Rescale the starting point exactly as the algorithm's replacement step
    would: unit-norm coefficient columns, factor norms balanced."""
    model = normalize_coeff_columns(model)
    factors, _ = rescale_factors(list(model.factors.factors), lambda2)
    return BroadcastModel(model.intercept, CPFactors(tuple(factors), coeffs=model.factors.coeffs), model.basis)


def _initialize_from_context(ctx: _DesignContext, responses: np.ndarray,
                             cfg: FitConfig, basis: SplineBasis) -> BroadcastModel:
    rng = np.random.default_rng(cfg.seed)
    mean_response = float(np.mean(responses))
    if cfg.init == INIT_RANDOM:
        start = _random_start(rng, ctx.dims, cfg, basis, mean_response)
        return start if cfg.effective_unpenalized else _balance_for_penalized(start, cfg.lambda2)
    ladder = plan_downsize_ladder(
        ctx.dims, ctx.n, cfg.rank, cfg.init_size_constant, cfg.init_ladder_steps
    )
    inner_cfg = replace(
        cfg,
        lambda1=0.0,
        unpenalized=True,
        init=INIT_RANDOM,
        max_iters=cfg.init_max_iters,
    )
    model = None
    for rung in ladder:
        rung_ctx = _pooled_context(ctx, rung, cfg.cache_budget_bytes)
        if model is None:
            # several seeded replicates at the coarsest rung; keep the best fit
            best = None
            for _ in range(cfg.init_replicates):
                start = _random_start(rng, rung, cfg, basis, mean_response)
                candidate = _fit_core(rung_ctx, responses, inner_cfg, basis, start, None)
                if best is None or candidate.objective_trace[-1] < best.objective_trace[-1]:
                    best = candidate
            model = best.model
        else:
            start = _upsize_model(model, rung)
            model = _fit_core(rung_ctx, responses, inner_cfg, basis, start, None).model
    model = _upsize_model(model, ctx.dims)
    return model if cfg.effective_unpenalized else _balance_for_penalized(model, cfg.lambda2)


# ---------------------------------------------------------------------------
# The outer loop
# ---------------------------------------------------------------------------

def penalty_value(factors, lambda1: float, lambda2: float) -> float:
    if lambda1 == 0.0:
        return 0.0
    return lambda1 * rescale_objective(factors, lambda2)


def _validate_training_data(data: Dataset) -> None:
    if data.n < 2:
        raise ValueError("fitting requires at least two samples")
    X = data.covariates
    if not np.all(np.isfinite(X)) or X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("covariate entries must lie in [0, 1]")
    if not np.all(np.isfinite(data.responses)):
        raise ValueError("responses must be finite")


def fit(data: Dataset, cfg: FitConfig, basis: SplineBasis | None = None,
        start: BroadcastModel | None = None, progress=None) -> FitResult:
    """Run the block relaxation until the objective decrease falls below the
    threshold or ``max_iters`` is reached.

    ``start`` bypasses the initialization plan (used for warm starts along a
    penalty path); ``progress`` receives one dict per outer iteration with
    keys ``iter``, ``LG``, ``L`` and ``G``.
    """
    cfg.validate()
    _validate_training_data(data)
    if basis is None:
        basis = default_knots(data.covariates, cfg.n_basis, cfg.spline_order)
    ctx = _DesignContext(data, basis, cfg.cache_budget_bytes)
    if start is None:
        start = _initialize_from_context(ctx, data.responses, cfg, basis)
    return _fit_core(ctx, data.responses, cfg, basis, start, progress)


def _fit_core(ctx: _DesignContext, responses: np.ndarray, cfg: FitConfig,
              basis: SplineBasis, start: BroadcastModel, progress) -> FitResult:
    unpenalized = cfg.effective_unpenalized
    if start.dims != ctx.dims:
        raise ValueError(f"start dims {start.dims} do not match data dims {ctx.dims}")
    if start.rank != cfg.rank:
        raise ValueError(f"start rank {start.rank} does not match cfg.rank {cfg.rank}")
    if start.factors.coeffs.shape[0] != basis.size - 1:
        raise ValueError("start coefficients do not match the basis size")

    y = responses
    n_entries = ctx.s
    factors = [f.copy() for f in start.factors.factors]
    coeffs = start.factors.coeffs.copy()
    intercept = float(start.intercept)

    def linear_part():
        return ctx.predict_linear(cp_weights(factors) @ coeffs.T) / n_entries

    fitted = linear_part()
    loss = float(np.sum((y - intercept - fitted) ** 2))
    pen = penalty_value(factors, cfg.lambda1, cfg.lambda2)
    objective = loss + pen
    objective_trace = [objective]
    loss_trace = [loss]
    penalty_trace = [pen]

    converged = False
    iterations = 0
    for iteration in range(1, cfg.max_iters + 1):
        iterations = iteration
        target = y - intercept
        collapsed = ctx.collapse(coeffs)
        for d in range(len(ctx.dims)):
            raw = ctx.factor_design(coeffs, factors, d, collapsed=collapsed)
            factors[d] = update_factor_block(raw, target, factors[d], cfg, n_entries)
        design = ctx.coeff_design(cp_weights(factors)) / n_entries
        coeffs, contributions = update_coeff_block(design, target, coeffs, unpenalized)
        fitted = contributions.sum(axis=1)
        intercept = float(np.mean(y - fitted))
        if not unpenalized:
            factors, rho = rescale_factors(factors, cfg.lambda2)
            contributions = contributions * np.prod(rho, axis=1)
            fitted = contributions.sum(axis=1)
        loss = float(np.sum((y - intercept - fitted) ** 2))
        pen = penalty_value(factors, cfg.lambda1, cfg.lambda2)
        objective_prev = objective
        objective = loss + pen
        objective_trace.append(objective)
        loss_trace.append(loss)
        penalty_trace.append(pen)
        if progress is not None:
            progress({"iter": iteration, "LG": objective, "L": loss, "G": pen})
        threshold = cfg.epsilon if cfg.absolute_epsilon else cfg.epsilon * (1.0 + abs(objective_prev))
        if objective_prev - objective <= threshold:
            converged = True
            break

    model = BroadcastModel(intercept, CPFactors(tuple(factors), coeffs=coeffs), basis)
    return FitResult(
        model=model,
        objective_trace=objective_trace,
        loss_trace=loss_trace,
        penalty_trace=penalty_trace,
        converged=converged,
        iterations=iterations,
    )
