"""Validation-split model selection over (rank, lambda1, lambda2) grids.

Each (rank, lambda2) pair owns one lambda1 path: the smallest lambda1 is fit
from the configured initialization plan and every later value warm-starts
from its predecessor.  Paths are independent and may run in parallel;
results are reduced in deterministic cell order.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset
from .solver import FitConfig, FitResult, fit
from .splines import SplineBasis, default_knots

#: tuning grids used by the experiments: ranks 1..5, lambda2 in {0, 1/2, 1},
#: lambda1 on a 1-5 log ladder from 1e-2 to 1e3
DEFAULT_RANKS = (1, 2, 3, 4, 5)
DEFAULT_LAMBDA1S = (0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0)
DEFAULT_LAMBDA2S = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class GridSpec:
    ranks: tuple[int, ...] = DEFAULT_RANKS
    lambda1s: tuple[float, ...] = DEFAULT_LAMBDA1S
    lambda2s: tuple[float, ...] = DEFAULT_LAMBDA2S
    split_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not self.ranks or not self.lambda1s or not self.lambda2s:
            raise ValueError("tuning grids must be nonempty")
        if any(r < 1 for r in self.ranks):
            raise ValueError("ranks must be positive")
        if any(l <= 0 for l in self.lambda1s):
            raise ValueError("lambda1 grid values must be positive")
        if any(not 0.0 <= l <= 1.0 for l in self.lambda2s):
            raise ValueError("lambda2 grid values must lie in [0, 1]")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie strictly between 0 and 1")

    def lambda1_path(self) -> tuple[float, ...]:
        """Ascending, deduplicated lambda1 values."""
        return tuple(sorted(set(float(l) for l in self.lambda1s)))


@dataclass
class CellResult:
    rank: int
    lambda1: float
    lambda2: float
    validation_error: float
    iterations: int
    converged: bool
    fit: FitResult | None = field(default=None, repr=False)


def split_dataset(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffle split; the training part keeps
    ``floor(n * (1 - fraction))`` samples and validation the remainder."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("validation fraction must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(data.n)
    n_train = int(np.floor(data.n * (1.0 - fraction)))
    if n_train < 1 or n_train >= data.n:
        raise ValueError("split leaves an empty training or validation set")
    return data.subset(order[:n_train]), data.subset(order[n_train:])


def validation_error(model, valid: Dataset, clamp: bool = False) -> float:
    """Mean squared prediction error on a held-out set."""
    if valid.n == 0:
        raise ValueError("validation set is empty")
    predictions = model.predict(valid.covariates, clamp=clamp)
    return float(np.mean((valid.responses - predictions) ** 2))


def _run_path(args) -> list[CellResult]:
    rank, lambda2, lambda1s, cfg_base, train, valid, basis = args
    cells: list[CellResult] = []
    previous = None
    for lambda1 in lambda1s:
        cfg = replace(cfg_base, rank=rank, lambda1=lambda1, lambda2=lambda2, unpenalized=False)
        try:
            result = fit(train, cfg, basis=basis, start=previous)
            error = validation_error(result.model, valid)
            cells.append(
                CellResult(rank, lambda1, lambda2, error, result.iterations, result.converged, result)
            )
            previous = result.model
        except (ValueError, np.linalg.LinAlgError):
            # a failed cell is recorded, not fatal; the next cell restarts cold
            cells.append(CellResult(rank, lambda1, lambda2, float("inf"), 0, False))
            previous = None
    return cells


def grid_search(data: Dataset, grid: GridSpec, cfg_base: FitConfig,
                workers: int = 1) -> tuple[FitResult, list[CellResult]]:
    """Fit every grid cell and return the best fit plus the full table.

    Ties on validation error prefer smaller rank, then larger lambda1, then
    larger lambda2.
    """
    train, valid = split_dataset(data, grid.split_fraction, grid.seed)
    basis = default_knots(train.covariates, cfg_base.n_basis, cfg_base.spline_order)
    lambda1s = grid.lambda1_path()
    jobs = [
        (rank, lambda2, lambda1s, cfg_base, train, valid, basis)
        for rank in grid.ranks
        for lambda2 in grid.lambda2s
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_path = list(pool.map(_run_path, jobs))
    else:
        per_path = [_run_path(job) for job in jobs]
    table = [cell for path in per_path for cell in path]
    best = min(
        table,
        key=lambda c: (c.validation_error, c.rank, -c.lambda1, -c.lambda2),
    )
    if best.fit is None:
        raise RuntimeError("every tuning cell failed")
    return best.fit, table


def write_tuning_table(path, table: list[CellResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["R", "lambda1", "lambda2", "validation_error", "iterations", "converged"])
        for cell in table:
            writer.writerow(
                [
                    cell.rank,
                    repr(float(cell.lambda1)),
                    repr(float(cell.lambda2)),
                    repr(float(cell.validation_error)),
                    cell.iterations,
                    cell.converged,
                ]
            )
