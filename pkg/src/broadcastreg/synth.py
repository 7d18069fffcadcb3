"""Synthetic benchmark generators and the integrated squared error metric.

Four study designs on a (by default) 64 x 64 covariate: a linear effect on
an L-shaped rank-two region, one nonlinear effect on a staircase rank-four
region, a shared nonlinear effect on two separated rectangles, and two
different nonlinear effects on two separated rectangles.  Responses follow
the region formulas directly (no 1/s scaling) with Gaussian noise scaled to
a fraction of the signal's standard deviation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset


def f_linear(x):
    return np.asarray(x, dtype=np.float64)


def f_bump(x):
    """x plus a chirp-like bump: x + 0.6 sin(2 pi (x - 1/2)^2)."""
    x = np.asarray(x, dtype=np.float64)
    return x + 0.6 * np.sin(2.0 * np.pi * (x - 0.5) ** 2)


def f_wave(x):
    """x plus a cosine wave: x + 0.3 cos(2 pi x)."""
    x = np.asarray(x, dtype=np.float64)
    return x + 0.3 * np.cos(2.0 * np.pi * x)


FUNCTIONS = {"linear": f_linear, "f1": f_bump, "f2": f_wave}


@dataclass(frozen=True)
class GroundTruth:
    """The data-generating regression function: an intercept plus masked
    region sums of broadcast uni-dimensional functions."""

    intercept: float
    components: tuple[tuple[np.ndarray, str], ...]

    def __post_init__(self):
        comps = []
        for mask, name in self.components:
            mask = np.asarray(mask, dtype=np.float64)
            if name not in FUNCTIONS:
                raise ValueError(f"unknown function id {name!r}")
            comps.append((mask, name))
        object.__setattr__(self, "components", tuple(comps))

    @property
    def dims(self) -> tuple[int, ...]:
        return self.components[0][0].shape

    def evaluate(self, covariates: np.ndarray) -> np.ndarray:
        """Truth values for a batch of tensors of shape ``(n, *dims)``."""
        X = np.asarray(covariates, dtype=np.float64)
        single = X.shape == self.dims
        if single:
            X = X[None]
        order = len(self.dims)
        out = np.full(X.shape[0], self.intercept)
        for mask, name in self.components:
            out += np.tensordot(FUNCTIONS[name](X), mask, axes=order)
        return float(out[0]) if single else out

    # prediction-shaped alias so evaluators can treat truths and models alike
    def predict(self, covariates: np.ndarray, clamp: bool = False) -> np.ndarray:
        del clamp
        return self.evaluate(covariates)

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "components": [
                {"function": name, "mask": mask.astype(int).tolist()}
                for mask, name in self.components
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GroundTruth":
        return cls(
            intercept=float(payload["intercept"]),
            components=tuple(
                (np.asarray(c["mask"], dtype=np.float64), c["function"])
                for c in payload["components"]
            ),
        )


def save_truth(path, truth: GroundTruth) -> None:
    with open(path, "w") as fh:
        json.dump(truth.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_truth(path) -> GroundTruth:
    with open(path) as fh:
        return GroundTruth.from_dict(json.load(fh))


@dataclass(frozen=True)
class CaseSpec:
    """One synthetic study configuration."""

    case: int
    dims: tuple[int, ...] = (64, 64)
    n: int = 1000
    noise_ratio: float = 0.10
    seed: int = 0
    masks: tuple[np.ndarray, ...] | None = field(default=None)

    def __post_init__(self):
        if self.case not in (1, 2, 3, 4):
            raise ValueError("case id must be 1, 2, 3 or 4")
        if self.noise_ratio < 0:
            raise ValueError("noise_ratio must be nonnegative")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.masks is not None:
            masks = tuple(np.asarray(m, dtype=np.float64) for m in self.masks)
            expected = 2 if self.case == 4 else 1
            if len(masks) != expected:
                raise ValueError(f"case {self.case} takes {expected} mask(s)")
            for m in masks:
                if m.shape != tuple(self.dims):
                    raise ValueError("mask shape must match dims")
                if not np.all(np.isin(m, (0.0, 1.0))):
                    raise ValueError("masks must be binary")
            object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "dims", tuple(int(p) for p in self.dims))


def _rect(dims, row_span, col_span):
    mask = np.zeros(dims)
    r0, r1 = (int(round(f * dims[0])) for f in row_span)
    c0, c1 = (int(round(f * dims[1])) for f in col_span)
    mask[r0:r1, c0:c1] = 1.0
    return mask


def default_masks(case: int, dims=(64, 64)) -> tuple[np.ndarray, ...]:
    """Reference region geometries: an L-shaped rank-two region, a rank-four
    staircase, and two separated rank-one rectangles.  Override via
    :class:`CaseSpec` masks for other geometries."""
    if len(dims) != 2:
        raise ValueError("default masks are defined for order-2 covariates")
    if case == 1:
        vertical = _rect(dims, (1 / 8, 3 / 8), (1 / 8, 1 / 4))
        horizontal = _rect(dims, (3 / 8, 1 / 2), (1 / 8, 5 / 8))
        return (np.clip(vertical + horizontal, 0.0, 1.0),)
    if case == 2:
        # four distinct nested-width steps keep the matrix rank exactly 4
        # (for dims of roughly 32 and up); the wide base carries most of the
        # spectrum so moderate CP ranks already approximate the region well
        steps = [
            (1 / 8, 7 / 16, 1 / 8, 7 / 16),
            (7 / 16, 17 / 32, 1 / 8, 3 / 8),
            (17 / 32, 19 / 32, 1 / 8, 5 / 16),
            (19 / 32, 5 / 8, 1 / 8, 1 / 4),
        ]
        stair = np.zeros(dims)
        for r0, r1, c0, c1 in steps:
            stair += _rect(dims, (r0, r1), (c0, c1))
        return (np.clip(stair, 0.0, 1.0),)
    first = _rect(dims, (1 / 8, 3 / 8), (1 / 8, 3 / 8))
    second = _rect(dims, (5 / 8, 7 / 8), (5 / 8, 7 / 8))
    if case == 3:
        return (np.clip(first + second, 0.0, 1.0),)
    return first, second


def case_truth(spec: CaseSpec) -> GroundTruth:
    masks = spec.masks if spec.masks is not None else default_masks(spec.case, spec.dims)
    if spec.case == 1:
        components = ((masks[0], "linear"),)
    elif spec.case in (2, 3):
        components = ((masks[0], "f1"),)
    else:
        components = ((masks[0], "f1"), (masks[1], "f2"))
    return GroundTruth(intercept=1.0, components=components)


def generate_case(spec: CaseSpec) -> tuple[Dataset, GroundTruth]:
    """Draw ``n`` samples with uniform entries; noise is Gaussian with
    standard deviation ``noise_ratio`` times the empirical signal spread."""
    truth = case_truth(spec)
    cov_seed, noise_seed = np.random.SeedSequence(spec.seed).spawn(2)
    covariates = np.random.default_rng(cov_seed).uniform(size=(spec.n, *spec.dims))
    signal = truth.evaluate(covariates)
    sigma = spec.noise_ratio * float(np.std(signal))
    noise = np.random.default_rng(noise_seed).standard_normal(spec.n)
    return Dataset(covariates, signal + sigma * noise), truth


@dataclass(frozen=True)
class IseResult:
    estimate: float
    stderr: float
    mc_points: int


def ise(fitted, truth, mc_points: int = 10_000, seed: int = 0,
        dims=None, clamp: bool = False) -> IseResult:
    """Monte Carlo integrated squared error between two prediction rules
    over uniform covariates, with its standard error.

    Both arguments need a ``predict(batch)`` method (fitted models and
    ground truths qualify).
    """
    if mc_points < 1000:
        raise ValueError("mc_points must be at least 1000 for a stable estimate")
    if dims is None:
        dims = getattr(fitted, "dims", None) or truth.dims
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    remaining = mc_points
    batch = max(1, min(mc_points, (1 << 22) // int(np.prod(dims))))
    while remaining > 0:
        take = min(batch, remaining)
        X = rng.uniform(size=(take, *dims))
        diff_sq = (
            np.asarray(fitted.predict(X, clamp=clamp)) - np.asarray(truth.predict(X))
        ) ** 2
        total += float(diff_sq.sum())
        total_sq += float((diff_sq**2).sum())
        remaining -= take
    estimate = total / mc_points
    variance = max(total_sq - mc_points * estimate**2, 0.0) / max(mc_points - 1, 1)
    return IseResult(estimate=estimate, stderr=float(np.sqrt(variance / mc_points)), mc_points=mc_points)
