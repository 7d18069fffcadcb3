"""Paired tensor-covariate / scalar-response samples and their on-disk layout.

A dataset directory holds ``data.bin`` (the covariates as one order-(D+1)
tensor with the sample index as the trailing mode), ``y.csv`` (responses)
and ``meta.json`` (dims, sample count, seed, rescaling extrema).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_ops import read_tensor, write_tensor


@dataclass(frozen=True)
class Dataset:
    """n paired (tensor covariate, scalar response) samples sharing one
    dimension list; covariates have shape ``(n, *dims)``."""

    covariates: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=np.float64)
        y = np.asarray(self.responses, dtype=np.float64)
        if X.ndim < 2:
            raise ValueError("covariates must have shape (n, p_1, ..., p_D)")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError("responses must be a vector with one entry per sample")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "responses", y)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.covariates.shape[1:]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.covariates[idx], self.responses[idx])


def minmax_rescale(values, extrema: tuple[float, float] | None = None):
    """Affinely map ``values`` onto [0, 1].

    Without ``extrema`` the observed min/max are used and returned so they can
    be persisted and re-applied to test data.  Constant input maps to 0.5
    with a warning.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("covariate values must be finite")
    if extrema is None:
        lo, hi = float(v.min()), float(v.max())
    else:
        lo, hi = float(extrema[0]), float(extrema[1])
    if hi <= lo:
        warnings.warn("constant covariate values; mapping every entry to 0.5")
        return np.full_like(v, 0.5), (lo, hi)
    return (v - lo) / (hi - lo), (lo, hi)


def save_dataset(directory, data: Dataset, seed: int | None = None,
                 extrema: tuple[float, float] | None = None,
                 extra_meta: dict | None = None) -> list[Path]:
    """Write ``data.bin``, ``y.csv`` and ``meta.json``; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data_path = directory / "data.bin"
    write_tensor(data_path, np.moveaxis(data.covariates, 0, -1))
    y_path = directory / "y.csv"
    with open(y_path, "w") as fh:
        fh.write("y\n")
        for value in data.responses:
            fh.write(f"{float(value)!r}\n")
    meta = {
        "dims": list(data.dims),
        "n": data.n,
        "seed": seed,
        "extrema": None if extrema is None else [extrema[0], extrema[1]],
    }
    if extra_meta:
        meta.update(extra_meta)
    meta_path = directory / "meta.json"
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return [data_path, y_path, meta_path]


def load_dataset(directory) -> tuple[Dataset, dict]:
    directory = Path(directory)
    with open(directory / "meta.json") as fh:
        meta = json.load(fh)
    stacked = read_tensor(directory / "data.bin")
    dims = tuple(meta["dims"])
    n = int(meta["n"])
    if stacked.shape != dims + (n,):
        raise ValueError(
            f"{directory}: data.bin shape {stacked.shape} disagrees with meta {dims + (n,)}"
        )
    with open(directory / "y.csv") as fh:
        header = fh.readline()
        if header.strip() != "y":
            raise ValueError(f"{directory}: y.csv must start with a 'y' header line")
        responses = np.array([float(line) for line in fh if line.strip()])
    if responses.shape[0] != n:
        raise ValueError(f"{directory}: expected {n} responses, found {responses.shape[0]}")
    return Dataset(np.moveaxis(stacked, -1, 0), responses), meta
