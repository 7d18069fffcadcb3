"""Dense tensor primitives: matricization, Khatri-Rao products, CP composition.

Tensors are plain numpy arrays.  The canonical linear order of a tensor's
entries is Fortran-style (first index fastest), so ``ravel(order="F")``
matches the on-disk layout and mode-0 matricization is a plain reshape.
All operations are pure functions; nothing here mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: magic prefix of the binary tensor file format
TENSOR_MAGIC = b"BTENSOR1"


@dataclass(frozen=True)
class CPFactors:
    """A CP parameter set: one factor matrix per tensor mode, plus an
    optional coefficient matrix treated as a trailing mode.

    Parameters
    ----------
    factors : tuple of ndarray
        The d-th entry has shape ``(p_d, R)``; all share the column count R.
    coeffs : ndarray or None
        Optional ``(K-1, R)`` matrix of per-component basis coefficients.
    """

    factors: tuple[np.ndarray, ...]
    coeffs: np.ndarray | None = field(default=None)

    def __post_init__(self):
        factors = tuple(np.asarray(f, dtype=np.float64) for f in self.factors)
        object.__setattr__(self, "factors", factors)
        if not factors:
            raise ValueError("CPFactors needs at least one factor matrix")
        rank = factors[0].shape[1] if factors[0].ndim == 2 else -1
        for f in factors:
            if f.ndim != 2 or f.shape[1] != rank or rank < 1:
                raise ValueError("factor matrices must be 2-D with a shared column count >= 1")
        if self.coeffs is not None:
            coeffs = np.asarray(self.coeffs, dtype=np.float64)
            if coeffs.ndim != 2 or coeffs.shape[1] != rank:
                raise ValueError("coeffs must be 2-D with the same column count as the factors")
            object.__setattr__(self, "coeffs", coeffs)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    def all_matrices(self) -> list[np.ndarray]:
        """Factor matrices followed by the coefficient matrix, if any."""
        mats = list(self.factors)
        if self.coeffs is not None:
            mats.append(self.coeffs)
        return mats


def mode_matricize(tensor: np.ndarray, mode: int) -> np.ndarray:
    """Unfold ``tensor`` into a matrix whose rows index ``mode`` (0-based).

    Column j enumerates the remaining indices in ascending mode order with
    the lowest remaining mode varying fastest.  The map is a bijection on
    entries; :func:`fold_matricized` inverts it.
    """
    t = np.asarray(tensor)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for an order-{t.ndim} tensor")
    return np.reshape(np.moveaxis(t, mode, 0), (t.shape[mode], -1), order="F")


def fold_matricized(mat: np.ndarray, mode: int, dims: tuple[int, ...]) -> np.ndarray:
    """Inverse of :func:`mode_matricize` for a tensor of shape ``dims``."""
    dims = tuple(int(p) for p in dims)
    if not 0 <= mode < len(dims):
        raise ValueError(f"mode {mode} out of range for an order-{len(dims)} tensor")
    mat = np.asarray(mat)
    rest = tuple(p for k, p in enumerate(dims) if k != mode)
    t = np.reshape(mat, (dims[mode],) + rest, order="F")
    return np.moveaxis(t, 0, mode)


def khatri_rao(mats: list[np.ndarray]) -> np.ndarray:
    """Columnwise Kronecker product with the first matrix varying slowest.

    Column r of the result is ``kron(mats[0][:, r], ..., mats[-1][:, r])``,
    so for matrices listed in descending mode order the row index of the
    output enumerates the modes with the lowest one fastest, matching the
    canonical linear order used by :func:`mode_matricize`.
    """
    if not mats:
        raise ValueError("khatri_rao needs at least one matrix")
    arrs = [np.asarray(m, dtype=np.float64) for m in mats]
    rank = arrs[0].shape[1] if arrs[0].ndim == 2 else -1
    for m in arrs:
        if m.ndim != 2 or m.shape[1] != rank:
            raise ValueError("all matrices must be 2-D with equal column counts")
    out = arrs[0]
    for m in arrs[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, rank)
    return out


def cp_weights(factors: list[np.ndarray] | tuple[np.ndarray, ...]) -> np.ndarray:
    """Entrywise CP weights ``w[j, r] = prod_d factors[d][j_d, r]`` with rows
    in canonical linear order, shape ``(prod p_d, R)``."""
    return khatri_rao(list(factors)[::-1])


def cp_compose(fs: CPFactors) -> np.ndarray:
    """Materialize the dense tensor ``sum_r f_1[:, r] ∘ ... ∘ f_D[:, r]``
    (with the coefficient matrix as a trailing mode when present).

    Intended for tests and small problems; the solver works with the
    factored form and never materializes this at full scale.
    """
    mats = fs.all_matrices()
    dims = tuple(m.shape[0] for m in mats)
    if len(mats) == 1:
        return mats[0].sum(axis=1)
    unf = mats[0] @ khatri_rao(mats[1:][::-1]).T
    return fold_matricized(unf, 0, dims)


def inner_product(a: np.ndarray, b: np.ndarray) -> float:
    """Componentwise inner product of two same-shaped tensors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.tensordot(a, b, axes=a.ndim))


def flatten_canonical(tensor: np.ndarray) -> np.ndarray:
    """Entries of ``tensor`` in the canonical (first index fastest) order."""
    return np.asarray(tensor).ravel(order="F")


def unflatten_canonical(values: np.ndarray, dims: tuple[int, ...]) -> np.ndarray:
    """Inverse of :func:`flatten_canonical`."""
    values = np.asarray(values)
    dims = tuple(int(p) for p in dims)
    if values.size != int(np.prod(dims)):
        raise ValueError("value count does not match the dimension list")
    return values.reshape(dims, order="F")


def write_tensor(path, tensor: np.ndarray) -> None:
    """Write a tensor in the binary format: little-endian magic, order D,
    dims as 64-bit unsigned, then float64 values in canonical order."""
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim == 0:
        raise ValueError("cannot serialize a 0-order tensor")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(np.array([t.ndim, *t.shape], dtype="<u8").tobytes())
        fh.write(flatten_canonical(t).astype("<f8").tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a tensor written by :func:`write_tensor`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(TENSOR_MAGIC))
        if magic != TENSOR_MAGIC:
            raise ValueError(f"{path}: not a tensor file (bad magic)")
        order = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        if order < 1 or order > 64:
            raise ValueError(f"{path}: implausible tensor order {order}")
        dims = tuple(int(p) for p in np.frombuffer(fh.read(8 * order), dtype="<u8"))
        if any(p < 1 for p in dims):
            raise ValueError(f"{path}: nonpositive dimension in {dims}")
        size = int(np.prod(dims))
        values = np.frombuffer(fh.read(8 * size), dtype="<f8")
        if values.size != size:
            raise ValueError(f"{path}: truncated tensor payload")
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after tensor payload")
    return unflatten_canonical(values.astype(np.float64), dims)


def read_matrix_csv(path) -> np.ndarray:
    """Import an order-2 tensor from a CSV file of numeric rows."""
    mat = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    return mat
