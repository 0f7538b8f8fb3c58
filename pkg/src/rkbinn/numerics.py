"""Dense float64 helpers shared across the package.

Vectors and matrices are plain ``numpy.ndarray`` objects (float64,
C-ordered). Randomness goes through :func:`make_rng`, which derives
independent PCG64 streams from one integer seed plus a text label.
"""

from __future__ import annotations

import zlib

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes do not line up."""


class RankDeficientError(np.linalg.LinAlgError):
    """Raised by an unregularized least-squares solve on a rank-deficient design."""


def as_vector(v, dim: int | None = None, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} must have dim {dim}, got {arr.shape[0]}")
    return arr


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matvec(m, v) -> np.ndarray:
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise DimensionError(f"cannot multiply {m.shape} matrix by vector of dim {v.shape[0]}")
    return m @ v


def ridge_least_squares(a, b, lam: float = 0.0) -> np.ndarray:
    """Minimize ``||a X - b||^2 + lam ||X||^2`` over X.

    Solved through an augmented least-squares problem (SVD based) rather
    than the normal equations, which square the condition number; this
    matters for polynomial dictionaries on unnormalized states.
    """
    a = as_matrix(a, "a")
    b = np.asarray(b, dtype=np.float64)
    squeeze = b.ndim == 1
    if squeeze:
        b = b[:, None]
    b = as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"row mismatch: a has {a.shape[0]}, b has {b.shape[0]}")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    n = a.shape[1]
    if lam == 0.0:
        rank = np.linalg.matrix_rank(a)
        if rank < n:
            raise RankDeficientError(
                f"design has rank {rank} < {n} columns; use lam > 0")
        x = np.linalg.lstsq(a, b, rcond=None)[0]
    else:
        aug_a = np.vstack([a, np.sqrt(lam) * np.eye(n)])
        aug_b = np.vstack([b, np.zeros((n, b.shape[1]))])
        x = np.linalg.lstsq(aug_a, aug_b, rcond=None)[0]
    return x[:, 0] if squeeze else x


def standardize_stats(data) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and population std; zero std is replaced by 1."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.size == 0 or arr.shape[0] == 0:
        raise ValueError("standardize_stats needs at least one vector")
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    std[std == 0.0] = 1.0
    return mean, std


def make_rng(seed: int, label: str = "") -> np.random.Generator:
    """Deterministic PCG64 generator for ``(seed, label)``.

    The label is folded in with CRC32 so that e.g. ``"data"``, ``"init"``
    and ``"shuffle"`` streams of the same run never overlap, and the
    mapping is identical on every platform and Python build.
    """
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode())])
    return np.random.Generator(np.random.PCG64(seq))


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")
    return arr
