"""Small dense linear-algebra layer shared by the network, OPU and accountant code.

Everything is float64 numpy. The helpers validate shapes and finiteness so
that dimension bugs surface as errors here instead of as silent broadcasts
deeper in training code.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


def make_rng(seed: int) -> np.random.Generator:
    """Independent, reproducible random stream for ``seed`` (no global state)."""
    return np.random.Generator(np.random.PCG64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))


def as_vector(v, name: str = "v") -> np.ndarray:
    arr = np.asarray(v, dtype=DTYPE)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def as_matrix(a, name: str = "A") -> np.ndarray:
    arr = np.asarray(a, dtype=DTYPE)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return arr


def matmul(a, x) -> np.ndarray:
    """Matrix-vector product ``a @ x``."""
    a = as_matrix(a)
    x = as_vector(x, "x")
    if a.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: A is {a.shape}, x has length {x.shape[0]}")
    return _check_finite(a @ x, "matmul")


def hadamard(u, v) -> np.ndarray:
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    return _check_finite(u * v, "hadamard")


def outer(u, v) -> np.ndarray:
    return _check_finite(np.outer(as_vector(u, "u"), as_vector(v, "v")), "outer")


def gaussian(rng: np.random.Generator, length: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """``length`` i.i.d. normal samples drawn from ``rng``."""
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    if length < 0:
        raise ValueError(f"length must be non-negative, got {length}")
    if std == 0:
        return np.full(length, float(mean), dtype=DTYPE)
    return rng.normal(mean, std, size=length)


def l2_norm(v) -> float:
    return float(np.linalg.norm(as_vector(v)))


def cosine(u, v) -> float:
    """Cosine similarity; raises on a zero vector rather than returning 0."""
    u = np.asarray(u, dtype=DTYPE).ravel()
    v = np.asarray(v, dtype=DTYPE).ravel()
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroDivisionError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
