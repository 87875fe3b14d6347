"""Small input-validation helpers shared by the public API."""

import numpy as np


def as_vector(x, dim=None, name="vector"):
    """Return ``x`` as a finite 1-D float array, optionally of length ``dim``."""
    arr = np.asarray(x, dtype=float).reshape(-1)
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} must have length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_matrix(m, shape=None, name="matrix"):
    """Return ``m`` as a finite 2-D float array, optionally with a fixed shape."""
    arr = np.atleast_2d(np.asarray(m, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_design_matrix(m, dim, name="matrix"):
    """Accept a scalar, a diagonal vector or a full matrix and return a dim x dim array."""
    arr = np.asarray(m, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(dim)
    elif arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"{name} diagonal must have length {dim}")
        arr = np.diag(arr)
    return as_matrix(arr, (dim, dim), name)


def check_spd(m, name="matrix", tol=0.0):
    """Validate that ``m`` is symmetric positive definite and return it."""
    m = as_matrix(m, name=name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > 1e-10 * scale:
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m).min() <= tol:
        raise ValueError(f"{name} must be positive definite")
    return m


def as_sequence(seq, dim, name="sequence"):
    """Return a (steps, dim) float array; ``None`` entries are not allowed."""
    arr = np.asarray(seq, dtype=float)
    if arr.size == 0:
        return np.zeros((0, dim))
    if arr.ndim == 1:
        arr = arr.reshape(-1, dim) if dim > 0 else arr.reshape(-1, 0)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} must have shape (steps, {dim}), got {arr.shape}")
    return arr


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value
