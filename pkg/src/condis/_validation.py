"""Input validation helpers used throughout the package."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10
COND_LIMIT = 1e12


def as_matrix(a, name: str) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_square_matrix(a, name: str) -> np.ndarray:
    arr = as_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise ShapeMismatch(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_symmetric_psd(c: np.ndarray, name: str) -> np.ndarray:
    """Validate symmetry (1e-12) and positive semidefiniteness (eigmin >= -1e-10)."""
    c = as_square_matrix(c, name)
    if not np.allclose(c, c.T, atol=SYMMETRY_TOL, rtol=0.0):
        raise ValueError(f"{name} is not symmetric within {SYMMETRY_TOL}")
    eigmin = float(np.linalg.eigvalsh(c).min())
    if eigmin < -PSD_TOL:
        raise ValueError(f"{name} is not PSD (min eigenvalue {eigmin:.3e})")
    return c


def condition_number(c: np.ndarray) -> float:
    s = np.linalg.svd(c, compute_uv=False)
    if s[-1] == 0.0:
        return np.inf
    return float(s[0] / s[-1])


def as_rng(seed_or_rng) -> np.random.Generator:
    """Accept an int seed or an existing Generator; never touch global state."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)
