"""Client-local dimensionality reduction and shared anchor data.

Each client fits its own reducer (standardization followed by PCA) on
its private training rows and applies it to both its raw data and the
shared anchor data.  The reducer never leaves the client; only the
reduced representations do.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Reducer", "AnchorData", "fit_reducer", "apply_reducer", "generate_anchor", "anchor_to_csv"]

STD_FLOOR = 1e-12
_RANK_RTOL = 1e-12


@dataclass(frozen=True)
class Reducer:
    """Standardize-then-project transform fitted on one client's train set.

    ``projection`` columns are orthonormal principal directions of the
    standardized training data, in decreasing explained-variance order.
    """

    feature_means: np.ndarray
    feature_stds: np.ndarray
    projection: np.ndarray
    out_dim: int

    def __post_init__(self):
        m = self.feature_means.shape[0]
        if self.projection.shape != (m, self.out_dim):
            raise ValueError("projection shape inconsistent with out_dim")
        if not 0 < self.out_dim < m:
            raise ValueError("out_dim must satisfy 0 < out_dim < n_features")
        gram = self.projection.T @ self.projection
        if not np.allclose(gram, np.eye(self.out_dim), atol=1e-8):
            raise ValueError("projection columns are not orthonormal")

    @property
    def in_dim(self) -> int:
        return self.feature_means.shape[0]


@dataclass(frozen=True)
class AnchorData:
    """Shared pseudo-data every client reduces with its own transform."""

    rows: np.ndarray
    seed: int

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ValueError("anchor rows must form a nonempty 2-D matrix")

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]


def _fix_signs(vt: np.ndarray) -> np.ndarray:
    """Flip each row of Vt so its largest-magnitude entry is positive
    (argmax already resolves ties toward the lowest index)."""
    flips = np.where(vt[np.arange(vt.shape[0]), np.argmax(np.abs(vt), axis=1)] < 0, -1.0, 1.0)
    return vt * flips[:, None]


def fit_reducer(train_features: np.ndarray, target_dim: int) -> Reducer:
    """Fit standardization + PCA on a client's training rows.

    The output dimension is ``min(target_dim, rank)`` where rank is the
    numerical rank of the standardized (hence centered) matrix, so tiny
    shards degrade gracefully instead of producing spurious directions.
    """
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least 2 rows")
    m = x.shape[1]
    if not 0 < target_dim < m:
        raise ValueError(f"target_dim must lie in (0, {m}), got {target_dim}")

    means = x.mean(axis=0)
    stds = np.maximum(x.std(axis=0), STD_FLOOR)
    z = (x - means) / stds
    _, sigma, vt = np.linalg.svd(z, full_matrices=False)
    if sigma.size == 0 or sigma[0] <= 0.0:
        raise ValueError("degenerate input: all rows identical")
    rank = int(np.count_nonzero(sigma > _RANK_RTOL * sigma[0]))
    out_dim = min(target_dim, rank)
    vt = _fix_signs(vt[:out_dim])
    return Reducer(feature_means=means, feature_stds=stds, projection=vt.T.copy(), out_dim=out_dim)


def apply_reducer(reducer: Reducer, features: np.ndarray) -> np.ndarray:
    """Standardize with the fitted statistics and project."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != reducer.in_dim:
        raise ValueError(f"expected {reducer.in_dim} columns, got shape {x.shape}")
    return ((x - reducer.feature_means) / reducer.feature_stds) @ reducer.projection


def generate_anchor(
    feature_bounds: tuple[np.ndarray, np.ndarray], r: int, seed: int
) -> AnchorData:
    """Draw ``r`` pseudo-rows i.i.d. uniform within per-feature bounds.

    The same AnchorData value is handed to every client in a run; the
    bounds come from the full dataset, which is a simulation shortcut
    (a real deployment would publish agreed-on bounds instead).
    """
    lo = np.asarray(feature_bounds[0], dtype=np.float64)
    hi = np.asarray(feature_bounds[1], dtype=np.float64)
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ValueError("bounds must be two vectors of equal length")
    if np.any(lo > hi):
        raise ValueError("inverted bounds: min exceeds max")
    if r < 1:
        raise ValueError("anchor size r must be >= 1")
    rng = np.random.default_rng(seed)
    rows = lo + rng.random((r, lo.shape[0])) * (hi - lo)
    return AnchorData(rows=rows, seed=seed)


def anchor_to_csv(anchor: AnchorData, path) -> None:
    """Dump anchor rows for audit."""
    header = ",".join(f"f{j}" for j in range(anchor.rows.shape[1]))
    np.savetxt(path, anchor.rows, delimiter=",", header=header, comments="")
