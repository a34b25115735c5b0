"""Alignment of client-specific representations into a common space.

Given each member client's reduced anchor matrix, the analyst computes
a truncated SVD of their column-wise concatenation; the leading left
singular vectors form the common representation, and each client's
mapping is the pseudoinverse of its anchor matrix times that basis.
Applying the mappings to the clients' reduced data rows and stacking
gives one integrated training matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "AlignmentResult",
    "truncated_svd",
    "pseudoinverse",
    "compute_mappings",
    "integrate",
    "alignment_objective",
    "save_alignment",
    "load_alignment",
]

PINV_RTOL = 1e-10


@dataclass(frozen=True)
class AlignmentResult:
    """Common representation and per-member mapping matrices."""

    common_rep: np.ndarray
    mappings: tuple[np.ndarray, ...]
    integrated_dim: int
    singular_values: np.ndarray

    def __post_init__(self):
        z = self.common_rep
        if z.shape[1] != self.integrated_dim:
            raise ValueError("common_rep width must equal integrated_dim")
        if not np.allclose(z.T @ z, np.eye(self.integrated_dim), atol=1e-8):
            raise ValueError("common_rep columns are not orthonormal")
        for g in self.mappings:
            if g.shape[1] != self.integrated_dim:
                raise ValueError("every mapping must have integrated_dim columns")


def truncated_svd(
    matrix: np.ndarray, rel_cutoff: float, *, mode: str = "relative"
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD keeping components whose singular value clears the cutoff.

    In ``relative`` mode (the default) the threshold is
    ``rel_cutoff * sigma_max``; ``absolute`` compares singular values to
    the cutoff directly.  Returns ``(U, sigma, V)`` with V holding right
    singular vectors as columns, and a deterministic sign convention:
    each U column's largest-magnitude entry is positive.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if mode not in ("relative", "absolute"):
        raise ValueError(f"unknown cutoff mode {mode!r}")
    if mode == "relative" and not 0.0 < rel_cutoff < 1.0:
        raise ValueError("relative cutoff must lie in (0, 1)")
    if mode == "absolute" and rel_cutoff <= 0.0:
        raise ValueError("absolute cutoff must be positive")
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    if sigma.size == 0 or sigma[0] <= 0.0:
        raise ValueError("cannot decompose an all-zero matrix")
    threshold = rel_cutoff * sigma[0] if mode == "relative" else rel_cutoff
    k = int(np.count_nonzero(sigma >= threshold))
    if k == 0:
        raise ValueError("cutoff removed every component")
    u, sigma, vt = u[:, :k], sigma[:k], vt[:k]
    idx = np.argmax(np.abs(u), axis=0)
    flips = np.where(u[idx, np.arange(k)] < 0, -1.0, 1.0)
    return u * flips, sigma, (vt * flips[:, None]).T


def pseudoinverse(matrix: np.ndarray, tol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below ``tol * sigma_max`` are treated as zero; an
    all-zero matrix maps to its zero transpose.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    if sigma.size == 0 or sigma[0] <= 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = sigma > tol * sigma[0]
    inv = np.zeros_like(sigma)
    inv[keep] = 1.0 / sigma[keep]
    return (vt.T * inv) @ u.T


def compute_mappings(
    anchor_reps: list[np.ndarray] | tuple[np.ndarray, ...],
    rel_cutoff: float,
    *,
    mode: str = "relative",
) -> AlignmentResult:
    """Solve the shared-representation least squares for one cluster.

    The common representation is the retained left singular basis of
    ``[A_1, ..., A_c]`` (anchor reps concatenated along features); each
    member's mapping ``G_i = pinv(A_i) @ Z`` is the exact minimizer of
    ``||Z - A_i G_i||_F`` for that fixed Z.
    """
    if len(anchor_reps) == 0:
        raise ValueError("need at least one anchor representation")
    r = anchor_reps[0].shape[0]
    for i, a in enumerate(anchor_reps):
        if a.ndim != 2 or a.shape[0] != r:
            raise ValueError(f"anchor rep {i} has {a.shape[0]} rows, expected {r}")
    concat = np.concatenate(anchor_reps, axis=1)
    z, sigma, _ = truncated_svd(concat, rel_cutoff, mode=mode)
    mappings = tuple(pseudoinverse(a) @ z for a in anchor_reps)
    return AlignmentResult(
        common_rep=z,
        mappings=mappings,
        integrated_dim=z.shape[1],
        singular_values=sigma,
    )


def integrate(
    client_reps: list[np.ndarray] | tuple[np.ndarray, ...],
    mappings: tuple[np.ndarray, ...],
) -> tuple[np.ndarray, np.ndarray]:
    """Map every client's reduced rows into the common space and stack them.

    Returns ``(matrix, provenance)`` where ``provenance[s] = (member, local_row)``
    identifies the origin of stacked row ``s``; members appear in input order.
    """
    if len(client_reps) != len(mappings):
        raise ValueError("client_reps and mappings must have equal length")
    blocks = []
    provenance = []
    for i, (rep, g) in enumerate(zip(client_reps, mappings)):
        if rep.shape[1] != g.shape[0]:
            raise ValueError(
                f"member {i}: representation width {rep.shape[1]} != mapping rows {g.shape[0]}"
            )
        blocks.append(rep @ g)
        provenance.append(np.column_stack([np.full(rep.shape[0], i), np.arange(rep.shape[0])]))
    return np.concatenate(blocks, axis=0), np.concatenate(provenance, axis=0)


def alignment_objective(
    anchor_reps: list[np.ndarray] | tuple[np.ndarray, ...],
    common_rep: np.ndarray,
    mappings: tuple[np.ndarray, ...],
) -> float:
    """Sum of squared Frobenius residuals ``||Z - A_i G_i||_F^2``."""
    return float(
        sum(np.linalg.norm(common_rep - a @ g, "fro") ** 2 for a, g in zip(anchor_reps, mappings))
    )


def save_alignment(result: AlignmentResult, out_dir: str | Path) -> Path:
    """Serialize an AlignmentResult to a JSON header + .npz matrix bundle."""
    import json

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = {"common_rep": result.common_rep, "singular_values": result.singular_values}
    for i, g in enumerate(result.mappings):
        arrays[f"mapping_{i}"] = g
    np.savez(out_dir / "alignment.npz", **arrays)
    meta = {
        "integrated_dim": result.integrated_dim,
        "num_members": len(result.mappings),
        "mapping_shapes": [list(g.shape) for g in result.mappings],
    }
    meta_path = out_dir / "alignment.json"
    meta_path.write_text(json.dumps(meta, indent=2))
    return meta_path


def load_alignment(out_dir: str | Path) -> AlignmentResult:
    import json

    out_dir = Path(out_dir)
    meta = json.loads((out_dir / "alignment.json").read_text())
    with np.load(out_dir / "alignment.npz") as bundle:
        mappings = tuple(bundle[f"mapping_{i}"] for i in range(meta["num_members"]))
        return AlignmentResult(
            common_rep=bundle["common_rep"],
            mappings=mappings,
            integrated_dim=meta["integrated_dim"],
            singular_values=bundle["singular_values"],
        )
