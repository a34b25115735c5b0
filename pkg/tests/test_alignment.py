import numpy as np
import pytest

from dccfl.alignment import (
    alignment_objective,
    compute_mappings,
    integrate,
    load_alignment,
    pseudoinverse,
    save_alignment,
    truncated_svd,
)


def orthonormal(n, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return q


def orthogonal_projector(a: np.ndarray) -> np.ndarray:
    """Projector onto col(a), built from an orthonormal basis (independent
    of the pseudoinverse under test)."""
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    keep = s > 1e-10 * s[0] if s.size and s[0] > 0 else np.zeros(s.shape, bool)
    basis = u[:, keep]
    return basis @ basis.T


# --------------------------------------------------------------- truncated_svd


def test_svd_identity_keeps_both():
    u, s, v = truncated_svd(np.eye(2), 1e-2)
    np.testing.assert_allclose(s, [1.0, 1.0])
    assert u.shape == (2, 2) and v.shape == (2, 2)


def test_svd_rank_one_matrix():
    # [[1,1],[1,1]] has singular values (2, 0); only one survives
    u, s, v = truncated_svd(np.ones((2, 2)), 1e-2)
    np.testing.assert_allclose(s, [2.0], atol=1e-12)
    assert u.shape == (2, 1)
    np.testing.assert_allclose(u @ np.diag(s) @ v.T, np.ones((2, 2)), atol=1e-12)


def test_svd_relative_cutoff():
    u, s, v = truncated_svd(np.diag([1.0, 0.001]), 1e-2)
    assert s.shape == (1,)
    np.testing.assert_allclose(s, [1.0])


def test_svd_absolute_cutoff_mode():
    u, s, v = truncated_svd(np.diag([3.0, 0.5, 0.05]), 0.1, mode="absolute")
    assert s.shape == (2,)


def test_svd_sign_convention_deterministic():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(20, 6))
    u1, s1, v1 = truncated_svd(a, 1e-6)
    u2, s2, v2 = truncated_svd(a.copy(), 1e-6)
    assert u1.tobytes() == u2.tobytes()
    for j in range(u1.shape[1]):
        col = u1[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_svd_orthonormal_columns():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(15, 8))
    u, s, v = truncated_svd(a, 1e-6)
    np.testing.assert_allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-10)


def test_svd_zero_matrix_errors():
    with pytest.raises(ValueError, match="all-zero"):
        truncated_svd(np.zeros((3, 3)), 1e-2)


def test_svd_cutoff_validation():
    a = np.eye(2)
    for bad in (0.0, 1.0, -0.5):
        with pytest.raises(ValueError):
            truncated_svd(a, bad)
    with pytest.raises(ValueError, match="mode"):
        truncated_svd(a, 0.5, mode="sideways")


def test_svd_rank_monotone_in_cutoff():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(30, 10)) @ np.diag(np.logspace(0, -4, 10))
    prev = None
    for cutoff in (1e-5, 1e-4, 1e-3, 1e-2, 1e-1):
        _, s, _ = truncated_svd(a, cutoff)
        if prev is not None:
            assert s.size <= prev
        prev = s.size


# --------------------------------------------------------------- pseudoinverse


def penrose_errors(a, pinv):
    return (
        np.abs(a @ pinv @ a - a).max(initial=0.0),
        np.abs(pinv @ a @ pinv - pinv).max(initial=0.0),
        np.abs(a @ pinv - (a @ pinv).T).max(initial=0.0),
        np.abs(pinv @ a - (pinv @ a).T).max(initial=0.0),
    )


def test_pinv_identity():
    np.testing.assert_allclose(pseudoinverse(np.eye(3)), np.eye(3), atol=1e-12)


def test_pinv_diagonal_with_zero():
    a = np.array([[2.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(pseudoinverse(a), [[0.5, 0.0], [0.0, 0.0]], atol=1e-12)


def test_pinv_matches_normal_equations():
    # full-column-rank oracle: pinv(A) = (A^T A)^-1 A^T
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 3))
    oracle = np.linalg.solve(a.T @ a, a.T)
    np.testing.assert_allclose(pseudoinverse(a), oracle, atol=1e-8)


def test_pinv_zero_matrix():
    out = pseudoinverse(np.zeros((4, 2)))
    assert out.shape == (2, 4)
    assert np.all(out == 0.0)


def test_pinv_penrose_random():
    rng = np.random.default_rng(4)
    for trial in range(25):
        n, m = rng.integers(1, 8, size=2)
        a = rng.normal(size=(n, m))
        if trial % 3 == 0 and min(n, m) > 1:  # force rank deficiency
            a[:, -1] = a[:, 0] * 2.0 if m > 1 else a[:, 0]
        errs = penrose_errors(a, pseudoinverse(a))
        assert max(errs) < 1e-6


# ------------------------------------------------------------- compute_mappings


def test_single_client_full_space_exact():
    # orthonormal anchor rep spans R^r, so the projection of Z is Z itself
    q = orthonormal(12, seed=5)
    result = compute_mappings([q], 1e-2)
    residual = np.linalg.norm(result.common_rep - q @ result.mappings[0], "fro")
    assert residual < 1e-10


def test_identical_clients_share_mapping():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(20, 4))
    result = compute_mappings([a, a.copy()], 1e-2)
    assert result.mappings[0].tobytes() == result.mappings[1].tobytes()


def test_mappings_projection_identity():
    rng = np.random.default_rng(7)
    reps = [rng.normal(size=(40, d)) for d in (3, 5, 4)]
    result = compute_mappings(reps, 1e-2)
    z = result.common_rep
    for a, g in zip(reps, result.mappings):
        projected = orthogonal_projector(a) @ z
        err = np.linalg.norm(a @ g - projected, "fro")
        assert err <= 1e-6 * np.linalg.norm(z, "fro")


def test_mappings_fixed_z_optimality():
    rng = np.random.default_rng(8)
    reps = [rng.normal(size=(50, d)) for d in (4, 6, 3)]
    result = compute_mappings(reps, 1e-2)
    base = alignment_objective(reps, result.common_rep, result.mappings)
    for trial in range(100):
        i = trial % len(reps)
        noise = rng.normal(scale=1e-2, size=result.mappings[i].shape)
        perturbed = list(result.mappings)
        perturbed[i] = result.mappings[i] + noise
        obj = alignment_objective(reps, result.common_rep, tuple(perturbed))
        assert obj >= base - 1e-9 * max(1.0, base)


def test_mappings_row_count_mismatch():
    rng = np.random.default_rng(9)
    with pytest.raises(ValueError, match="rows"):
        compute_mappings([rng.normal(size=(10, 3)), rng.normal(size=(11, 3))], 1e-2)


def test_mappings_empty_sequence():
    with pytest.raises(ValueError, match="at least one"):
        compute_mappings([], 1e-2)


def test_mappings_deterministic_bytes():
    rng = np.random.default_rng(10)
    reps = [rng.normal(size=(25, d)) for d in (3, 4)]
    a = compute_mappings(reps, 1e-2)
    b = compute_mappings([r.copy() for r in reps], 1e-2)
    assert a.common_rep.tobytes() == b.common_rep.tobytes()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.mappings, b.mappings))


def test_integrated_dim_counts_kept_sigma():
    rng = np.random.default_rng(11)
    reps = [rng.normal(size=(30, 4)) for _ in range(2)]
    result = compute_mappings(reps, 1e-2)
    sigma = result.singular_values
    assert result.integrated_dim == sigma.size
    assert np.all(sigma >= 1e-2 * sigma[0])


# ------------------------------------------------------------------- integrate


def test_integrate_identity_mapping():
    rng = np.random.default_rng(12)
    rep = rng.normal(size=(8, 3))
    out, prov = integrate([rep], (np.eye(3),))
    np.testing.assert_allclose(out, rep)
    assert prov.tolist() == [[0, i] for i in range(8)]


def test_integrate_ordering():
    rng = np.random.default_rng(13)
    reps = [rng.normal(size=(3, 2)), rng.normal(size=(5, 2))]
    gs = (np.eye(2), np.eye(2))
    out, prov = integrate(reps, gs)
    assert out.shape == (8, 2)
    np.testing.assert_allclose(out[:3], reps[0])
    assert prov[:3, 0].tolist() == [0, 0, 0]
    assert prov[3:, 0].tolist() == [1, 1, 1, 1, 1]


def test_integrate_slices_recover_blocks():
    rng = np.random.default_rng(14)
    reps = [rng.normal(size=(n, 3)) for n in (4, 2, 6)]
    gs = tuple(rng.normal(size=(3, 2)) for _ in reps)
    out, prov = integrate(reps, gs)
    offset = 0
    for rep, g in zip(reps, gs):
        np.testing.assert_array_equal(out[offset : offset + rep.shape[0]], rep @ g)
        offset += rep.shape[0]


def test_integrate_shape_mismatch():
    with pytest.raises(ValueError, match="mapping rows"):
        integrate([np.zeros((3, 4))], (np.zeros((3, 2)),))
    with pytest.raises(ValueError, match="equal length"):
        integrate([np.zeros((3, 4))], (np.zeros((4, 2)), np.zeros((4, 2))))


# --------------------------------------------------------------- serialization


def test_alignment_bundle_roundtrip(tmp_path):
    rng = np.random.default_rng(15)
    reps = [rng.normal(size=(20, d)) for d in (3, 5)]
    result = compute_mappings(reps, 1e-2)
    save_alignment(result, tmp_path / "bundle")
    back = load_alignment(tmp_path / "bundle")
    assert back.integrated_dim == result.integrated_dim
    np.testing.assert_array_equal(back.common_rep, result.common_rep)
    for a, b in zip(back.mappings, result.mappings):
        np.testing.assert_array_equal(a, b)
