import numpy as np
import pytest

from dccluster.errors import ContractViolationError
from dccluster.numerics import (as_matrix, svd, pinv, eig_symmetric,
                                standardize)


def rand(shape, seed):
    return np.random.default_rng(seed).normal(size=shape)


class TestAsMatrix:
    def test_accepts_lists(self):
        out = as_matrix([[1, 2], [3, 4]])
        assert out.dtype == np.float64 and out.shape == (2, 2)

    def test_rejects_vector(self):
        with pytest.raises(ContractViolationError):
            as_matrix(np.arange(3.0))

    def test_rejects_nan_and_inf(self):
        with pytest.raises(ContractViolationError):
            as_matrix([[1.0, np.nan]])
        with pytest.raises(ContractViolationError):
            as_matrix([[np.inf, 1.0]])

    def test_error_names_the_argument(self):
        with pytest.raises(ContractViolationError, match="weights"):
            as_matrix([1.0, 2.0], "weights")


class TestSvd:
    def test_reconstruction(self):
        for seed, shape in enumerate([(8, 5), (5, 8), (6, 6)]):
            a = rand(shape, seed)
            r = svd(a)
            assert np.allclose(r.u * r.s @ r.vt, a, atol=1e-10)

    def test_singular_values_descending_nonnegative(self):
        r = svd(rand((10, 4), 3))
        assert np.all(r.s >= 0)
        assert np.all(np.diff(r.s) <= 1e-12)

    def test_sign_convention(self):
        # largest-magnitude entry of each left singular vector is nonnegative
        for seed in range(6):
            r = svd(rand((7, 4), seed))
            for col in r.u.T:
                assert col[np.argmax(np.abs(col))] >= 0

    def test_sign_flip_applied_to_both_factors(self):
        a = rand((6, 4), 9)
        r = svd(a)
        assert np.allclose(r.u * r.s @ r.vt, a, atol=1e-10)

    def test_top_k_matches_full_prefix(self):
        a = rand((9, 6), 11)
        full, top = svd(a), svd(a, top_k=3)
        assert np.allclose(top.u, full.u[:, :3])
        assert np.allclose(top.s, full.s[:3])
        assert np.allclose(top.vt, full.vt[:3])

    def test_deterministic(self):
        a = rand((20, 7), 5)
        r1, r2 = svd(a), svd(a)
        assert np.array_equal(r1.u, r2.u) and np.array_equal(r1.vt, r2.vt)


class TestPinv:
    def test_moore_penrose_identities(self):
        # the four defining identities, random sizes up to 50x50
        rng = np.random.default_rng(0)
        for _ in range(20):
            shape = rng.integers(2, 51, size=2)
            a = rng.normal(size=shape)
            p = pinv(a)
            assert np.allclose(a @ p @ a, a, atol=1e-8)
            assert np.allclose(p @ a @ p, p, atol=1e-8)
            assert np.allclose((a @ p).T, a @ p, atol=1e-8)
            assert np.allclose((p @ a).T, p @ a, atol=1e-8)

    def test_rank_deficient(self):
        a = np.vstack([np.eye(3), np.eye(3)])[:, :2] @ rand((2, 4), 7)
        p = pinv(a)
        assert np.allclose(a @ p @ a, a, atol=1e-8)

    def test_inverse_on_square_full_rank(self):
        a = rand((5, 5), 13) + 5 * np.eye(5)
        assert np.allclose(pinv(a), np.linalg.inv(a), atol=1e-8)


class TestEigSymmetric:
    def test_ascending_and_orthonormal(self):
        a = rand((8, 8), 2)
        a = (a + a.T) / 2
        r = eig_symmetric(a)
        assert np.all(np.diff(r.values) >= -1e-12)
        assert np.allclose(r.vectors.T @ r.vectors, np.eye(8), atol=1e-10)

    def test_reconstruction(self):
        a = rand((6, 6), 4)
        a = (a + a.T) / 2
        r = eig_symmetric(a)
        assert np.allclose(r.vectors * r.values @ r.vectors.T, a, atol=1e-9)

    def test_rejects_asymmetric(self):
        a = rand((5, 5), 6)
        a[0, 1] += 1.0
        with pytest.raises(ContractViolationError):
            eig_symmetric(a)

    def test_top_k_is_prefix_of_full(self):
        a = rand((10, 10), 8)
        a = (a + a.T) / 2
        full, top = eig_symmetric(a), eig_symmetric(a, top_k=4)
        assert np.allclose(top.values, full.values[:4], atol=1e-10)
        # eigenvectors may differ by sign only when eigenvalues are simple
        for v_top, v_full in zip(top.vectors.T, full.vectors.T):
            assert min(np.abs(v_top - v_full).max(),
                       np.abs(v_top + v_full).max()) < 1e-8

    def test_known_eigenvalues(self):
        # single graph edge: Laplacian-style matrix with eigenvalues {0, 2}
        a = np.array([[1.0, -1.0], [-1.0, 1.0]])
        r = eig_symmetric(a)
        assert np.allclose(r.values, [0.0, 2.0], atol=1e-12)
        v = r.vectors[:, 0]
        assert np.allclose(np.abs(v), [1 / np.sqrt(2)] * 2, atol=1e-12)


class TestStandardize:
    def test_hand_example(self):
        out, means, scales = standardize(np.array([[1.0], [2.0], [3.0]]))
        # population std of (1,2,3) around 2 is sqrt(2/3)
        assert np.allclose(means, [2.0])
        assert np.allclose(scales, [np.sqrt(2.0 / 3.0)])
        assert np.allclose(out[:, 0], np.array([-1, 0, 1]) / np.sqrt(2.0 / 3.0))

    def test_constant_column(self):
        out, means, scales = standardize(np.full((3, 1), 5.0))
        assert np.allclose(out, 0.0)
        assert scales[0] == 1.0 and means[0] == 5.0

    def test_output_moments(self):
        x = rand((40, 6), 21) * 7 + 3
        out, _, _ = standardize(x)
        assert np.allclose(out.mean(axis=0), 0, atol=1e-12)
        assert np.allclose(out.std(axis=0), 1, atol=1e-12)

    def test_idempotent_on_fitted_output(self):
        x = rand((25, 4), 30)
        once, _, _ = standardize(x)
        twice, _, _ = standardize(once)
        assert np.allclose(once, twice, atol=1e-12)

    def test_fitted_transform_reapplies_to_new_rows(self):
        x = rand((30, 3), 14)
        _, means, scales = standardize(x)
        fresh = rand((10, 3), 15)
        manual = (fresh - means) / scales
        assert np.isfinite(manual).all()
