import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import nnls_enumeration_oracle
from hrom.errors import ConvergenceError, DataError, PreconditionError
from hrom.linalg import NnlsResult, nnls, pseudo_inverse, randomized_svd


class TestRandomizedSvd:
    def test_sketch_dimension_is_rank_plus_oversampling(self):
        # l = 150 + 10 = 160 fits a 160-column matrix but not a 159-column one
        rng = np.random.default_rng(0)
        a = rng.normal(size=(200, 160))
        randomized_svd(a, rank=150, oversampling=10, seed=1)
        with pytest.raises(PreconditionError):
            randomized_svd(a[:, :159], rank=150, oversampling=10, seed=1)

    def test_exact_diagonal(self):
        a = np.zeros((10, 5))
        a[0, 0], a[1, 1], a[2, 2] = 3.0, 2.0, 1.0
        res = randomized_svd(a, rank=3, oversampling=2, seed=0)
        assert np.allclose(res.singular_values, [3.0, 2.0, 1.0], atol=1e-12)

    def test_low_rank_reconstruction_matches_full_svd(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(100, 10)) @ rng.normal(size=(10, 40))
        res = randomized_svd(a, rank=10, seed=5)
        proj = res.u @ (res.u.T @ a)
        assert np.linalg.norm(a - proj) <= 1e-8 * np.linalg.norm(a)
        sv_full = np.linalg.svd(a, compute_uv=False)[:10]
        assert np.allclose(res.singular_values, sv_full, rtol=1e-8)

    def test_factors_reassemble_matrix(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(30, 8)) @ rng.normal(size=(8, 25))
        res = randomized_svd(a, rank=8, seed=2)
        rebuilt = res.u @ np.diag(res.singular_values) @ res.vt
        assert np.linalg.norm(rebuilt - a) <= 1e-10 * np.linalg.norm(a)

    def test_orthonormal_columns(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            a = rng.normal(size=(60, 30))
            res = randomized_svd(a, rank=12, seed=trial)
            gram = res.u.T @ res.u
            assert np.abs(gram - np.eye(12)).max() <= 1e-10

    def test_singular_values_sorted_nonnegative(self):
        rng = np.random.default_rng(8)
        res = randomized_svd(rng.normal(size=(40, 30)), rank=10, seed=3)
        sv = res.singular_values
        assert (sv >= 0).all() and (np.diff(sv) <= 1e-12).all()

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=(50, 20))
        r1 = randomized_svd(a, rank=5, seed=42)
        r2 = randomized_svd(a, rank=5, seed=42)
        assert np.array_equal(r1.u, r2.u)
        r3 = randomized_svd(a, rank=5, seed=43)
        assert not np.array_equal(r1.u, r3.u)

    def test_input_validation(self):
        a = np.ones((4, 4))
        with pytest.raises(PreconditionError):
            randomized_svd(a, rank=0)
        with pytest.raises(PreconditionError):
            randomized_svd(a, rank=2, oversampling=5)
        bad = a.copy()
        bad[0, 0] = np.nan
        with pytest.raises(DataError):
            randomized_svd(bad, rank=2, oversampling=1)


class TestPseudoInverse:
    def test_identity(self):
        assert np.allclose(pseudo_inverse(np.eye(3)), np.eye(3), atol=1e-14)

    def test_diagonal_with_null_direction(self):
        a = np.array([[2.0, 0.0], [0.0, 0.0]])
        expected = np.array([[0.5, 0.0], [0.0, 0.0]])
        assert np.allclose(pseudo_inverse(a), expected, atol=1e-14)

    def test_full_column_rank_against_normal_equations(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(8, 3))
        pinv = pseudo_inverse(a)
        oracle = np.linalg.inv(a.T @ a) @ a.T
        assert np.allclose(pinv, oracle, atol=1e-10)
        assert np.allclose(pinv @ a, np.eye(3), atol=1e-10)

    def test_penrose_identities(self):
        rng = np.random.default_rng(12)
        a = rng.normal(size=(6, 4))
        ai = pseudo_inverse(a)
        assert np.allclose(a @ ai @ a, a, atol=1e-10)
        assert np.allclose(ai @ a @ ai, ai, atol=1e-10)
        assert np.allclose((a @ ai).T, a @ ai, atol=1e-10)
        assert np.allclose((ai @ a).T, ai @ a, atol=1e-10)

    def test_involution_for_full_rank(self):
        rng = np.random.default_rng(13)
        a = rng.normal(size=(5, 3))
        back = pseudo_inverse(pseudo_inverse(a))
        assert np.linalg.norm(back - a) <= 1e-8 * np.linalg.norm(a)

    def test_zero_matrix_gives_zero(self):
        assert np.array_equal(pseudo_inverse(np.zeros((3, 2))), np.zeros((2, 3)))

    def test_rcond_validation(self):
        with pytest.raises(PreconditionError):
            pseudo_inverse(np.eye(2), rcond=1.5)


class TestNnls:
    def test_exactly_satisfiable_row(self):
        system = np.array([[1.0, 1.0]])
        res = nnls(system, np.array([2.0]))
        assert (res.weights >= 0).all()
        assert abs(res.weights.sum() - 2.0) <= 1e-12
        assert res.residual_norm <= 1e-12

    def test_negativity_clipped(self):
        res = nnls(np.eye(2), np.array([1.0, -1.0]))
        assert np.allclose(res.weights, [1.0, 0.0], atol=1e-13)
        assert abs(res.residual_norm - 1.0) <= 1e-13

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(21)
        for trial in range(8):
            a = rng.normal(size=(6, 4))
            x_true = np.where(rng.random(4) < 0.5, 0.0, rng.random(4))
            b = a @ x_true + 0.05 * rng.normal(size=6)
            res = nnls(a, b)
            _, r_oracle = nnls_enumeration_oracle(a, b)
            assert res.residual_norm <= r_oracle + 1e-9
            assert res.residual_norm >= r_oracle - 1e-9

    def test_residual_norm_recomputes(self):
        rng = np.random.default_rng(22)
        a = rng.normal(size=(7, 3))
        b = rng.normal(size=7)
        res = nnls(a, b)
        assert abs(res.residual_norm - np.linalg.norm(a @ res.weights - b)) <= 1e-10

    def test_kkt_at_zero_weights(self):
        rng = np.random.default_rng(23)
        for trial in range(5):
            a = rng.normal(size=(8, 5))
            b = rng.normal(size=8)
            res = nnls(a, b)
            grad = a.T @ (a @ res.weights - b)
            assert (grad[res.weights == 0.0] >= -1e-8).all()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_weights_always_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(5, 3))
        b = rng.normal(size=5)
        try:
            res = nnls(a, b)
        except ConvergenceError as err:
            res = err.best
        assert (res.weights >= 0).all()

    def test_iteration_cap_carries_best_iterate(self):
        rng = np.random.default_rng(24)
        a = rng.normal(size=(10, 6))
        b = rng.normal(size=10)
        with pytest.raises(ConvergenceError) as err:
            nnls(a, b, max_iterations=1)
        best = err.value.best
        assert isinstance(best, NnlsResult)
        assert (best.weights >= 0).all()

    def test_dimension_mismatch(self):
        with pytest.raises(PreconditionError):
            nnls(np.eye(3), np.ones(2))
