"""Pseudo-inverse tests: defining identities, minor construction, projector."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filterlab import pinv
from filterlab.errors import InvalidInputError

from oracle_svd import jacobi_svd, pinv_via_jacobi


def random_matrix(rng, max_dim=6, scale=1.0, force_rank_deficient=False):
    d = int(rng.integers(1, max_dim + 1))
    l = int(rng.integers(1, max_dim + 1))
    if force_rank_deficient and min(d, l) > 1:
        r = int(rng.integers(0, min(d, l)))
        if r == 0:
            return np.zeros((d, l))
        return (rng.uniform(-1, 1, (d, r)) @ rng.uniform(-1, 1, (r, l))) * scale
    return rng.uniform(-1, 1, (d, l)) * scale


class TestJacobiOracle:
    """The oracle is validated before anything relies on it."""

    def test_reconstructs_known_diagonal(self):
        a = np.diag([3.0, 1.0])
        u, s, v = jacobi_svd(a)
        assert np.allclose(s, [3.0, 1.0])
        assert np.allclose(u @ np.diag(s) @ v.T, a)

    def test_factor_properties_random(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = random_matrix(rng)
            u, s, v = jacobi_svd(a)
            assert np.allclose(u @ np.diag(s) @ v.T, a, atol=1e-12)
            assert np.all(np.diff(s) <= 1e-12)
            gram_v = v.T @ v
            assert np.allclose(gram_v, np.eye(len(gram_v)), atol=1e-12)

    def test_pinv_of_invertible_is_inverse(self):
        rng = np.random.default_rng(8)
        a = rng.uniform(-1, 1, (4, 4)) + 4 * np.eye(4)
        assert np.allclose(pinv_via_jacobi(a), np.linalg.inv(a), atol=1e-10)


class TestPinvSvd:
    def test_zero_matrix(self):
        assert np.array_equal(pinv.pinv_svd(np.zeros((2, 3))), np.zeros((3, 2)))

    def test_identity(self):
        assert np.allclose(pinv.pinv_svd(np.eye(3)), np.eye(3))

    def test_diagonal_inverts_entrywise(self):
        assert np.allclose(pinv.pinv_svd(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))

    def test_rank_one_matches_independent_svd_oracle(self):
        rng = np.random.default_rng(42)
        a = np.outer(rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 2))
        assert np.allclose(pinv.pinv_svd(a), pinv_via_jacobi(a), atol=1e-12)

    def test_random_matches_oracle(self):
        rng = np.random.default_rng(3)
        for k in range(100):
            a = random_matrix(rng, force_rank_deficient=(k % 3 == 0))
            assert np.allclose(pinv.pinv_svd(a), pinv_via_jacobi(a), atol=1e-9)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            pinv.pinv_svd(np.array([[1.0, np.nan]]))
        with pytest.raises(InvalidInputError):
            pinv.pinv_svd(np.array([[1.0, np.inf]]))

    def test_discontinuity_witness(self):
        # pinv([[x]]) = [[1/x]] exactly while pinv of the limit point is [[0]]:
        # the map jumps at the rank drop, which is why rank tolerances exist
        for n in (10.0, 1e3, 1e6):
            x = 1.0 / n
            assert pinv.pinv_svd(np.array([[x]]))[0, 0] == 1.0 / x
        assert pinv.pinv_svd(np.array([[0.0]]))[0, 0] == 0.0

    def test_involution_on_image(self):
        rng = np.random.default_rng(11)
        for k in range(50):
            a = random_matrix(rng, force_rank_deficient=(k % 4 == 0))
            again = pinv.pinv_svd(pinv.pinv_svd(a))
            assert np.allclose(again, a, atol=1e-10)


class TestMinorEnumeration:
    def test_2x2_enumeration_layout(self):
        enum = pinv.minor_enumeration(2, 2)
        assert enum[0] == (0, (), ())
        assert enum[1:5] == ((1, (0,), (0,)), (1, (0,), (1,)), (1, (1,), (0,)), (1, (1,), (1,)))
        assert enum[5] == (2, (0, 1), (0, 1))

    def test_total_count(self):
        # 1 + sum_m C(d,m) C(l,m)
        from math import comb
        for d, l in [(2, 3), (4, 4), (1, 5)]:
            expect = 1 + sum(comb(d, m) * comb(l, m) for m in range(1, min(d, l) + 1))
            assert len(pinv.minor_enumeration(d, l)) == expect

    def test_determinant_vector_matches_direct_computation(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(-1, 1, (3, 4))
        dets = pinv.minor_determinants(a)
        enum = pinv.minor_enumeration(3, 4)
        assert dets[0] == 0.0
        for idx in rng.integers(1, len(enum), size=10):
            order, rows, cols = enum[idx]
            assert dets[idx] == pytest.approx(
                np.linalg.det(a[np.ix_(rows, cols)]), abs=1e-14)


class TestPinvMinor:
    def test_zero_matrix_convention(self):
        p, fact = pinv.pinv_minor(np.zeros((2, 3)))
        assert np.array_equal(p, np.zeros((3, 2)))
        assert fact.rank == 0 and fact.minor_index == 1
        assert fact.F.shape == (2, 0) and fact.G.shape == (0, 3)

    def test_identity(self):
        p, fact = pinv.pinv_minor(np.eye(2))
        assert np.allclose(p, np.eye(2))
        assert fact.rank == 2

    def test_factorization_reconstructs(self):
        rng = np.random.default_rng(17)
        for k in range(60):
            a = random_matrix(rng, force_rank_deficient=(k % 3 == 0))
            _, fact = pinv.pinv_minor(a)
            if fact.rank:
                assert np.allclose(fact.F @ fact.G, a, atol=1e-9)
                assert fact.F.shape == (a.shape[0], fact.rank)
                assert fact.G.shape == (fact.rank, a.shape[1])
                assert np.linalg.matrix_rank(fact.F) == fact.rank
                # F consists of the selected columns of A
                assert np.array_equal(fact.F, a[:, list(fact.column_selection)])

    def test_agrees_with_svd_route(self):
        rng = np.random.default_rng(23)
        for k in range(200):
            scale = 10.0 if k % 2 else 1.0
            a = random_matrix(rng, scale=scale, force_rank_deficient=(k % 3 == 0))
            p_minor, _ = pinv.pinv_minor(a)
            assert np.allclose(p_minor, pinv.pinv_svd(a), atol=1e-8)

    def test_dimension_cap(self):
        with pytest.raises(InvalidInputError):
            pinv.pinv_minor(np.zeros((9, 2)))


class TestPenroseIdentities:
    @pytest.mark.parametrize("route", ["svd", "minor"])
    def test_identities_random(self, route):
        rng = np.random.default_rng(31)
        for k in range(150):
            a = random_matrix(rng, force_rank_deficient=(k % 3 == 0))
            p = pinv.pinv_svd(a) if route == "svd" else pinv.pinv_minor(a)[0]
            res = pinv.penrose_residuals(a, p)
            assert max(res.values()) <= 1e-9, (a, res)

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10**6))
    @settings(max_examples=60, deadline=None)
    def test_identities_property(self, d, l, seed):
        a = np.random.default_rng(seed).normal(size=(d, l))
        res = pinv.penrose_residuals(a, pinv.pinv_svd(a))
        assert max(res.values()) <= 1e-9


class TestProjector:
    def test_zero(self):
        assert np.array_equal(pinv.projector(np.zeros((2, 2))), np.zeros((2, 2)))

    def test_full_rank_square_gives_identity(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(-1, 1, (3, 3)) + 3 * np.eye(3)
        assert np.allclose(pinv.projector(a), np.eye(3), atol=1e-12)

    def test_rank_one_projection(self):
        a = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert np.allclose(pinv.projector(a), a, atol=1e-14)

    def test_projector_properties_random(self):
        rng = np.random.default_rng(19)
        for k in range(80):
            a = random_matrix(rng, force_rank_deficient=(k % 2 == 0))
            p = pinv.projector(a)
            assert np.linalg.norm(p, 2) <= 1 + 1e-12
            assert np.allclose(p @ p, p, atol=1e-10)
            assert np.allclose(p, p.T, atol=1e-12)
