import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyarea.errors import NearIdentityBoundError, RankDeficientError, StructureError
from levyarea.symmetry import (
    BlockForm,
    Involution,
    block_decompose,
    dump_matrix,
    eigen_split,
    find_full_rank_t,
    format_matrix,
    full_rank_factor,
    load_matrix,
    parse_matrix,
)


def random_involution(rng, d, symmetric=False):
    """Conjugate diag(+-1) by a well-conditioned random matrix."""
    signs = np.where(rng.random(d) < 0.5, 1.0, -1.0)
    if symmetric:
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        m = (q * signs) @ q.T
    else:
        b = np.eye(d) + 0.3 * rng.standard_normal((d, d))
        m = b @ np.diag(signs) @ np.linalg.inv(b)
    # round-trip through the constructor tolerance by re-projecting
    m = (m + np.linalg.inv(m)) / 2.0
    return m


class TestInvolution:
    def test_accepts_identity(self):
        inv = Involution(np.eye(3))
        assert inv.dim == 3

    def test_rejects_non_involution(self):
        with pytest.raises(StructureError, match="not an involution"):
            Involution(np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(StructureError):
            Involution(np.ones((2, 3)))


class TestEigenSplit:
    def test_identity_case(self):
        s = eigen_split(np.eye(2))
        assert np.allclose(s.pi_plus, np.eye(2))
        assert np.allclose(s.pi_minus, 0.0)
        assert (s.d_plus, s.d_minus) == (2, 0)

    def test_diag_case(self):
        s = eigen_split(np.diag([1.0, -1.0]))
        assert np.allclose(s.pi_plus, np.diag([1.0, 0.0]))
        assert np.allclose(s.pi_minus, np.diag([0.0, 1.0]))

    def test_swap_case(self):
        s = eigen_split(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.allclose(s.pi_plus, 0.5 * np.ones((2, 2)))
        assert (s.d_plus, s.d_minus) == (1, 1)

    def test_basis_spans_plus_then_minus(self):
        a = np.diag([1.0, -1.0, 1.0])
        s = eigen_split(a)
        for j in range(s.d_plus):
            assert np.allclose(a @ s.basis[:, j], s.basis[:, j])
        for j in range(s.d_plus, 3):
            assert np.allclose(a @ s.basis[:, j], -s.basis[:, j])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(1, 6),
           symmetric=st.booleans())
    def test_projection_identities(self, seed, d, symmetric):
        rng = np.random.default_rng(seed)
        s = eigen_split(random_involution(rng, d, symmetric))
        eye = np.eye(d)
        assert np.max(np.abs(s.pi_plus + s.pi_minus - eye)) < 1e-12
        assert np.max(np.abs(s.pi_plus @ s.pi_plus - s.pi_plus)) < 1e-12
        assert np.max(np.abs(s.pi_minus @ s.pi_minus - s.pi_minus)) < 1e-12
        assert np.max(np.abs(s.pi_plus @ s.pi_minus)) < 1e-12
        assert s.d_plus + s.d_minus == d


class TestBlockDecompose:
    def test_already_block_form(self):
        split = eigen_split(np.diag([1.0, -1.0]))
        e = np.array([[0.0, 0.7], [-0.7, 0.0]])
        sigma = np.diag([1.0, 2.0])
        bf = block_decompose(sigma, e, split)
        assert np.allclose(bf.e0, [[0.7]])
        assert np.allclose(bf.sigma_plus, [[1.0]])
        assert np.allclose(bf.sigma_minus, [[2.0]])
        assert bf.off_block_residual < 1e-14

    def test_residual_reports_diagonal_e_block(self):
        # skewness lives across the blocks of a d=4 split so the diagonal
        # blocks of E can be nonzero skew matrices
        split = eigen_split(np.diag([1.0, 1.0, -1.0, -1.0]))
        e = np.zeros((4, 4))
        e[0, 1], e[1, 0] = 0.3, -0.3  # inside the ++ block
        sigma = np.eye(4)
        bf = block_decompose(sigma, e, split)
        assert bf.off_block_residual == pytest.approx(0.3)

    def test_sigma_off_diagonal_block_residual(self):
        split = eigen_split(np.diag([1.0, -1.0]))
        sigma = np.array([[1.0, 0.2], [0.2, 2.0]])
        bf = block_decompose(sigma, np.zeros((2, 2)), split)
        assert bf.off_block_residual == pytest.approx(0.2)

    def test_dimension_mismatch(self):
        split = eigen_split(np.diag([1.0, -1.0]))
        with pytest.raises(StructureError, match="dimension mismatch"):
            block_decompose(np.eye(3), np.zeros((3, 3)), split)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(2, 5))
    def test_similarity_transport_roundtrip(self, seed, d):
        rng = np.random.default_rng(seed)
        a = random_involution(rng, d, symmetric=True)
        split = eigen_split(a)
        w = rng.standard_normal((d, d))
        sigma = w + w.T
        e = w - w.T
        binv = split.basis_inv
        wmat = binv @ sigma @ binv.T
        fmat = binv @ e @ binv.T
        # reconstructing from the full transported matrices recovers inputs
        assert np.max(np.abs(split.basis @ wmat @ split.basis.T - sigma)) < 1e-10
        assert np.max(np.abs(split.basis @ fmat @ split.basis.T - e)) < 1e-10
        bf = block_decompose(sigma, e, split)
        assert isinstance(bf, BlockForm)
        p = split.d_plus
        assert np.allclose(bf.sigma_plus, (wmat[:p, :p] + wmat[:p, :p].T) / 2)


class TestFullRankFactor:
    def test_equal_inputs_give_identity(self):
        e0 = np.array([[1.0, 2.0], [3.0, 5.0]])
        res = full_rank_factor(e0, e0)
        assert np.allclose(res.p, np.eye(2), atol=1e-12)
        assert np.allclose(res.q, np.eye(2), atol=1e-12)

    def test_diagonal_stretch(self):
        res = full_rank_factor(np.eye(2), np.diag([1.1, 0.9]))
        prod = res.p @ np.eye(2) @ res.q.T
        assert np.allclose(prod, np.diag([1.1, 0.9]), atol=1e-12)

    def test_rectangular_example(self):
        e0 = np.array([[1.0, 0.0]])
        e = np.array([[1.05, 0.02]])
        res = full_rank_factor(e0, e)
        assert np.allclose(res.p @ e0 @ res.q.T, e, atol=1e-12)
        assert np.linalg.norm(res.p - np.eye(1), 2) <= 0.1
        assert np.linalg.norm(res.q - np.eye(2), 2) <= 0.1

    def test_rank_deficient_rejected(self):
        with pytest.raises(RankDeficientError):
            full_rank_factor(np.array([[1.0, 0.0], [2.0, 0.0]]), np.eye(2))

    def test_too_far_is_distinct_condition(self):
        with pytest.raises(NearIdentityBoundError):
            full_rank_factor(np.eye(2), 5.0 * np.eye(2))

    @pytest.mark.parametrize("shape", [(2, 2), (2, 3), (3, 2), (3, 3)])
    def test_randomized_product_identity(self, shape):
        rng = np.random.default_rng(hash(shape) % 2**32)
        m, n = shape
        for _ in range(1000):
            e0 = rng.standard_normal(shape)
            smin = np.linalg.svd(e0, compute_uv=False)[min(m, n) - 1]
            if smin < 0.1:
                continue  # keep pairs well-conditioned
            delta = rng.standard_normal(shape)
            e = e0 + (0.3 * smin / np.linalg.norm(delta, 2)) * delta
            res = full_rank_factor(e0, e)
            assert res.residual < 1e-10
            assert res.near_identity_norm <= res.constant * np.linalg.norm(e - e0, 2) + 1e-12


class TestFindFullRankT:
    def test_zero_zero(self):
        t = find_full_rank_t(np.zeros((1, 1)), np.zeros((1, 1)), 1.0)
        assert 0 < t < 1.0
        assert abs(t * t) > 1e-10

    def test_linear_term(self):
        t = find_full_rank_t(np.zeros((1, 1)), np.ones((1, 1)), 1.0)
        assert 0 < t < 1.0

    def test_partial_rank(self):
        a0 = np.array([[0.0, 0.0], [0.0, 1.0]])
        t = find_full_rank_t(a0, np.zeros((2, 2)), 0.5)
        det = np.linalg.det(a0 + t * t * np.eye(2))
        assert abs(det) > 0

    def test_randomized_returns_nonsingular(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            d = rng.integers(1, 4)
            a0 = rng.standard_normal((d, d))
            a1 = rng.standard_normal((d, d))
            t = find_full_rank_t(a0, a1, 1.0)
            at = a0 + t * a1 + t * t * np.eye(d)
            tol = 1e-10 * max(1.0, np.linalg.norm(at, np.inf)) ** d
            assert abs(np.linalg.det(at)) > tol

    def test_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            find_full_rank_t(np.eye(2), np.eye(2), -1.0)


class TestMatrixIO:
    def test_roundtrip(self, tmp_path):
        mat = np.array([[1.5, -2.25], [0.0, 1e-17]])
        path = tmp_path / "m.txt"
        dump_matrix(path, mat, comment="test matrix")
        assert np.array_equal(load_matrix(path), mat)

    def test_parse_comments_and_semicolons(self):
        mat = parse_matrix("# header\n1 0 # trailing\n0 -1\n")
        assert np.array_equal(mat, np.diag([1.0, -1.0]))
        assert np.array_equal(parse_matrix("1 0; 0 -1"), np.diag([1.0, -1.0]))

    def test_ragged_rejected(self):
        with pytest.raises(StructureError):
            parse_matrix("1 2\n3\n")

    def test_format_contains_comment(self):
        text = format_matrix(np.eye(1), comment="hello")
        assert text.startswith("# hello\n")
