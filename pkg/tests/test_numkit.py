import numpy as np
import pytest
import scipy.sparse as sp

from ltswave.errors import (
    ConvergenceError,
    InputError,
    InternalConsistencyError,
    SingularBlockError,
    SizeError,
)
from ltswave.numkit import (
    BlockDiagMatrix,
    DiagMatrix,
    SparseSymMatrix,
    block_solve,
    dense_sym_spectrum,
    matvec,
    shift_identity,
    sym_lambda_extremes,
)


def tridiag(diag, off, n):
    main = np.full(n, float(diag))
    side = np.full(n - 1, float(off))
    return SparseSymMatrix(sp.diags([side, main, side], [-1, 0, 1], format="csr"))


def random_sym(n, rng, density=0.3):
    a = rng.standard_normal((n, n))
    mask = rng.random((n, n)) < density
    a = a * mask
    return SparseSymMatrix.from_dense(0.5 * (a + a.T), sym_rtol=1e-10)


class TestMatvec:
    def test_identity(self):
        v = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(matvec(SparseSymMatrix.identity(3), v), v)

    def test_diagonal_scaling(self):
        assert np.array_equal(matvec(DiagMatrix([2.0, 3.0]), np.ones(2)), [2.0, 3.0])

    def test_tridiag_hand_product(self):
        m = tridiag(2.0, -1.0, 3)
        assert np.allclose(matvec(m, np.ones(3)), [1.0, 0.0, 1.0], atol=0)

    def test_block_matvec_matches_dense(self):
        rng = np.random.default_rng(3)
        blocks = [rng.standard_normal((2, 2)) for _ in range(4)]
        blocks = [0.5 * (b + b.T) for b in blocks]
        m = BlockDiagMatrix(blocks)
        v = rng.standard_normal(8)
        assert np.allclose(matvec(m, v), m.toarray() @ v, rtol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            matvec(SparseSymMatrix.identity(3), np.ones(4))

    def test_linearity(self):
        rng = np.random.default_rng(11)
        m = random_sym(30, rng)
        u, v = rng.standard_normal(30), rng.standard_normal(30)
        a, b = 0.37, -2.1
        lhs = matvec(m, a * u + b * v)
        rhs = a * matvec(m, u) + b * matvec(m, v)
        assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-13)

    def test_self_adjoint(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            m = random_sym(40, rng)
            u, v = rng.standard_normal(40), rng.standard_normal(40)
            left = matvec(m, u) @ v
            right = u @ matvec(m, v)
            assert abs(left - right) <= 1e-12 * max(abs(left), abs(right), 1e-30)

    def test_batched_columns(self):
        rng = np.random.default_rng(13)
        m = random_sym(20, rng)
        cols = rng.standard_normal((20, 3))
        batched = matvec(m, cols)
        for j in range(3):
            assert np.array_equal(batched[:, j], matvec(m, cols[:, j]))


class TestConstruction:
    def test_asymmetric_rejected(self):
        a = np.array([[1.0, 2.0], [1.0, 1.0]])
        with pytest.raises(InternalConsistencyError):
            SparseSymMatrix.from_dense(a)

    def test_roundoff_asymmetry_symmetrized(self):
        a = np.array([[1.0, 2.0], [2.0 + 1e-15, 1.0]])
        m = SparseSymMatrix.from_dense(a)
        d = m.toarray()
        assert d[0, 1] == d[1, 0]

    def test_block_sizes_sum(self):
        m = BlockDiagMatrix([np.eye(2), np.eye(3)])
        assert m.n == 5


class TestSpectrumExtremes:
    def test_diagonal_spectrum(self):
        m = SparseSymMatrix.from_dense(np.diag([1.0, 4.0]))
        est = sym_lambda_extremes(m)
        assert est.lambda_max == pytest.approx(4.0, rel=1e-10)
        assert est.lambda_min == pytest.approx(1.0, rel=1e-10)
        assert est.lambda_max >= est.lambda_min
        assert est.residual >= 0.0

    def test_zero_matrix(self):
        m = SparseSymMatrix(sp.csr_matrix((5, 5)))
        est = sym_lambda_extremes(m)
        assert est.lambda_max == 0.0 and est.lambda_min == 0.0

    def test_tridiag_closed_form(self):
        # eigenvalues of tridiag(2,-1) at n=4: 2 - 2 cos(j pi / 5)
        m = tridiag(2.0, -1.0, 4)
        est = sym_lambda_extremes(m)
        assert est.lambda_max == pytest.approx(2 - 2 * np.cos(4 * np.pi / 5), rel=1e-9)
        assert est.lambda_min == pytest.approx(2 - 2 * np.cos(np.pi / 5), rel=1e-9)

    def test_nonconvergence_carries_estimate(self):
        m = tridiag(2.0, -1.0, 400)
        with pytest.raises(ConvergenceError) as info:
            sym_lambda_extremes(m, tol=1e-14, max_iter=3)
        assert info.value.estimate is not None

    def test_agrees_with_dense_spectrum(self):
        rng = np.random.default_rng(21)
        for n in (24, 80, 200):
            m = random_sym(n, rng)
            vals = dense_sym_spectrum(m)
            est = sym_lambda_extremes(m, tol=1e-12)
            scale = max(abs(vals[0]), abs(vals[-1]))
            assert abs(est.lambda_max - vals[-1]) <= 1e-8 * scale
            assert abs(est.lambda_min - vals[0]) <= 1e-8 * scale


class TestDenseSpectrum:
    def test_diagonal_sorted(self):
        m = SparseSymMatrix.from_dense(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(dense_sym_spectrum(m), [1.0, 2.0, 3.0], atol=1e-12)

    def test_two_by_two_characteristic(self):
        m = SparseSymMatrix.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.allclose(dense_sym_spectrum(m), [-1.0, 1.0], atol=1e-12)

    def test_tridiag_closed_form(self):
        m = tridiag(2.0, -1.0, 3)
        expect = np.array([2 - np.sqrt(2), 2.0, 2 + np.sqrt(2)])
        assert np.allclose(dense_sym_spectrum(m), expect, atol=1e-10)

    def test_cap_exceeded(self):
        m = SparseSymMatrix.identity(10)
        with pytest.raises(SizeError):
            dense_sym_spectrum(m, cap=8)

    def test_eigenvectors_reconstruct(self):
        rng = np.random.default_rng(5)
        m = random_sym(30, rng)
        vals, vecs = dense_sym_spectrum(m, return_vectors=True)
        recon = vecs @ np.diag(vals) @ vecs.T
        assert np.allclose(recon, m.toarray(), atol=1e-9 * max(1.0, abs(vals).max()))


class TestBlockSolve:
    def test_scalar_diag(self):
        x = block_solve(DiagMatrix([2.0]), np.array([4.0]))
        assert np.array_equal(x, [2.0])

    def test_identity_blocks(self):
        m = BlockDiagMatrix([np.eye(2), np.eye(2)])
        rhs = np.arange(4.0)
        assert np.array_equal(block_solve(m, rhs), rhs)

    def test_two_by_two_hand_solve(self):
        m = BlockDiagMatrix([np.array([[2.0, 1.0], [1.0, 2.0]])])
        assert np.allclose(block_solve(m, np.array([3.0, 3.0])), [1.0, 1.0], atol=1e-14)

    def test_roundtrip(self):
        rng = np.random.default_rng(7)
        blocks = []
        for _ in range(5):
            b = rng.standard_normal((3, 3))
            blocks.append(b @ b.T + 3 * np.eye(3))
        m = BlockDiagMatrix(blocks)
        rhs = rng.standard_normal(15)
        x = block_solve(m, rhs)
        back = matvec(m, x)
        assert np.allclose(back, rhs, rtol=1e-12, atol=1e-12)

    def test_singular_block_named(self):
        m = BlockDiagMatrix([np.eye(2), np.zeros((2, 2))])
        with pytest.raises(SingularBlockError) as info:
            block_solve(m, np.ones(4))
        assert info.value.index == 1

    def test_singular_diag_named(self):
        with pytest.raises(SingularBlockError) as info:
            block_solve(DiagMatrix([1.0, 0.0, 2.0]), np.ones(3))
        assert info.value.index == 1


def test_shift_identity_diag():
    m = shift_identity(DiagMatrix([2.0, 4.0]), 0.5)
    assert np.array_equal(m.d, [2.0, 3.0])


def test_shift_identity_blocks():
    m = shift_identity(BlockDiagMatrix([np.full((2, 2), 2.0)]), 0.25)
    assert np.allclose(m.blocks[0], np.eye(2) + 0.5)
