"""Minimal linear-algebra kit used by every other module.

Matrix roles: ``SparseSymMatrix`` for stiffness-like operators,
``DiagMatrix`` for lumped masses and damping, ``BlockDiagMatrix`` for
element-block masses.  Vectors are plain numpy arrays; every operation also
accepts a batch of vectors as the columns of an ``(n, m)`` array.

All reductions run in a fixed order (CSR row order, left to right), so
repeated runs of the same computation are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

from .errors import (
    ConvergenceError,
    InputError,
    InternalConsistencyError,
    SingularBlockError,
    SizeError,
)

DEFAULT_EIG_TOL = 1e-10
DEFAULT_EIG_MAXITER = 5000
DENSE_SPECTRUM_CAP = 4096

# Fixed seed for the Lanczos start vector: stability scans must be
# reproducible run to run (overridable only through the function argument).
_START_SEED = 987234911


class SparseSymMatrix:
    """Symmetric real matrix in compressed-sparse-row storage.

    The constructor verifies symmetry to within ``sym_rtol`` relative to the
    largest entry and stores the symmetrized matrix, so roundoff from sparse
    products cannot leak asymmetry into downstream spectra.
    """

    def __init__(self, matrix, sym_rtol=1e-13):
        m = sp.csr_matrix(matrix, dtype=float)
        if m.shape[0] != m.shape[1]:
            raise InputError(f"matrix must be square, got shape {m.shape}")
        if m.shape[0] < 1:
            raise InputError("matrix must have dimension >= 1")
        scale = float(np.max(np.abs(m.data))) if m.nnz else 0.0
        skew = m - m.T
        gap = float(np.max(np.abs(skew.data))) if skew.nnz else 0.0
        if scale > 0.0 and gap > sym_rtol * scale:
            raise InternalConsistencyError(
                f"asymmetry {gap:.3e} exceeds {sym_rtol:.1e} relative to scale {scale:.3e}"
            )
        sym = (m + m.T) * 0.5
        sym.sum_duplicates()
        sym.eliminate_zeros()
        self.csr = sp.csr_matrix(sym)
        self.n = int(m.shape[0])

    @classmethod
    def identity(cls, n):
        return cls(sp.identity(n, format="csr"))

    @classmethod
    def from_dense(cls, arr, sym_rtol=1e-13):
        return cls(sp.csr_matrix(np.asarray(arr, dtype=float)), sym_rtol=sym_rtol)

    def toarray(self):
        return self.csr.toarray()

    @property
    def nnz(self):
        return self.csr.nnz


class DiagMatrix:
    """Diagonal matrix stored as its entries."""

    def __init__(self, entries):
        d = np.array(entries, dtype=float)
        if d.ndim != 1 or d.size < 1:
            raise InputError("diagonal entries must form a non-empty 1-D array")
        self.d = d
        self.n = int(d.size)

    def toarray(self):
        return np.diag(self.d)


class BlockDiagMatrix:
    """Block-diagonal matrix given as an ordered list of dense blocks."""

    def __init__(self, blocks, sym_rtol=1e-12):
        blocks = [np.array(b, dtype=float) for b in blocks]
        if not blocks:
            raise InputError("need at least one block")
        offsets = [0]
        for k, b in enumerate(blocks):
            if b.ndim != 2 or b.shape[0] != b.shape[1]:
                raise InputError(f"block {k} is not square")
            scale = float(np.max(np.abs(b))) if b.size else 0.0
            if scale > 0.0 and np.max(np.abs(b - b.T)) > sym_rtol * scale:
                raise InternalConsistencyError(f"block {k} is not symmetric")
            offsets.append(offsets[-1] + b.shape[0])
        self.blocks = blocks
        self.offsets = np.array(offsets, dtype=int)
        self.n = int(offsets[-1])
        shapes = {b.shape[0] for b in blocks}
        # Uniform block size allows batched numpy paths.
        self._stack = np.stack(blocks) if len(shapes) == 1 else None

    def toarray(self):
        out = np.zeros((self.n, self.n))
        for k, b in enumerate(self.blocks):
            i0, i1 = self.offsets[k], self.offsets[k + 1]
            out[i0:i1, i0:i1] = b
        return out

    def map_blocks(self, fn):
        """New BlockDiagMatrix with ``fn`` applied to every block."""
        return BlockDiagMatrix([fn(b) for b in self.blocks])


@dataclass
class SpectrumEstimate:
    lambda_max: float
    lambda_min: float
    residual: float
    iterations: int


def matvec(m, v):
    """Exact product ``m @ v`` with deterministic summation order."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != m.n:
        raise InputError(f"dimension mismatch: matrix is {m.n}, vector has {v.shape[0]}")
    if isinstance(m, SparseSymMatrix):
        return m.csr @ v
    if isinstance(m, DiagMatrix):
        return m.d * v if v.ndim == 1 else m.d[:, None] * v
    if isinstance(m, BlockDiagMatrix):
        if m._stack is not None:
            bs = m._stack.shape[1]
            blocks = v.reshape(len(m.blocks), bs, -1)
            out = np.einsum("kij,kjm->kim", m._stack, blocks)
            return out.reshape(v.shape)
        out = np.empty_like(v)
        for k, b in enumerate(m.blocks):
            i0, i1 = m.offsets[k], m.offsets[k + 1]
            out[i0:i1] = b @ v[i0:i1]
        return out
    raise InputError(f"unsupported matrix type {type(m).__name__}")


def block_solve(m, rhs):
    """Solve ``m x = rhs`` blockwise (diagonal or block-diagonal ``m``)."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != m.n:
        raise InputError(f"dimension mismatch: matrix is {m.n}, rhs has {rhs.shape[0]}")
    if isinstance(m, DiagMatrix):
        zero = np.nonzero(m.d == 0.0)[0]
        if zero.size:
            raise SingularBlockError(f"zero diagonal entry at index {zero[0]}", index=int(zero[0]))
        return rhs / m.d if rhs.ndim == 1 else rhs / m.d[:, None]
    if isinstance(m, BlockDiagMatrix):
        if m._stack is not None:
            bs = m._stack.shape[1]
            cols = rhs.reshape(len(m.blocks), bs, -1)
            try:
                sol = np.linalg.solve(m._stack, cols)
                return sol.reshape(rhs.shape)
            except np.linalg.LinAlgError:
                pass  # fall through to the loop to name the offending block
        out = np.empty_like(rhs)
        for k, b in enumerate(m.blocks):
            i0, i1 = m.offsets[k], m.offsets[k + 1]
            try:
                out[i0:i1] = np.linalg.solve(b, rhs[i0:i1])
            except np.linalg.LinAlgError as exc:
                raise SingularBlockError(f"singular block {k}", index=k) from exc
        return out
    raise InputError(f"unsupported matrix type {type(m).__name__}")


def shift_identity(m, coeff):
    """Return ``I + coeff * m`` preserving the (block-)diagonal type."""
    if isinstance(m, DiagMatrix):
        return DiagMatrix(1.0 + coeff * m.d)
    if isinstance(m, BlockDiagMatrix):
        return m.map_blocks(lambda b: np.eye(b.shape[0]) + coeff * b)
    raise InputError(f"unsupported matrix type {type(m).__name__}")


def _tridiag_top(alphas, betas):
    """Largest eigenpair data of a symmetric tridiagonal matrix.

    Returns (theta_top, last component of its eigenvector, theta_bottom).
    """
    k = len(alphas)
    if k == 1:
        return alphas[0], 1.0, alphas[0]
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas[: k - 1], dtype=float)
    top_val, top_vec = eigh_tridiagonal(a, b, select="i", select_range=(k - 1, k - 1))
    bot_val = eigh_tridiagonal(a, b, eigvals_only=True, select="i", select_range=(0, 0))
    return float(top_val[0]), float(top_vec[-1, 0]), float(bot_val[0])


def _lanczos_largest(apply_op, n, tol, max_iter, seed):
    """Largest eigenvalue of a symmetric operator by Lanczos iteration.

    Full reorthogonalization; convergence when the Ritz residual estimate
    drops below ``tol`` relative to the spectral scale seen so far.
    Returns (theta, abs_residual, matvecs) or raises ConvergenceError.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    # Memory guard: the orthogonal basis is dense.
    cap = min(n, max_iter, max(32, int(4.0e7 // max(n, 1))))
    V = np.empty((cap, n))
    alphas, betas = [], []
    matvecs = 0
    check_every = 8
    theta = resid = None
    for j in range(cap):
        V[j] = v
        w = apply_op(v)
        matvecs += 1
        a = float(v @ w)
        alphas.append(a)
        w = w - a * v
        if j > 0:
            w = w - betas[-1] * V[j - 1]
        # Two passes of reorthogonalization keep the basis orthogonal.
        basis = V[: j + 1]
        w -= basis.T @ (basis @ w)
        w -= basis.T @ (basis @ w)
        b = float(np.linalg.norm(w))
        theta, s_last, theta_bot = _tridiag_top(alphas, betas)
        scale = max(abs(theta), abs(theta_bot), 1e-300)
        resid = abs(b * s_last)
        exhausted = j + 1 == n
        if resid <= tol * scale or exhausted or b <= 1e-14 * scale:
            return theta, resid, matvecs
        if (j + 1) % check_every != 0:
            pass  # residual already computed; cheap for the small tridiagonal
        betas.append(b)
        v = w / b
        if matvecs >= max_iter:
            break
    raise ConvergenceError(
        f"Lanczos did not reach tol={tol:.1e} within {max_iter} products",
        estimate=theta,
        iterations=matvecs,
    )


def sym_lambda_extremes(m, tol=DEFAULT_EIG_TOL, max_iter=DEFAULT_EIG_MAXITER, seed=_START_SEED):
    """Extreme eigenvalues of a symmetric sparse matrix.

    lambda_max comes from a Lanczos iteration on ``m``; lambda_min from the
    same iteration on ``lambda_max I - m``, shifted back.  The spectral shift
    avoids any factorization, so positive semi-definite systems (zero modes
    included) are handled as-is.
    """
    if tol <= 0.0:
        raise InputError("tol must be positive")
    if not isinstance(m, SparseSymMatrix):
        raise InputError("sym_lambda_extremes expects a SparseSymMatrix")
    A = m.csr
    if A.nnz == 0 or np.max(np.abs(A.data)) == 0.0:
        return SpectrumEstimate(0.0, 0.0, 0.0, 0)
    try:
        lam_hi, res1, it1 = _lanczos_largest(lambda x: A @ x, m.n, tol, max_iter, seed)
    except ConvergenceError as exc:
        raise ConvergenceError(
            str(exc),
            estimate=SpectrumEstimate(exc.estimate or 0.0, 0.0, np.inf, exc.iterations),
            iterations=exc.iterations,
        ) from exc
    try:
        spread, res2, it2 = _lanczos_largest(
            lambda x: lam_hi * x - A @ x, m.n, tol, max_iter, seed + 1
        )
    except ConvergenceError as exc:
        best = SpectrumEstimate(lam_hi, lam_hi - (exc.estimate or 0.0), np.inf, it1 + exc.iterations)
        raise ConvergenceError(str(exc), estimate=best, iterations=it1 + exc.iterations) from exc
    lam_lo = lam_hi - spread
    if lam_lo > lam_hi:  # can only happen through roundoff on tiny spreads
        lam_lo = lam_hi
    return SpectrumEstimate(lam_hi, lam_lo, max(res1, res2), it1 + it2)


def dense_sym_spectrum(m, cap=DENSE_SPECTRUM_CAP, return_vectors=False):
    """Full spectrum of a symmetric matrix by cyclic Jacobi rotations.

    Eigenvalues return in ascending order; each is accurate to about
    1e-10 * ||m||_F.  Intended for the moderate sizes used by stability
    scans; beyond ``cap`` use sym_lambda_extremes instead.
    """
    if m.n > cap:
        raise SizeError(
            f"dimension {m.n} exceeds the dense cap {cap}; use sym_lambda_extremes"
        )
    a = m.toarray() if not isinstance(m, np.ndarray) else np.array(m, dtype=float)
    n = a.shape[0]
    vecs = np.eye(n) if return_vectors else None
    fro = np.linalg.norm(a)
    if fro == 0.0:
        vals = np.zeros(n)
        return (vals, vecs) if return_vectors else vals
    for _sweep in range(60):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= 5e-12 * fro:
            break
        thresh = off / n
        for p in range(n - 1):
            row = a[p, p + 1 :]
            if not np.any(np.abs(row) > thresh):
                continue
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= thresh:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                if vecs is not None:
                    vp = vecs[:, p].copy()
                    vq = vecs[:, q].copy()
                    vecs[:, p] = c * vp - s * vq
                    vecs[:, q] = s * vp + c * vq
    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    if return_vectors:
        return vals, vecs[:, order]
    return vals
