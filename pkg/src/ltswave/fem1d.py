"""1-D two-scale meshes, the three semi-discretizations, normalization to
the unit-mass form, and fine-region masks.

All three discretizations use a nodal Gauss-Lobatto basis per element.  The
continuous Galerkin path lumps the mass by Gauss-Lobatto quadrature; the
two discontinuous paths keep the consistent element mass blocks.  Wave
speed and damping are piecewise constant per element, which keeps every
element integral exact under the quadratures used here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import Polynomial
from numpy.polynomial.legendre import leggauss, legval

from .errors import AssemblyError, InputError
from .numkit import BlockDiagMatrix, DiagMatrix, SparseSymMatrix, matvec

FINE_SIZE_FACTOR = 0.75  # element counts as fine when h < 0.75 * h_coarse


# ---------------------------------------------------------------------------
# reference element


def gll_points_weights(order):
    """Gauss-Lobatto points and weights on [-1, 1] for a given basis order."""
    if order < 1:
        raise InputError("basis order must be >= 1")
    if order == 1:
        return np.array([-1.0, 1.0]), np.array([1.0, 1.0])
    if order == 2:
        return np.array([-1.0, 0.0, 1.0]), np.array([1.0, 4.0, 1.0]) / 3.0
    if order == 3:
        s = 1.0 / np.sqrt(5.0)
        return (
            np.array([-1.0, -s, s, 1.0]),
            np.array([1.0, 5.0, 5.0, 1.0]) / 6.0,
        )
    # interior nodes are the roots of P_order'
    coeff = np.zeros(order + 1)
    coeff[order] = 1.0
    interior = np.polynomial.legendre.legroots(np.polynomial.legendre.legder(coeff))
    pts = np.concatenate(([-1.0], np.sort(interior), [1.0]))
    pl = legval(pts, coeff)
    wts = 2.0 / (order * (order + 1) * pl**2)
    return pts, wts


@dataclass(frozen=True)
class ReferenceElement:
    order: int
    nodes: np.ndarray       # Gauss-Lobatto nodal points
    gll_weights: np.ndarray
    mass: np.ndarray        # consistent reference mass
    mass_inv: np.ndarray
    stiff: np.ndarray       # integral of l_i' l_j'
    grad: np.ndarray        # integral of l_i l_j'
    deriv_left: np.ndarray  # l_i'(-1)
    deriv_right: np.ndarray  # l_i'(+1)
    polys: tuple = field(repr=False, default=())

    def basis_at(self, pts):
        """Matrix of basis values, shape (len(pts), order + 1)."""
        pts = np.asarray(pts, dtype=float)
        return np.stack([p(pts) for p in self.polys], axis=1)


@lru_cache(maxsize=None)
def reference_element(order):
    nodes, gll_w = gll_points_weights(order)
    m = order + 1
    polys = []
    for i in range(m):
        others = np.delete(nodes, i)
        p = Polynomial.fromroots(others)
        polys.append(p / p(nodes[i]))
    dpolys = [p.deriv() for p in polys]
    q_pts, q_wts = leggauss(order + 1)  # exact through degree 2*order + 1
    E = np.stack([p(q_pts) for p in polys], axis=1)
    Ed = np.stack([p(q_pts) for p in dpolys], axis=1)
    mass = E.T @ (q_wts[:, None] * E)
    stiff = Ed.T @ (q_wts[:, None] * Ed)
    grad = E.T @ (q_wts[:, None] * Ed)
    return ReferenceElement(
        order=order,
        nodes=nodes,
        gll_weights=gll_w,
        mass=mass,
        mass_inv=np.linalg.inv(mass),
        stiff=stiff,
        grad=grad,
        deriv_left=np.array([p(-1.0) for p in dpolys]),
        deriv_right=np.array([p(1.0) for p in dpolys]),
        polys=tuple(polys),
    )


# ---------------------------------------------------------------------------
# meshes and coefficients


class Mesh1D:
    """Ordered vertices with per-element sizes and coarse/fine tags."""

    def __init__(self, vertices, fine=None):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise InputError("mesh needs at least two vertices")
        if not np.all(np.diff(v) > 0):
            raise InputError("mesh vertices must be strictly increasing")
        self.vertices = v
        self.h = np.diff(v)
        self.n_elements = v.size - 1
        if fine is None:
            fine = np.zeros(self.n_elements, dtype=bool)
        fine = np.asarray(fine, dtype=bool)
        if fine.shape != (self.n_elements,):
            raise InputError("fine tags must have one entry per element")
        self.fine = fine


def select_fine_elements(mesh, h_coarse):
    """Flag elements whose size falls below 0.75 of the coarse size."""
    return mesh.h < FINE_SIZE_FACTOR * h_coarse


def build_three_region_mesh(h_coarse, p):
    """[0,2] and [4,6] uniform at h_coarse; [2,4] uniform at h_coarse / p."""
    if h_coarse <= 0:
        raise InputError("h_coarse must be positive")
    if p < 1:
        raise InputError("refinement ratio p must be >= 1")
    n_c = round(2.0 / h_coarse)
    if n_c < 1 or abs(n_c * h_coarse - 2.0) > 1e-9:
        raise InputError(f"h_coarse={h_coarse} does not divide the region length 2")
    left = np.linspace(0.0, 2.0, n_c + 1)
    mid = np.linspace(2.0, 4.0, n_c * p + 1)
    right = np.linspace(4.0, 6.0, n_c + 1)
    vertices = np.concatenate([left, mid[1:], right[1:]])
    mesh = Mesh1D(vertices)
    mesh.fine = select_fine_elements(mesh, h_coarse)
    return mesh


class Coefficients:
    """Piecewise-constant wave speed and damping, one value per element."""

    def __init__(self, c, sigma, n_elements=None):
        c = np.asarray(c, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if c.ndim == 0:
            if n_elements is None:
                raise InputError("scalar coefficients need n_elements")
            c = np.full(n_elements, float(c))
        if sigma.ndim == 0:
            sigma = np.full(c.size, float(sigma))
        if c.shape != sigma.shape:
            raise InputError("wave speed and damping arrays must match")
        if np.any(c <= 0):
            raise InputError("wave speed must be positive everywhere")
        if np.any(sigma < 0):
            raise InputError("damping must be non-negative")
        self.c = c
        self.sigma = sigma

    @classmethod
    def uniform(cls, mesh, c=1.0, sigma=0.0):
        return cls(c, sigma, n_elements=mesh.n_elements)


# ---------------------------------------------------------------------------
# semi-discrete systems


@dataclass
class SemiDiscreteSecondOrder:
    kind: str
    order: int
    mesh: Mesh1D
    coef: Coefficients
    mass: object            # DiagMatrix (cg) or BlockDiagMatrix (ipdg)
    stiffness: SparseSymMatrix
    mass_sigma: object
    element_dofs: np.ndarray
    dof_x: np.ndarray
    active: np.ndarray
    bc: str

    def __post_init__(self):
        self.n_full = self.dof_x.size
        self.full_to_active = -np.ones(self.n_full, dtype=int)
        idx = np.flatnonzero(self.active)
        self.full_to_active[idx] = np.arange(idx.size)
        self.active_to_full = idx
        self.n = int(idx.size)

    def embed(self, u):
        """Active coefficient vector -> full vector (zeros on eliminated dofs)."""
        full = np.zeros(self.n_full) if u.ndim == 1 else np.zeros((self.n_full,) + u.shape[1:])
        full[self.active_to_full] = u
        return full

    def restrict(self, u_full):
        return u_full[self.active_to_full]

    def interpolate(self, fn):
        """Nodal interpolant of fn, restricted to active dofs.

        For the lumped CG space this coincides with the lumped-mass L2
        projection computed with the same Gauss-Lobatto rule.
        """
        return self.restrict(np.asarray(fn(self.dof_x), dtype=float))


@dataclass
class SemiDiscreteFirstOrder:
    kind: str
    order: int
    mesh: Mesh1D
    coef: Coefficients
    mass: BlockDiagMatrix
    conv: sp.csr_matrix     # stiffness of the first-order system, nonsymmetric
    mass_sigma: BlockDiagMatrix
    element_dofs: np.ndarray  # (n_elem, 2m): v dofs then w dofs per element
    dof_x: np.ndarray
    bc: str

    def __post_init__(self):
        self.n = self.dof_x.size
        self.n_full = self.n
        self.active = np.ones(self.n, dtype=bool)
        m = self.order + 1
        n_el = self.mesh.n_elements
        base = 2 * m * np.arange(n_el)[:, None]
        self.v_dofs = base + np.arange(m)[None, :]
        self.w_dofs = base + m + np.arange(m)[None, :]

    def embed(self, u):
        return u

    def restrict(self, u_full):
        return u_full


def _cg_dof_layout(mesh, order):
    n_el = mesh.n_elements
    element_dofs = order * np.arange(n_el)[:, None] + np.arange(order + 1)[None, :]
    ref = reference_element(order)
    n_full = order * n_el + 1
    dof_x = np.empty(n_full)
    for k in range(n_el):
        x0 = mesh.vertices[k]
        dof_x[element_dofs[k]] = x0 + 0.5 * (ref.nodes + 1.0) * mesh.h[k]
    return element_dofs, dof_x


def assemble_cg(mesh, order, coef, bc="dirichlet"):
    """Continuous Galerkin with Gauss-Lobatto mass lumping.

    Mass and damping matrices are diagonal; the stiffness integrals are
    exact for elementwise-constant wave speed.  Dirichlet boundary rows and
    columns are eliminated.
    """
    if order not in (1, 2, 3):
        raise InputError(f"continuous elements support order 1..3, got {order}")
    if bc not in ("dirichlet", "neumann"):
        raise InputError(f"unknown boundary condition {bc!r}")
    ref = reference_element(order)
    element_dofs, dof_x = _cg_dof_layout(mesh, order)
    n_full = dof_x.size
    m_diag = np.zeros(n_full)
    ms_diag = np.zeros(n_full)
    rows, cols, vals = [], [], []
    for k in range(mesh.n_elements):
        dofs = element_dofs[k]
        h = mesh.h[k]
        lump = 0.5 * h * ref.gll_weights
        m_diag[dofs] += lump
        ms_diag[dofs] += coef.sigma[k] * lump
        ke = (coef.c[k] ** 2) * (2.0 / h) * ref.stiff
        rows.append(np.repeat(dofs, order + 1))
        cols.append(np.tile(dofs, order + 1))
        vals.append(ke.ravel())
    K = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_full, n_full),
    )
    active = np.ones(n_full, dtype=bool)
    if bc == "dirichlet":
        active[0] = active[-1] = False
        keep = np.flatnonzero(active)
        K = K[keep][:, keep]
        m_act, ms_act = m_diag[keep], ms_diag[keep]
    else:
        m_act, ms_act = m_diag, ms_diag
    return SemiDiscreteSecondOrder(
        kind="cg",
        order=order,
        mesh=mesh,
        coef=coef,
        mass=DiagMatrix(m_act),
        stiffness=SparseSymMatrix(K),
        mass_sigma=DiagMatrix(ms_act),
        element_dofs=element_dofs,
        dof_x=dof_x,
        active=active,
        bc=bc,
    )


def assemble_ipdg(mesh, order, coef, alpha=20.0, bc="dirichlet"):
    """Symmetric interior-penalty DG for the second-order form.

    The bilinear form carries the volume term, the two consistency terms
    and the jump penalty with weight alpha * c^2 / h, where h is the
    smaller and c the larger of the two neighbouring element values.
    Dirichlet data enters weakly through the boundary faces.
    """
    if order < 1:
        raise InputError("basis order must be >= 1")
    if alpha <= 0:
        raise InputError("penalty parameter alpha must be positive")
    if bc not in ("dirichlet", "neumann"):
        raise InputError(f"unknown boundary condition {bc!r}")
    ref = reference_element(order)
    m = order + 1
    n_el = mesh.n_elements
    element_dofs = m * np.arange(n_el)[:, None] + np.arange(m)[None, :]
    dof_x = np.empty(m * n_el)
    for k in range(n_el):
        dof_x[element_dofs[k]] = mesh.vertices[k] + 0.5 * (ref.nodes + 1.0) * mesh.h[k]

    mass_blocks, sigma_blocks = [], []
    rows, cols, vals = [], [], []

    def scatter(dofs_i, dofs_j, block):
        rows.append(np.repeat(dofs_i, dofs_j.size))
        cols.append(np.tile(dofs_j, dofs_i.size))
        vals.append(np.asarray(block, dtype=float).ravel())

    for k in range(n_el):
        h = mesh.h[k]
        mass_blocks.append(0.5 * h * ref.mass)
        sigma_blocks.append(coef.sigma[k] * 0.5 * h * ref.mass)
        scatter(element_dofs[k], element_dofs[k], (coef.c[k] ** 2) * (2.0 / h) * ref.stiff)

    def face_terms(dofs, jump_vec, flux_vec, penalty):
        block = -np.outer(jump_vec, flux_vec) - np.outer(flux_vec, jump_vec)
        block += penalty * np.outer(jump_vec, jump_vec)
        scatter(dofs, dofs, block)

    e_first = np.zeros(m)
    e_first[0] = 1.0
    e_last = np.zeros(m)
    e_last[-1] = 1.0
    for k in range(n_el - 1):  # interior faces
        hl, hr = mesh.h[k], mesh.h[k + 1]
        cl, cr = coef.c[k], coef.c[k + 1]
        dofs = np.concatenate([element_dofs[k], element_dofs[k + 1]])
        jump = np.concatenate([e_last, -e_first])
        flux = np.concatenate(
            [0.5 * cl**2 * (2.0 / hl) * ref.deriv_right, 0.5 * cr**2 * (2.0 / hr) * ref.deriv_left]
        )
        penalty = alpha * max(cl, cr) ** 2 / min(hl, hr)
        face_terms(dofs, jump, flux, penalty)
    if bc == "dirichlet":
        # left boundary, outward normal -1
        jump = -e_first
        flux = coef.c[0] ** 2 * (2.0 / mesh.h[0]) * ref.deriv_left
        face_terms(element_dofs[0], jump, flux, alpha * coef.c[0] ** 2 / mesh.h[0])
        # right boundary, outward normal +1
        jump = e_last
        flux = coef.c[-1] ** 2 * (2.0 / mesh.h[-1]) * ref.deriv_right
        face_terms(element_dofs[-1], jump, flux, alpha * coef.c[-1] ** 2 / mesh.h[-1])

    n_full = m * n_el
    K = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_full, n_full),
    )
    return SemiDiscreteSecondOrder(
        kind="ipdg",
        order=order,
        mesh=mesh,
        coef=coef,
        mass=BlockDiagMatrix(mass_blocks),
        stiffness=SparseSymMatrix(K),
        mass_sigma=BlockDiagMatrix(sigma_blocks),
        element_dofs=element_dofs,
        dof_x=dof_x,
        active=np.ones(n_full, dtype=bool),
        bc=bc,
    )


def assemble_nodal_dg(mesh, order, coef, flux="upwind", bc="dirichlet"):
    """Nodal DG for the first-order system (v, w) with v_t + (c^2 w)_x and
    w_t + v_x volume terms and upwind or central interface fluxes.

    The interface wave speed of the upwind splitting is the larger of the
    two neighbouring values; boundary faces use mirror states enforcing
    v = 0.
    """
    if order < 1:
        raise InputError("basis order must be >= 1")
    if flux not in ("upwind", "central"):
        raise InputError(f"unknown flux {flux!r}")
    if bc != "dirichlet":
        raise InputError("the first-order discretization supports bc='dirichlet' only")
    ref = reference_element(order)
    m = order + 1
    n_el = mesh.n_elements
    element_dofs = 2 * m * np.arange(n_el)[:, None] + np.arange(2 * m)[None, :]
    dof_x = np.empty(2 * m * n_el)
    mass_blocks, sigma_blocks = [], []
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(v))

    for k in range(n_el):
        h = mesh.h[k]
        xs = mesh.vertices[k] + 0.5 * (ref.nodes + 1.0) * h
        v_ids = element_dofs[k, :m]
        w_ids = element_dofs[k, m:]
        dof_x[v_ids] = xs
        dof_x[w_ids] = xs
        mb = 0.5 * h * ref.mass
        block = np.zeros((2 * m, 2 * m))
        block[:m, :m] = mb
        block[m:, m:] = mb
        mass_blocks.append(block)
        sblock = np.zeros((2 * m, 2 * m))
        sblock[:m, :m] = coef.sigma[k] * mb
        sigma_blocks.append(sblock)
        # volume terms: rows v_i get c^2 * grad[i, j] against w_j, rows w_i
        # get grad[i, j] against v_j (the h factors cancel in 1-D)
        g = ref.grad
        for i in range(m):
            for j in range(m):
                if g[i, j] != 0.0:
                    add(v_ids[i], w_ids[j], coef.c[k] ** 2 * g[i, j])
                    add(w_ids[i], v_ids[j], g[i, j])

    def face(kl, kr):
        """Interface fluxes between left element kl and right element kr;
        either may be None for a mirror-state boundary face."""
        inner = kl if kl is not None else kr
        cl = coef.c[kl] if kl is not None else coef.c[inner]
        cr = coef.c[kr] if kr is not None else coef.c[inner]
        chat = max(cl, cr)
        # trace dofs: (vL, wL, vR, wR) as columns of the local functional
        if kl is not None:
            vL = element_dofs[kl, m - 1]
            wL = element_dofs[kl, 2 * m - 1]
        if kr is not None:
            vR = element_dofs[kr, 0]
            wR = element_dofs[kr, m]
        # coefficient vectors over (vL, wL, vR, wR); mirror states fold the
        # ghost values onto the interior ones
        fv = np.zeros(4)
        fw = np.zeros(4)
        fv[1] += 0.5 * cl**2
        fv[3] += 0.5 * cr**2
        fw[0] += 0.5
        fw[2] += 0.5
        if flux == "upwind":
            fv[0] += 0.5 * chat
            fv[2] -= 0.5 * chat
            fw[1] += 0.5 * cl**2 / chat
            fw[3] -= 0.5 * cr**2 / chat
        if kl is None:  # left domain boundary: vL = -vR, wL = wR
            fv[2] -= fv[0]
            fv[3] += fv[1]
            fw[2] -= fw[0]
            fw[3] += fw[1]
            fv[0] = fv[1] = fw[0] = fw[1] = 0.0
        if kr is None:  # right domain boundary: vR = -vL, wR = wL
            fv[0] -= fv[2]
            fv[1] += fv[3]
            fw[0] -= fw[2]
            fw[1] += fw[3]
            fv[2] = fv[3] = fw[2] = fw[3] = 0.0
        trace = []
        trace.append(vL if kl is not None else None)
        trace.append(wL if kl is not None else None)
        trace.append(vR if kr is not None else None)
        trace.append(wR if kr is not None else None)

        def scatter_row(row, coeffs):
            for dof, cval in zip(trace, coeffs):
                if dof is not None and cval != 0.0:
                    add(row, dof, cval)

        if kl is not None:
            # element kl, outward normal +1: subtract (n.F - flux*)
            own_v = np.array([0.0, cl**2, 0.0, 0.0])
            own_w = np.array([1.0, 0.0, 0.0, 0.0])
            scatter_row(element_dofs[kl, m - 1], -(own_v - fv))
            scatter_row(element_dofs[kl, 2 * m - 1], -(own_w - fw))
        if kr is not None:
            # element kr, outward normal -1
            own_v = np.array([0.0, 0.0, 0.0, -cr**2])
            own_w = np.array([0.0, 0.0, -1.0, 0.0])
            scatter_row(element_dofs[kr, 0], -(own_v + fv))
            scatter_row(element_dofs[kr, m], -(own_w + fw))

    face(None, 0)
    for k in range(n_el - 1):
        face(k, k + 1)
    face(n_el - 1, None)

    n_full = 2 * m * n_el
    C = sp.csr_matrix((vals, (rows, cols)), shape=(n_full, n_full))
    return SemiDiscreteFirstOrder(
        kind="nodal-dg",
        order=order,
        mesh=mesh,
        coef=coef,
        mass=BlockDiagMatrix(mass_blocks),
        conv=C,
        mass_sigma=BlockDiagMatrix(sigma_blocks),
        element_dofs=element_dofs,
        dof_x=dof_x,
        bc=bc,
    )


# ---------------------------------------------------------------------------
# normalization


@dataclass
class NormalizedSystem:
    """Unit-mass form consumed by the integrators.

    Second-order systems carry the symmetric operator ``a`` and the
    damping ``d`` acting on z = M^(1/2) U.  First-order systems carry the
    explicit generator ``b`` with dy/dt = b y.
    """

    n: int
    first_order: bool
    a: SparseSymMatrix | None = None
    d: object | None = None
    b: sp.csr_matrix | None = None
    source: object | None = None     # R(t) -> vector, already normalized
    m_half: object | None = None
    m_inv_half: object | None = None

    def to_z(self, u):
        return matvec(self.m_half, u)

    def from_z(self, z):
        return matvec(self.m_inv_half, z)

    @property
    def damped(self):
        if self.d is None:
            return False
        if isinstance(self.d, DiagMatrix):
            return bool(np.any(self.d.d != 0.0))
        return any(np.any(b != 0.0) for b in self.d.blocks)


def _block_sqrt_pair(block):
    vals, vecs = np.linalg.eigh(block)
    if np.any(vals <= 0.0):
        raise AssemblyError("mass block is not positive definite")
    half = (vecs * np.sqrt(vals)) @ vecs.T
    inv_half = (vecs / np.sqrt(vals)) @ vecs.T
    return half, inv_half


def normalize(sd, source=None):
    """Scale a semi-discrete system by M^(-1/2) (second-order form) or fold
    M^(-1) into an explicit generator (first-order form)."""
    if isinstance(sd, SemiDiscreteFirstOrder):
        if source is not None:
            raise InputError("the first-order path is homogeneous only")
        inv_blocks = [np.linalg.solve(b, np.eye(b.shape[0])) for b in sd.mass.blocks]
        minv = sp.block_diag(inv_blocks, format="csr")
        msig = sp.block_diag(sd.mass_sigma.blocks, format="csr")
        b_mat = (minv @ (-msig - sd.conv)).tocsr()
        b_mat.sum_duplicates()
        return NormalizedSystem(n=sd.n, first_order=True, b=b_mat)

    if isinstance(sd.mass, DiagMatrix):
        md = sd.mass.d
        if np.any(md <= 0.0):
            raise AssemblyError("lumped mass has non-positive entries")
        s = 1.0 / np.sqrt(md)
        coo = sd.stiffness.csr.tocoo()
        a_csr = sp.csr_matrix(
            (coo.data * s[coo.row] * s[coo.col], (coo.row, coo.col)), shape=coo.shape
        )
        a = SparseSymMatrix(a_csr)
        d = DiagMatrix(sd.mass_sigma.d / md)
        m_half = DiagMatrix(np.sqrt(md))
        m_inv_half = DiagMatrix(s)
    else:
        halves, inv_halves = [], []
        for b in sd.mass.blocks:
            h, ih = _block_sqrt_pair(b)
            halves.append(h)
            inv_halves.append(ih)
        s_inv = sp.block_diag(inv_halves, format="csr")
        a = SparseSymMatrix((s_inv @ sd.stiffness.csr @ s_inv).tocsr())
        d_blocks = [
            ih @ ms @ ih for ih, ms in zip(inv_halves, sd.mass_sigma.blocks)
        ]
        d = BlockDiagMatrix(d_blocks)
        m_half = BlockDiagMatrix(halves)
        m_inv_half = BlockDiagMatrix(inv_halves)
    r = None
    if source is not None:
        r = lambda t, _s=source, _m=m_inv_half: matvec(_m, np.asarray(_s(t), dtype=float))
    return NormalizedSystem(
        n=sd.n,
        first_order=False,
        a=a,
        d=d,
        source=r,
        m_half=m_half,
        m_inv_half=m_inv_half,
    )


# ---------------------------------------------------------------------------
# fine masks


@dataclass
class FineMask:
    """Per-dof selector of the locally refined region (plus overlap)."""

    flags: np.ndarray
    overlap: int = 0

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        self.indices = np.flatnonzero(self.flags)
        self.coarse_indices = np.flatnonzero(~self.flags)

    @property
    def any_fine(self):
        return bool(self.indices.size)

    @classmethod
    def none(cls, n):
        return cls(np.zeros(n, dtype=bool), 0)

    @classmethod
    def full(cls, n):
        return cls(np.ones(n, dtype=bool), 0)


def build_fine_mask(mesh, sd, overlap=0):
    """Dof mask covering fine-tagged elements plus ``overlap`` adjacent
    coarse elements on each side; shared interface dofs are included."""
    if overlap < 0:
        raise InputError("overlap must be >= 0")
    flags = mesh.fine.copy()
    for _ in range(overlap):
        grown = flags.copy()
        grown[:-1] |= flags[1:]
        grown[1:] |= flags[:-1]
        flags = grown
    dof_flags = np.zeros(sd.n_full, dtype=bool)
    for k in np.flatnonzero(flags):
        dof_flags[sd.element_dofs[k]] = True
    if isinstance(sd, SemiDiscreteSecondOrder):
        dof_flags = dof_flags[sd.active_to_full]
    return FineMask(dof_flags, overlap)


# ---------------------------------------------------------------------------
# projection and error measurement


def l2_project(sd, fn, w_fn=None):
    """L2 projection of target data onto the discrete space.

    Continuous elements use the lumped-mass projection (equal to nodal
    interpolation at the Gauss-Lobatto points); discontinuous spaces solve
    the consistent element mass against a Gauss quadrature of the data.
    For the first-order system both fields are required.
    """
    if isinstance(sd, SemiDiscreteFirstOrder):
        if w_fn is None:
            raise InputError("first-order projection needs both fields")
        out = np.empty(sd.n)
        out[sd.v_dofs.ravel()] = _dg_project_field(sd, fn).ravel()
        out[sd.w_dofs.ravel()] = _dg_project_field(sd, w_fn).ravel()
        return out
    if sd.kind == "cg":
        return sd.interpolate(fn)
    vals = _dg_project_field(sd, fn)
    out = np.empty(sd.n_full)
    for k in range(sd.mesh.n_elements):
        out[sd.element_dofs[k]] = vals[k]
    return out


def _dg_project_field(sd, fn):
    """Per-element consistent projection; returns (n_elem, order+1) values."""
    ref = reference_element(sd.order)
    q_pts, q_wts = leggauss(sd.order + 1)
    E = ref.basis_at(q_pts)
    mesh = sd.mesh
    mid = 0.5 * (mesh.vertices[:-1] + mesh.vertices[1:])
    xq = mid[:, None] + 0.5 * mesh.h[:, None] * q_pts[None, :]
    fq = np.asarray(fn(xq), dtype=float)
    rhs = (fq * q_wts[None, :]) @ E
    return rhs @ ref.mass_inv.T


def _eval_on_quad(sd, u_full, element_dofs, n_q):
    ref = reference_element(sd.order)
    q_pts, q_wts = leggauss(n_q)
    E = ref.basis_at(q_pts)
    mesh = sd.mesh
    mid = 0.5 * (mesh.vertices[:-1] + mesh.vertices[1:])
    xq = mid[:, None] + 0.5 * mesh.h[:, None] * q_pts[None, :]
    vals = u_full[element_dofs] @ E.T
    return xq, vals, q_wts


def error_l2(sd, u, exact_fn, n_quad=None):
    """Broken L2 distance between a coefficient vector and a target function.

    ``u`` is an active vector for second-order systems.  ``n_quad`` defaults
    to 2 (order + 1) Gauss points per element: interpolation wiggle has
    order + 1 sign changes per element, so the minimal rule aliases it.
    """
    n_q = n_quad if n_quad is not None else 2 * (sd.order + 1)
    if isinstance(sd, SemiDiscreteFirstOrder):
        raise InputError("use error_l2_pair for the first-order system")
    u_full = sd.embed(u)
    xq, vals, q_wts = _eval_on_quad(sd, u_full, sd.element_dofs, n_q)
    diff = vals - np.asarray(exact_fn(xq), dtype=float)
    per_el = (diff**2) @ q_wts
    return float(np.sqrt(np.sum(0.5 * sd.mesh.h * per_el)))


def error_l2_pair(sd, q, v_fn, w_fn, n_quad=None):
    """Combined L2 error of the (v, w) fields of the first-order system."""
    n_q = n_quad if n_quad is not None else 2 * (sd.order + 1)
    xq_v, vals_v, q_wts = _eval_on_quad(sd, q, sd.v_dofs, n_q)
    xq_w, vals_w, _ = _eval_on_quad(sd, q, sd.w_dofs, n_q)
    dv = vals_v - np.asarray(v_fn(xq_v), dtype=float)
    dw = vals_w - np.asarray(w_fn(xq_w), dtype=float)
    per_el = (dv**2) @ q_wts + (dw**2) @ q_wts
    return float(np.sqrt(np.sum(0.5 * sd.mesh.h * per_el)))
