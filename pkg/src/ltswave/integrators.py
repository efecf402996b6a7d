"""Time-stepping schemes: the leap-frog family (orders 2 and 4, plus the
damped leap-frog/Crank-Nicolson blend) with local substeps on masked
degrees of freedom, and the Adams-Bashforth family for the first-order
form.  A step is a pure function from state to state; stepper classes
exist to hold the precomputed column-split matrices of the hot loops.

States are immutable; every stepper also accepts a batch of states as the
columns of ``(n, m)`` arrays, which the stability trials use to run several
random seeds at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .coefficients import ab_alpha, ab_coefficients, alpha_p_table
from .errors import InputError, SchemeMismatchError, StateError
from .fem1d import FineMask
from .numkit import (
    DiagMatrix,
    SparseSymMatrix,
    block_solve,
    matvec,
    shift_identity,
)

SCHEMES = ("lf2", "lfme4", "lfcn2", "ab")


@dataclass(frozen=True)
class LtsConfig:
    """Global step, refinement ratio and scheme selection."""

    dt: float
    p: int = 1
    scheme: str = "lf2"
    k: int = 4  # multistep order, AB family only

    def __post_init__(self):
        if self.dt <= 0:
            raise InputError("dt must be positive")
        if self.p < 1:
            raise InputError("refinement ratio p must be >= 1")
        if self.scheme not in SCHEMES:
            raise InputError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.scheme == "ab" and self.k not in (2, 3, 4):
            raise InputError("AB family supports k in {2, 3, 4}")

    @property
    def dtau(self):
        return self.dt / self.p


@dataclass(frozen=True)
class TwoStepState:
    """Leap-frog family state: newest value, previous value, current time."""

    z: np.ndarray
    z_prev: np.ndarray
    t: float

    def __post_init__(self):
        if self.z.shape != self.z_prev.shape:
            raise StateError("state vectors must have equal shapes")


@dataclass(frozen=True)
class MultiStepState:
    """Multistep state, newest first.

    ``ys`` holds y_n .. y_{n-k+1}; ``ws`` caches the frozen coarse products
    of y_{n-1} .. y_{n-k+1}; ``fine`` holds the masked fractional history
    P y_{n-1/p} .. P y_{n-(k-1)/p}.
    """

    ys: tuple
    t: float
    ws: tuple = ()
    fine: tuple = ()


def _mask_mul(flags, v):
    return flags * v if v.ndim == 1 else flags[:, None] * v


class _SplitColumns:
    """Products against masked inputs through column-sliced CSR copies."""

    def __init__(self, csr_mat, mask):
        self.shape0 = csr_mat.shape[0]
        csc = csr_mat.tocsc()
        self.fine_idx = mask.indices
        self.coarse_idx = mask.coarse_indices
        self.m_fine = csc[:, self.fine_idx].tocsr() if self.fine_idx.size else None
        self.m_coarse = csc[:, self.coarse_idx].tocsr() if self.coarse_idx.size else None

    def _zero(self, v):
        return np.zeros((self.shape0,) + v.shape[1:])

    def times_fine(self, v):
        if self.m_fine is None:
            return self._zero(v)
        return self.m_fine @ v[self.fine_idx]

    def times_coarse(self, v):
        if self.m_coarse is None:
            return self._zero(v)
        return self.m_coarse @ v[self.coarse_idx]


def _require_undamped(sys):
    if sys.first_order:
        raise InputError("leap-frog family needs the second-order form")
    if sys.damped:
        raise SchemeMismatchError(
            "this scheme integrates undamped systems only; use lfcn2 or the AB family"
        )


def _source_or_none(sys):
    return sys.source


# ---------------------------------------------------------------------------
# leap-frog family


class LeapFrog2:
    """Classic three-level scheme z_{n+1} = 2 z_n - z_{n-1} + dt^2 (R_n - A z_n)."""

    def __init__(self, sys, dt):
        _require_undamped(sys)
        self.a = sys.a
        self.src = _source_or_none(sys)
        self.dt = dt

    def step(self, state):
        forcing = -matvec(self.a, state.z)
        if self.src is not None:
            forcing = forcing + self.src(state.t)
        z_next = 2.0 * state.z - state.z_prev + self.dt**2 * forcing
        return TwoStepState(z_next, state.z, state.t + self.dt)


class LtsLf2:
    """Second-order local time-stepping leap-frog with p substeps on the
    masked region."""

    def __init__(self, sys, mask, dt, p):
        _require_undamped(sys)
        self.split = _SplitColumns(sys.a.csr, mask)
        self.flags = mask.flags
        self.src = _source_or_none(sys)
        self.dt = float(dt)
        self.p = int(p)
        self.dtau = self.dt / self.p

    def step(self, state):
        z, t = state.z, state.t
        # frozen coarse right-hand side, one coarse product per global step
        w = -self.split.times_coarse(z)
        if self.src is not None:
            w = w + _mask_mul(~self.flags, self.src(t))
        q_prev = 2.0 * z
        forcing = 2.0 * w - self.split.times_fine(q_prev)
        if self.src is not None:
            forcing = forcing + 2.0 * _mask_mul(self.flags, self.src(t))
        q_cur = q_prev + 0.5 * self.dtau**2 * forcing
        for m in range(1, self.p):
            forcing = 2.0 * w - self.split.times_fine(q_cur)
            if self.src is not None:
                pair = self.src(t + m * self.dtau) + self.src(t - m * self.dtau)
                forcing = forcing + _mask_mul(self.flags, pair)
            q_cur, q_prev = 2.0 * q_cur - q_prev + self.dtau**2 * forcing, q_cur
        z_next = -state.z_prev + q_cur
        return TwoStepState(z_next, z, t + self.dt)


class LtsLfme4:
    """Fourth-order local time-stepping scheme built on the modified
    equation (Taylor-corrected leap-frog) substeps."""

    def __init__(self, sys, mask, dt, p):
        _require_undamped(sys)
        self.split = _SplitColumns(sys.a.csr, mask)
        self.a = sys.a
        self.flags = mask.flags
        self.src = _source_or_none(sys)
        self.dt = float(dt)
        self.p = int(p)
        self.dtau = self.dt / self.p

    def step(self, state):
        z, t = state.z, state.t
        dt, dtau, p = self.dt, self.dtau, self.p
        flags = self.flags
        src = self.src
        az = matvec(self.a, z)
        w1 = -self.split.times_coarse(z)
        # A (I-P) A z computed as (A restricted to coarse columns) applied to A z
        w2 = self.split.times_coarse(az)
        r1 = None
        if src is not None:
            rn = src(t)
            w1 = w1 + _mask_mul(~flags, rn)
            r1 = src(t - 0.5 * dt) - 2.0 * rn + src(t + 0.5 * dt)
            w2 = w2 - self.split.times_coarse(rn)
        base = 2.0 * w1
        if r1 is not None:
            base = base + (2.0 / 3.0) * _mask_mul(~flags, r1)
        q_prev = 2.0 * z
        u = base - self.split.times_fine(q_prev)
        if src is not None:
            u = u + 2.0 * _mask_mul(flags, src(t))
        inner = 2.0 * w2 - self.split.times_fine(u)
        if r1 is not None:
            inner = inner + 2.0 * (2.0 / dt) ** 2 * _mask_mul(flags, r1)
        q_cur = q_prev + 0.5 * dtau**2 * u + dtau**4 / 24.0 * inner
        for m in range(1, p):
            u1 = base + (m * dtau) ** 2 * w2 - self.split.times_fine(q_cur)
            if src is not None:
                pair = src(t + m * dtau) + src(t - m * dtau)
                u1 = u1 + _mask_mul(flags, pair)
            u2 = 2.0 * w2 - self.split.times_fine(u1)
            if src is not None:
                r = (
                    src(t + (m - 0.5) * dtau)
                    - 2.0 * src(t + m * dtau)
                    + src(t + (m + 0.5) * dtau)
                    + src(t - (m + 0.5) * dtau)
                    - 2.0 * src(t - m * dtau)
                    + src(t - (m - 0.5) * dtau)
                )
                u2 = u2 + (2.0 * p / (m * dt)) ** 2 * _mask_mul(flags, r)
            q_next = 2.0 * q_cur - q_prev + dtau**2 * u1 + dtau**4 / 12.0 * u2
            q_prev, q_cur = q_cur, q_next
        z_next = -state.z_prev + q_cur
        return TwoStepState(z_next, z, t + dt)


class LtsLfcn2:
    """Damped second-order scheme: leap-frog substeps with the damping term
    treated in Crank-Nicolson fashion, forward and backward in local time."""

    def __init__(self, sys, mask, dt, p):
        if sys.first_order:
            raise InputError("lfcn2 needs the second-order form")
        self.a = sys.a
        self.split = _SplitColumns(sys.a.csr, mask)
        self.flags = mask.flags
        self.src = _source_or_none(sys)
        self.dt = float(dt)
        self.p = int(p)
        self.dtau = self.dt / self.p
        d = sys.d if sys.d is not None else DiagMatrix(np.zeros(sys.n))
        self.d = d
        self.plus_glob = shift_identity(d, 0.5 * self.dt)
        self.minus_glob = shift_identity(d, -0.5 * self.dt)
        self.plus_loc = shift_identity(d, 0.5 * self.dtau)
        self.minus_loc = shift_identity(d, -0.5 * self.dtau)

    def step(self, state):
        z, t = state.z, state.t
        dt, dtau, p = self.dt, self.dtau, self.p
        src = self.src
        rn = src(t) if src is not None else None
        az = matvec(self.a, z)
        dz = (z - state.z_prev) / dt
        rhs = matvec(self.minus_glob, dz) - dt * az
        if rn is not None:
            rhs = rhs + dt * rn
        zp = 0.5 * (dz + block_solve(self.plus_glob, rhs))
        w = -self.split.times_coarse(z)
        if rn is not None:
            w = w + _mask_mul(~self.flags, rn)
        base = w - self.split.times_fine(z) - matvec(self.d, zp)
        if rn is not None:
            base = base + _mask_mul(self.flags, rn)
        half = 0.5 * dtau**2 * base
        fwd_prev, bwd_prev = z, z
        fwd = z + dtau * zp + half
        bwd = z - dtau * zp + half
        for m in range(1, p):
            f_forcing = w - self.split.times_fine(fwd)
            b_forcing = w - self.split.times_fine(bwd)
            if src is not None:
                f_forcing = f_forcing + _mask_mul(self.flags, src(t + m * dtau))
                b_forcing = b_forcing + _mask_mul(self.flags, src(t - m * dtau))
            f_rhs = 2.0 * fwd - matvec(self.minus_loc, fwd_prev) + dtau**2 * f_forcing
            b_rhs = 2.0 * bwd - matvec(self.plus_loc, bwd_prev) + dtau**2 * b_forcing
            fwd, fwd_prev = block_solve(self.plus_loc, f_rhs), fwd
            bwd, bwd_prev = block_solve(self.minus_loc, b_rhs), bwd
        tail = block_solve(self.plus_glob, matvec(self.minus_glob, -state.z_prev + bwd))
        z_next = fwd + tail
        return TwoStepState(z_next, z, t + dt)


def build_Ap(a, mask, p, dt):
    """Effective one-step operator of the local leap-frog scheme:

        A_p = A - (1/p^2) sum_{j=1}^{p-1} (dt/p)^(2j) alpha_j (A P)^j A

    with the integer weights from the substep expansion.  Assembled as an
    explicitly symmetrized sparse matrix; asymmetry beyond 1e-12 relative
    raises an internal consistency error.
    """
    if p < 1:
        raise InputError("p must be >= 1")
    if p == 1 or not mask.any_fine:
        return a
    weights = alpha_p_table(p).alpha
    dtau = dt / p
    proj = sp.diags(mask.flags.astype(float), format="csr")
    acc = a.csr.copy()
    term = a.csr
    for j in range(1, p):
        term = a.csr @ (proj @ term)
        # each (A P)^j A is symmetric exactly; resymmetrize so roundoff
        # cannot compound across the nested products
        term = ((term + term.T) * 0.5).tocsr()
        acc = acc - (weights[j - 1] / p**2) * dtau ** (2 * j) * term
    return SparseSymMatrix(acc, sym_rtol=1e-12)


def lts_energy(state, a_or_ap, dt):
    """Discrete energy of the leap-frog update at the half step between the
    two stored levels (state.z is the newer one)."""
    u = (state.z - state.z_prev) / dt
    avg = 0.5 * (state.z + state.z_prev)
    au = matvec(a_or_ap, u)
    a_avg = matvec(a_or_ap, avg)
    return 0.5 * (float(u @ u) - 0.25 * dt**2 * float(au @ u) + float(a_avg @ avg))


# ---------------------------------------------------------------------------
# functional faces of the leap-frog family


def leapfrog_step(sys, state, dt):
    return LeapFrog2(sys, dt).step(state)


def lts_lf2_step(sys, mask, state, cfg):
    return LtsLf2(sys, mask, cfg.dt, cfg.p).step(state)


def lts_lfme4_step(sys, mask, state, cfg):
    return LtsLfme4(sys, mask, cfg.dt, cfg.p).step(state)


def lts_lfcn2_step(sys, mask, state, cfg):
    return LtsLfcn2(sys, mask, cfg.dt, cfg.p).step(state)


# ---------------------------------------------------------------------------
# first-order operators and the Adams-Bashforth family


class SecondOrderWaveOperator:
    """Apply-only generator of y = (z, z'): dy/dt = (z', -A z - D z').

    Never assembled as an explicit matrix; masked applications go through
    column-sliced copies of A.
    """

    def __init__(self, sys, mask=None):
        if sys.first_order:
            raise InputError("expected a second-order normalized system")
        self.nz = sys.n
        self.dim = 2 * sys.n
        self.a = sys.a
        self.d = sys.d if (sys.d is not None and sys.damped) else None
        if mask is None:
            mask = FineMask.none(sys.n)
        if mask.flags.size != sys.n:
            raise InputError("mask must cover the z degrees of freedom")
        self.mask = mask
        self.stacked_mask = FineMask(np.concatenate([mask.flags, mask.flags]), mask.overlap)
        self.split = _SplitColumns(sys.a.csr, mask)

    def apply(self, y):
        z, zp = y[: self.nz], y[self.nz :]
        top = zp
        bottom = -matvec(self.a, z)
        if self.d is not None:
            bottom = bottom - matvec(self.d, zp)
        return np.concatenate([top, bottom])

    def apply_fine(self, y):
        z, zp = y[: self.nz], y[self.nz :]
        top = _mask_mul(self.mask.flags, zp)
        bottom = -self.split.times_fine(z)
        if self.d is not None:
            bottom = bottom - matvec(self.d, top)
        return np.concatenate([top, bottom])

    def apply_coarse(self, y):
        z, zp = y[: self.nz], y[self.nz :]
        top = _mask_mul(~self.mask.flags, zp)
        bottom = -self.split.times_coarse(z)
        if self.d is not None:
            bottom = bottom - matvec(self.d, top)
        return np.concatenate([top, bottom])


class FirstOrderDgOperator:
    """Explicit sparse generator dy/dt = B y of the first-order system."""

    def __init__(self, sys, mask=None):
        if not sys.first_order:
            raise InputError("expected a first-order normalized system")
        self.dim = sys.n
        self.b = sys.b
        if mask is None:
            mask = FineMask.none(sys.n)
        if mask.flags.size != sys.n:
            raise InputError("mask size does not match the system")
        self.mask = mask
        self.stacked_mask = mask
        self.split = _SplitColumns(sys.b, mask)

    def apply(self, y):
        return self.b @ y

    def apply_fine(self, y):
        return self.split.times_fine(y)

    def apply_coarse(self, y):
        return self.split.times_coarse(y)


def make_operator(sys, mask=None):
    """Wrap a normalized system as the apply-only generator the multistep
    schemes consume."""
    if sys.first_order:
        return FirstOrderDgOperator(sys, mask)
    return SecondOrderWaveOperator(sys, mask)


class AdamsBashforth:
    """Classical k-step scheme y_{n+1} = y_n + dt B sum_j alpha_j y_{n-j}."""

    def __init__(self, op, dt, k):
        self.op = op
        self.dt = float(dt)
        self.k = int(k)
        self.alpha = np.array([float(a) for a in ab_alpha(k)])

    def step(self, state):
        if len(state.ys) < self.k:
            raise StateError(f"need {self.k} history values, have {len(state.ys)}")
        comb = self.alpha[0] * state.ys[0]
        for j in range(1, self.k):
            comb = comb + self.alpha[j] * state.ys[j]
        y_next = state.ys[0] + self.dt * self.op.apply(comb)
        return MultiStepState(ys=(y_next,) + tuple(state.ys[: self.k - 1]), t=state.t + self.dt)


class LtsAdamsBashforth:
    """k-step scheme with p local substeps on the masked region.

    Per global step: one coarse product, then p substeps combining the
    frozen coarse history through the substep weights with fresh masked
    products of the local extrapolation.
    """

    def __init__(self, op, mask, dt, k, p):
        self.op = op
        if mask is not None:
            flags = mask.flags
            if flags.size == op.stacked_mask.flags.size:
                ok = np.array_equal(flags, op.stacked_mask.flags)
            elif hasattr(op, "mask") and flags.size == op.mask.flags.size:
                ok = np.array_equal(flags, op.mask.flags)
            else:
                ok = False
            if not ok:
                raise InputError("mask disagrees with the operator's built-in mask")
        self.mask = op.stacked_mask
        self.dt = float(dt)
        self.k = int(k)
        self.p = int(p)
        self.dtau = self.dt / self.p
        cs = ab_coefficients(k, p)
        self.alpha = cs.alpha_f
        self.beta = cs.beta_f  # (p, k)

    def step(self, state):
        k, p, dtau = self.k, self.p, self.dtau
        if len(state.ys) < k:
            raise StateError(f"need {k} history values, have {len(state.ys)}")
        if k > 1 and (len(state.ws) < k - 1 or len(state.fine) < k - 1):
            raise StateError("missing cached coarse products or fractional history")
        w_n = self.op.apply_coarse(state.ys[0])
        ws_all = (w_n,) + tuple(state.ws[: k - 1])
        stacked = np.stack(ws_all)  # (k, n) or (k, n, m)
        beta_terms = np.einsum("mk,k...->m...", self.beta, stacked)
        ring = [state.ys[0]] + [np.asarray(f) for f in state.fine[: k - 1]]
        for m in range(p):
            comb = self.alpha[0] * ring[0]
            for ell in range(1, k):
                comb = comb + self.alpha[ell] * ring[ell]
            y_new = ring[0] + dtau * beta_terms[m] + dtau * self.op.apply_fine(comb)
            ring.insert(0, y_new)
        y_next = ring[0]
        flags = self.mask.flags
        new_fine = tuple(_mask_mul(flags, ring[ell]) for ell in range(1, k))
        new_ws = (w_n,) + tuple(state.ws[: k - 2])
        return MultiStepState(
            ys=(y_next,) + tuple(state.ys[: k - 1]),
            ws=new_ws,
            fine=new_fine,
            t=state.t + self.dt,
        )

    def prime_state(self, ys, t, fine=None):
        """Assemble a full state from plain history vectors (newest first);
        computes the cached coarse products, and defaults the fractional
        history to masked copies of the global history (exact for p = 1)."""
        ys = tuple(np.asarray(y, dtype=float) for y in ys)
        ws = tuple(self.op.apply_coarse(y) for y in ys[1 : self.k])
        if fine is None:
            fine = tuple(_mask_mul(self.mask.flags, y) for y in ys[1 : self.k])
        return MultiStepState(ys=ys, ws=ws, fine=tuple(fine), t=t)


def ab_step(op, state, dt, k):
    return AdamsBashforth(op, dt, k).step(state)


def lts_abk_step(op, mask, state, cfg):
    return LtsAdamsBashforth(op, mask, cfg.dt, cfg.k, cfg.p).step(state)


def rk4_bootstrap(apply_fn, y0, dt, steps):
    """Classical four-stage Runge-Kutta history generator for dy/dt = B y.

    Returns the list [y_1, ..., y_steps]; pass a negative dt to walk
    backwards in time (used to seed fractional history).
    """
    if steps < 1:
        raise InputError("steps must be >= 1")
    y = np.asarray(y0, dtype=float)
    out = []
    for _ in range(steps):
        k1 = apply_fn(y)
        k2 = apply_fn(y + 0.5 * dt * k1)
        k3 = apply_fn(y + 0.5 * dt * k2)
        k4 = apply_fn(y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out.append(y)
    return out
