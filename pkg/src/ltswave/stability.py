"""CFL stability characterization: spectral scans for the local leap-frog
scheme through its effective one-step operator, and empirical largest
stable step searches for every scheme.

Empirical trials integrate random initial data (three seeds at once, as
columns) and call a step size unstable when the state grows by more than
10^3 over the trial horizon.  The trial seed comes from LTSWAVE_SEED when
set, so scans are reproducible by default yet re-seedable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import BracketError, DegenerateSystemError, InputError
from .integrators import (
    LtsAdamsBashforth,
    LtsLf2,
    LtsLfcn2,
    LtsLfme4,
    TwoStepState,
    build_Ap,
    rk4_bootstrap,
)
from .numkit import dense_sym_spectrum, sym_lambda_extremes

DEFAULT_TRIAL_STEPS = 5000
GROWTH_THRESHOLD = 1.0e3
N_SEEDS = 3
DEFAULT_NU_GRID = np.round(np.arange(0.02, 1.2001, 0.02), 10)
NU_REFINE_TOL = 0.005
_DEFAULT_SEED = 20270318


def trial_seed():
    return int(os.environ.get("LTSWAVE_SEED", _DEFAULT_SEED))


@dataclass
class StabilityScan:
    """Verdict table of a step-ratio scan.

    ``nu_max`` is the end of the contiguous stable prefix: every ratio up
    to it is verified stable.  Without overlap the local leap-frog scheme
    exhibits razor-thin instability islands (scaled eigenvalues exceeding
    one by as little as 1e-7), so verdicts need not be monotone;
    ``nu_last_stable`` records the largest individually stable grid point.
    """

    scheme: str
    p: int
    overlap: int
    nu_grid: np.ndarray
    stable: np.ndarray
    detail: np.ndarray  # offending scaled eigenvalue per point
    nu_max: float
    nu_last_stable: float
    dt_ref: float


def lf_reference_step(a, tol=1e-8):
    """Largest stable step of the plain leap-frog scheme, 2 / sqrt(lambda_max)."""
    est = sym_lambda_extremes(a, tol=tol)
    if est.lambda_max <= 0.0:
        raise DegenerateSystemError("operator has no positive eigenvalue; no CFL reference")
    return 2.0 / np.sqrt(est.lambda_max)


def _scaled_extremes(a, mask, p, dt, cap=4096, tol=1e-9):
    ap = build_Ap(a, mask, p, dt)
    if ap.n <= cap:
        vals = dense_sym_spectrum(ap, cap=cap)
        lo, hi = float(vals[0]), float(vals[-1])
    else:
        est = sym_lambda_extremes(ap, tol=tol)
        lo, hi = est.lambda_min, est.lambda_max
    quarter = 0.25 * dt * dt
    return quarter * lo, quarter * hi


def lf2_spectral_verdict(a, mask, p, dt, cap=4096):
    """Stable iff the scaled spectrum of the effective operator sits in
    [0, 1); an absolute roundoff guard of 1e-12 is applied at both ends."""
    s_lo, s_hi = _scaled_extremes(a, mask, p, dt, cap=cap)
    guard = 1e-12 * max(1.0, abs(s_hi))
    stable = (s_hi < 1.0 - 1e-12) and (s_lo >= -guard)
    detail = s_lo if s_lo < -guard else s_hi
    return stable, detail


def spectral_scan_lf2(a, mask, p, nu_grid=None, dt_ref=None, cap=4096, refine_tol=NU_REFINE_TOL):
    """Scan step-size ratios nu = dt / dt_ref for the local leap-frog
    scheme and return verdicts plus the refined largest stable ratio."""
    if nu_grid is None:
        nu_grid = DEFAULT_NU_GRID
    nu_grid = np.asarray(nu_grid, dtype=float)
    if nu_grid.size == 0 or np.any(np.diff(nu_grid) <= 0):
        raise InputError("nu grid must be non-empty and strictly ascending")
    if dt_ref is None:
        dt_ref = lf_reference_step(a)
    stable = np.zeros(nu_grid.size, dtype=bool)
    detail = np.zeros(nu_grid.size)
    for i, nu in enumerate(nu_grid):
        stable[i], detail[i] = lf2_spectral_verdict(a, mask, p, nu * dt_ref, cap=cap)

    def refine(lo, hi):
        while hi - lo > refine_tol:
            mid = 0.5 * (lo + hi)
            ok, _ = lf2_spectral_verdict(a, mask, p, mid * dt_ref, cap=cap)
            if ok:
                lo = mid
            else:
                hi = mid
        return lo

    if not stable.any():
        nu_max = nu_last = 0.0
    else:
        if stable.all():
            prefix_end = nu_grid.size - 1
        else:
            prefix_end = int(np.argmin(stable)) - 1  # last index before the first failure
        if prefix_end < 0:
            nu_max = 0.0
        else:
            lo = float(nu_grid[prefix_end])
            hi = float(nu_grid[prefix_end + 1]) if prefix_end + 1 < nu_grid.size else lo * 1.2
            nu_max = refine(lo, hi)
        last = int(np.max(np.flatnonzero(stable)))
        lo = float(nu_grid[last])
        hi = float(nu_grid[last + 1]) if last + 1 < nu_grid.size else lo * 1.2
        nu_last = refine(lo, hi)
    return StabilityScan(
        scheme="lf2",
        p=p,
        overlap=mask.overlap,
        nu_grid=nu_grid,
        stable=stable,
        detail=detail,
        nu_max=nu_max,
        nu_last_stable=nu_last,
        dt_ref=dt_ref,
    )


# ---------------------------------------------------------------------------
# empirical trials


def _seed_columns(rng, n, m=N_SEEDS):
    cols = rng.standard_normal((n, m))
    cols /= np.linalg.norm(cols, axis=0)
    return cols


def _run_growth(step, norms_of, state, n_steps, threshold):
    peak = 1.0
    for i in range(n_steps):
        state = step(state)
        if (i & 15) == 0 or i == n_steps - 1:
            peak = max(peak, norms_of(state))
            if peak > threshold:
                return False, peak
    peak = max(peak, norms_of(state))
    return peak <= threshold, peak


def leapfrog_family_trial(sys, mask, scheme, p, n_steps=DEFAULT_TRIAL_STEPS,
                          threshold=GROWTH_THRESHOLD, seed=None):
    """Factory: dt -> (stable, growth) for the two-level schemes."""
    cls = {"lf2": LtsLf2, "lfme4": LtsLfme4, "lfcn2": LtsLfcn2}[scheme]

    def trial(dt):
        rng = np.random.default_rng(trial_seed() if seed is None else seed)
        z0 = _seed_columns(rng, sys.n)
        z1 = _seed_columns(rng, sys.n)
        stepper = cls(sys, mask, dt, p)
        state = TwoStepState(z0, z1, 0.0)
        norms = lambda s: float(np.max(np.linalg.norm(s.z, axis=0)))
        return _run_growth(stepper.step, norms, state, n_steps, threshold)

    return trial


def ab_trial(op, k, p, n_steps=DEFAULT_TRIAL_STEPS, threshold=GROWTH_THRESHOLD, seed=None):
    """Factory: dt -> (stable, growth) for the multistep schemes; history is
    seeded by backward Runge-Kutta from random initial data."""

    def trial(dt):
        rng = np.random.default_rng(trial_seed() if seed is None else seed)
        y0 = _seed_columns(rng, op.dim)
        ys = [y0]
        if k > 1:
            ys += rk4_bootstrap(op.apply, y0, -dt, k - 1)
        lts = LtsAdamsBashforth(op, None, dt, k, p)
        fine = None
        if k > 1:
            frac = rk4_bootstrap(op.apply, y0, -dt / p, k - 1)
            flags = op.stacked_mask.flags
            fine = tuple(flags[:, None] * f for f in frac)
        state = lts.prime_state(tuple(ys), 0.0, fine=fine)
        norms = lambda s: float(np.max(np.linalg.norm(s.ys[0], axis=0)))
        return _run_growth(lts.step, norms, state, n_steps, threshold)

    return trial


def empirical_max_step(trial, dt_hi, rel_tol=0.005, max_expand=60):
    """Largest stable step by halving down to a stable bracket and then
    bisecting; ``trial`` maps dt to (stable, growth)."""
    if dt_hi <= 0:
        raise InputError("dt_hi must be positive")
    dt = float(dt_hi)
    stable, _ = trial(dt)
    if stable:
        # expand upward until unstable so the bracket is genuine
        hi = dt * 2.0
        for _ in range(max_expand):
            ok, _ = trial(hi)
            if not ok:
                break
            dt, hi = hi, hi * 2.0
        else:
            raise BracketError("no unstable step found while expanding upward")
        lo = dt
    else:
        for _ in range(max_expand):
            dt *= 0.5
            ok, _ = trial(dt)
            if ok:
                break
        else:
            raise BracketError("no stable step found while halving downward")
        lo, hi = dt, 2.0 * dt
    while hi - lo > rel_tol * lo:
        mid = 0.5 * (lo + hi)
        ok, _ = trial(mid)
        if ok:
            lo = mid
        else:
            hi = mid
    return lo


def overlap_study(system_family, scheme, p_values, e_values, cap=4096,
                  nu_grid=None, dt_ref=None, trial_steps=DEFAULT_TRIAL_STEPS):
    """Table of largest stable ratios over (p, overlap) pairs.

    ``system_family(p)`` builds the (semi-discrete, normalized) pair for a
    refinement ratio; masks are rebuilt per overlap from the mesh tags.
    The second-order local leap-frog scheme is scanned spectrally; the
    other leap-frog-family schemes run empirical searches.  Ratios are
    measured against ``dt_ref`` or each system's own leap-frog bound.
    """
    from .fem1d import build_fine_mask

    table = {}
    for p in p_values:
        sd, nsys = system_family(p)
        ref = dt_ref if dt_ref is not None else lf_reference_step(nsys.a)
        for e in e_values:
            mask = build_fine_mask(sd.mesh, sd, e)
            if scheme == "lf2":
                scan = spectral_scan_lf2(nsys.a, mask, p, nu_grid=nu_grid, dt_ref=ref, cap=cap)
                table[(p, e)] = scan.nu_max
            elif scheme in ("lfme4", "lfcn2"):
                trial = leapfrog_family_trial(nsys, mask, scheme, p, n_steps=trial_steps)
                dt_max = empirical_max_step(trial, 2.0 * np.sqrt(3.0) * p * ref)
                table[(p, e)] = dt_max / ref
            else:
                raise InputError(f"overlap_study does not handle scheme {scheme!r}")
    return table
