import numpy as np
import pytest
import scipy.sparse as sp

from ltswave.errors import BracketError, DegenerateSystemError
from ltswave.fem1d import (
    Coefficients,
    FineMask,
    NormalizedSystem,
    assemble_cg,
    build_fine_mask,
    build_three_region_mesh,
    normalize,
)
from ltswave.integrators import build_Ap, make_operator
from ltswave.numkit import SparseSymMatrix, dense_sym_spectrum
from ltswave.stability import (
    ab_trial,
    empirical_max_step,
    leapfrog_family_trial,
    lf_reference_step,
    lf2_spectral_verdict,
    spectral_scan_lf2,
)


def diag_system(values):
    a = SparseSymMatrix.from_dense(np.diag(values))
    return NormalizedSystem(n=a.n, first_order=False, a=a)


def three_region_cg(h, p, order=1, e=0):
    mesh = build_three_region_mesh(h, p)
    sd = assemble_cg(mesh, order, Coefficients.uniform(mesh), bc="dirichlet")
    nsys = normalize(sd)
    return nsys, build_fine_mask(mesh, sd, e)


class TestLfReference:
    def test_diag_four(self):
        sys = diag_system([4.0])
        assert lf_reference_step(sys.a) == pytest.approx(1.0, rel=1e-8)

    def test_diag_one(self):
        sys = diag_system([1.0])
        assert lf_reference_step(sys.a) == pytest.approx(2.0, rel=1e-8)

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((12, 12))
        a1 = SparseSymMatrix.from_dense(m @ m.T, sym_rtol=1e-9)
        a4 = SparseSymMatrix.from_dense(4.0 * (m @ m.T), sym_rtol=1e-9)
        assert lf_reference_step(a4) == pytest.approx(0.5 * lf_reference_step(a1), rel=1e-7)

    def test_degenerate(self):
        a = SparseSymMatrix(sp.csr_matrix((3, 3)))
        with pytest.raises(DegenerateSystemError):
            lf_reference_step(a)


class TestSpectralScan:
    def test_p1_classical_bound(self):
        nsys, mask = three_region_cg(0.5, 1)
        scan = spectral_scan_lf2(nsys.a, mask, 1)
        assert 0.97 <= scan.nu_max < 1.0
        assert np.all(scan.stable[scan.nu_grid <= scan.nu_max])

    def test_p1_verdicts_monotone(self):
        nsys, mask = three_region_cg(0.5, 1)
        scan = spectral_scan_lf2(nsys.a, mask, 1)
        flips = np.flatnonzero(np.diff(scan.stable.astype(int)) > 0)
        assert flips.size == 0  # once unstable, stays unstable at p = 1

    def test_prefix_consistent_with_verdicts(self):
        nsys, mask = three_region_cg(0.4, 2)
        scan = spectral_scan_lf2(nsys.a, mask, 2)
        assert np.all(scan.stable[scan.nu_grid <= scan.nu_max + 1e-12])
        assert scan.nu_last_stable >= scan.nu_max

    def test_energy_positivity_matches_verdict(self):
        nsys, mask = three_region_cg(0.5, 2)
        dt_ref = lf_reference_step(nsys.a)
        for nu in (0.3, 0.8):
            dt = nu * dt_ref
            ok, _ = lf2_spectral_verdict(nsys.a, mask, 2, dt)
            assert ok
            ap = build_Ap(nsys.a, mask, 2, dt)
            vals = dense_sym_spectrum(ap)
            gram_min = 1.0 - 0.25 * dt * dt * vals[-1]
            assert gram_min >= -1e-10


class TestEmpirical:
    def test_standard_leapfrog_bound(self):
        sys = diag_system([4.0])
        trial = leapfrog_family_trial(sys, FineMask.none(1), "lf2", 1, n_steps=3000)
        dt = empirical_max_step(trial, 1.7, rel_tol=0.005)
        assert dt == pytest.approx(1.0, rel=0.02)

    def test_expands_up_when_start_is_stable(self):
        sys = diag_system([4.0])
        trial = leapfrog_family_trial(sys, FineMask.none(1), "lf2", 1, n_steps=2000)
        dt = empirical_max_step(trial, 0.1, rel_tol=0.01)
        assert dt == pytest.approx(1.0, rel=0.03)

    def test_bracket_error_when_nothing_stable(self):
        trial = lambda dt: (False, np.inf)
        with pytest.raises(BracketError):
            empirical_max_step(trial, 1.0, max_expand=5)

    def test_ab2_against_companion_oracle(self):
        # two-step scheme on the undamped oscillator y' = B y with
        # B = [[0, 1], [-lam, 0]]: the recurrence per eigenvalue z = i w dt is
        # r^2 - (1 + 1.5 z) r + 0.5 z = 0; the oracle applies the identical
        # growth-threshold semantics to the companion matrix powers.
        lam = 9.0
        n_steps, threshold = 4000, 1.0e3

        def oracle_stable(dt):
            z = 1j * np.sqrt(lam) * dt
            m = np.array([[1.0 + 1.5 * z, -0.5 * z], [1.0, 0.0]])
            power = np.eye(2, dtype=complex)
            for _ in range(n_steps):
                power = m @ power
                if np.linalg.norm(power, 2) > threshold:
                    return False, np.inf
            return True, np.linalg.norm(power, 2)

        sys = NormalizedSystem(
            n=2,
            first_order=True,
            b=sp.csr_matrix(np.array([[0.0, 1.0], [-lam, 0.0]])),
        )
        op = make_operator(sys)
        trial = ab_trial(op, 2, 1, n_steps=n_steps, threshold=threshold)
        dt_emp = empirical_max_step(trial, 0.6, rel_tol=0.005)
        dt_oracle = empirical_max_step(oracle_stable, 0.6, rel_tol=0.005)
        assert dt_emp == pytest.approx(dt_oracle, rel=0.08)

    @pytest.mark.slow
    def test_spectral_and_empirical_agree_lts_lf2(self):
        # the two routes must reach the same verdicts point by point on a
        # shared ratio grid (bisection alone is path-dependent here because
        # the instability islands make verdicts non-monotone)
        nsys, mask = three_region_cg(0.2, 4)
        from ltswave.harness import RunConfig, coarse_reference_step

        dt_ref = coarse_reference_step(RunConfig(disc="cg", order=1, scheme="lf2", p=4))
        grid = np.arange(0.30, 0.6001, 0.02)
        scan = spectral_scan_lf2(nsys.a, mask, 4, nu_grid=grid, dt_ref=dt_ref)
        trial = leapfrog_family_trial(nsys, mask, "lf2", 4)
        emp = np.array([trial(nu * dt_ref)[0] for nu in grid])
        assert np.sum(emp != scan.stable) <= 1  # razor islands sit at the
        # detection threshold of the finite-horizon growth test
        emp_prefix = grid[int(np.argmin(emp)) - 1] if not emp.all() else grid[-1]
        assert emp_prefix == pytest.approx(scan.nu_max, rel=0.05)


class TestOverlapReduction:
    def test_overlap_study_monotone_in_overlap(self):
        from ltswave.stability import overlap_study

        def family(p):
            mesh = build_three_region_mesh(0.5, p)
            sd = assemble_cg(mesh, 1, Coefficients.uniform(mesh), bc="dirichlet")
            return sd, normalize(sd)

        grid = np.arange(0.05, 1.3, 0.05)
        table = overlap_study(family, "lf2", [2], [0, 1, 2], nu_grid=grid)
        assert table[(2, 0)] <= table[(2, 1)] + 0.01
        assert table[(2, 1)] <= table[(2, 2)] + 0.01

    def test_full_mask_behaves_like_global_fine_scheme(self):
        # mask covering everything turns the scheme into plain leap-frog at
        # the substep, so the usable global step is p times the fine bound
        nsys, _ = three_region_cg(0.5, 2)
        mask = FineMask.full(nsys.n)
        dt_ref = lf_reference_step(nsys.a)
        grid = np.arange(0.1, 2.6, 0.05)
        scan = spectral_scan_lf2(nsys.a, mask, 2, nu_grid=grid, dt_ref=dt_ref)
        assert scan.nu_max == pytest.approx(2.0, abs=0.1)

    @pytest.mark.slow
    def test_lfme4_cg_p3_no_overlap_optimal(self):
        # fourth-order local stepping with continuous cubic elements keeps
        # the optimal step without any overlap
        mesh = build_three_region_mesh(0.5, 2)
        sd = assemble_cg(mesh, 3, Coefficients.uniform(mesh), bc="dirichlet")
        nsys = normalize(sd)
        mask = build_fine_mask(mesh, sd, 0)
        mesh_c = build_three_region_mesh(0.5, 1)
        sd_c = assemble_cg(mesh_c, 3, Coefficients.uniform(mesh_c), bc="dirichlet")
        nsys_c = normalize(sd_c)
        ref_trial = leapfrog_family_trial(nsys_c, FineMask.none(nsys_c.n), "lfme4", 1)
        dt_ref = empirical_max_step(ref_trial, 2.0 * lf_reference_step(nsys_c.a), rel_tol=0.01)
        trial = leapfrog_family_trial(nsys, mask, "lfme4", 2)
        dt_max = empirical_max_step(trial, 1.5 * dt_ref, rel_tol=0.01)
        assert dt_max / dt_ref >= 0.95

    @pytest.mark.slow
    def test_lfme4_ipdg_one_element_overlap_optimal(self):
        from ltswave.fem1d import assemble_ipdg

        mesh = build_three_region_mesh(0.5, 2)
        sd = assemble_ipdg(mesh, 3, Coefficients.uniform(mesh), alpha=20.0, bc="dirichlet")
        nsys = normalize(sd)
        mask = build_fine_mask(mesh, sd, 1)
        mesh_c = build_three_region_mesh(0.5, 1)
        sd_c = assemble_ipdg(mesh_c, 3, Coefficients.uniform(mesh_c), alpha=20.0, bc="dirichlet")
        nsys_c = normalize(sd_c)
        ref_trial = leapfrog_family_trial(nsys_c, FineMask.none(nsys_c.n), "lfme4", 1)
        dt_ref = empirical_max_step(ref_trial, 2.0 * lf_reference_step(nsys_c.a), rel_tol=0.01)
        trial = leapfrog_family_trial(nsys, mask, "lfme4", 2)
        dt_max = empirical_max_step(trial, 1.5 * dt_ref, rel_tol=0.01)
        assert dt_max / dt_ref >= 0.95
