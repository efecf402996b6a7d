from fractions import Fraction

import numpy as np
import pytest

from ltswave.coefficients import (
    ab_alpha,
    ab_coefficients,
    alpha_p_table,
    gamma,
    gamma_tilde,
)
from ltswave.errors import InputError

F = Fraction


def expand_substep_alpha(p):
    """Independent oracle: expand the local leap-frog substep recursion
    symbolically in the basis {z, (AP)^j A z} and read off the integer
    weights of the one-step form.  Never consults the three-term recursion.
    """
    # q_m = 2 z + sum_j d_j^(m) (AP)^j A z with d_j = -dtau^(2j+2) e_j
    e_prev = {}
    e_cur = {0: 1}
    for _m in range(1, p):
        e_next = {}
        for j in range(0, p + 1):
            val = 2 * e_cur.get(j, 0) - e_prev.get(j, 0) - e_cur.get(j - 1, 0)
            if j == 0:
                val += 2
            if val:
                e_next[j] = val
        e_prev, e_cur = e_cur, e_next
    assert e_cur.get(0, 0) == p * p
    return tuple(-e_cur.get(j, 0) for j in range(1, p))


class TestGammaTables:
    def test_gamma_table_row(self):
        assert gamma(0, F(1)) == 1
        assert gamma(1, F(1)) == F(1, 2)
        assert gamma(2, F(1)) == F(5, 12)
        assert gamma(3, F(1)) == F(3, 8)

    def test_gamma_tilde_table_row(self):
        assert gamma_tilde(0, F(1)) == 1
        assert gamma_tilde(1, F(1)) == 1
        assert gamma_tilde(2, F(1)) == 1
        assert gamma_tilde(3, F(1)) == 1
        assert gamma_tilde(2, F(1, 2)) == F(3, 8)

    def test_j0_row(self):
        assert gamma(0, 0.73) == pytest.approx(0.73)
        assert gamma_tilde(0, -2.5) == 1.0

    def test_negative_arguments_fine(self):
        assert gamma_tilde(2, F(-1)) == 0
        assert gamma_tilde(3, F(-2)) == 0

    def test_index_out_of_range(self):
        with pytest.raises(InputError):
            gamma(-1, 0.5)
        with pytest.raises(InputError):
            gamma_tilde(-2, 0.5)

    def test_tilde_is_derivative(self):
        eps = 1e-6
        for j in range(4):
            for xi in np.linspace(-1.5, 1.5, 20):
                fd = (gamma(j, xi + eps) - gamma(j, xi - eps)) / (2 * eps)
                assert fd == pytest.approx(gamma_tilde(j, xi), abs=1e-8)


class TestAbAlpha:
    def test_table_values(self):
        assert ab_alpha(2) == (F(3, 2), F(-1, 2))
        assert ab_alpha(3) == (F(23, 12), F(-16, 12), F(5, 12))
        assert ab_alpha(4) == (F(55, 24), F(-59, 24), F(37, 24), F(-9, 24))

    def test_unsupported_order(self):
        with pytest.raises(InputError):
            ab_alpha(5)


class TestBetaTables:
    def test_p1_reduces_to_alpha(self):
        for k in (2, 3, 4):
            cs = ab_coefficients(k, 1)
            assert cs.beta[0] == ab_alpha(k)

    def test_printed_k3_p2(self):
        cs = ab_coefficients(3, 2)
        assert cs.beta[0] == (F(17, 12), F(-7, 12), F(2, 12))
        assert cs.beta[1] == (F(29, 12), F(-25, 12), F(8, 12))

    def test_printed_k4_p2(self):
        cs = ab_coefficients(4, 2)
        assert cs.beta[0] == (F(297, 192), F(-187, 192), F(107, 192), F(-25, 192))
        assert cs.beta[1] == (F(583, 192), F(-757, 192), F(485, 192), F(-119, 192))

    def test_row_sums_exactly_one(self):
        for k in (2, 3, 4):
            for p in range(1, 9):
                cs = ab_coefficients(k, p)
                for row in cs.beta:
                    assert sum(row) == 1

    def test_column_sums_give_global_weights(self):
        # summing the substep weights over m recovers p * alpha; this is
        # what makes the masked-out path coincide with the global scheme
        for k in (2, 3, 4):
            for p in (1, 2, 3, 5):
                cs = ab_coefficients(k, p)
                for ell in range(k):
                    assert sum(row[ell] for row in cs.beta) == p * cs.alpha[ell]

    def test_float_mirrors(self):
        cs = ab_coefficients(4, 2)
        assert cs.beta_f.shape == (2, 4)
        assert cs.beta_f[0, 0] == pytest.approx(297 / 192)
        assert cs.alpha_f[0] == pytest.approx(55 / 24)

    def test_bad_inputs(self):
        with pytest.raises(InputError):
            ab_coefficients(5, 2)
        with pytest.raises(InputError):
            ab_coefficients(3, 0)


class TestAlphaPTable:
    def test_base_rows(self):
        assert alpha_p_table(1).alpha == ()
        assert alpha_p_table(2).alpha == (1,)
        assert alpha_p_table(3).alpha == (6, -1)

    def test_recursion_matches_symbolic_expansion(self):
        for p in range(1, 11):
            assert alpha_p_table(p).alpha == expand_substep_alpha(p)

    def test_known_higher_rows(self):
        assert alpha_p_table(4).alpha == (20, -8, 1)
        assert alpha_p_table(5).alpha == (50, -35, 10, -1)

    def test_bad_input(self):
        with pytest.raises(InputError):
            alpha_p_table(0)
