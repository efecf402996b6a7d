"""Coefficient generators for the multistep and local-substep schemes.

Everything here is produced in exact rational (or integer) arithmetic and
only converted to floating point at the edge, so the scheme definitions
carry no roundoff of their own.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np

from .errors import InputError, InternalConsistencyError

SUPPORTED_AB_ORDERS = (2, 3, 4)


@lru_cache(maxsize=None)
def gamma_tilde_poly(j):
    """Coefficients (ascending powers, exact) of the j-th extrapolation weight.

    The closed form is x (x+1) ... (x+j-1) / j!, i.e. the rising factorial
    scaled by j!; for j = 0 the polynomial is the constant 1.
    """
    if j < 0:
        raise InputError("polynomial index must be >= 0")
    coeffs = [Fraction(1)]
    for i in range(j):
        # multiply by (x + i)
        shifted = [Fraction(0)] + coeffs
        added = [Fraction(i) * c for c in coeffs] + [Fraction(0)]
        coeffs = [a + b for a, b in zip(shifted, added)]
    fact = Fraction(1)
    for i in range(1, j + 1):
        fact *= i
    return tuple(c / fact for c in coeffs)


@lru_cache(maxsize=None)
def gamma_poly(j):
    """Antiderivative of gamma_tilde_poly(j) with zero constant term."""
    gt = gamma_tilde_poly(j)
    return tuple([Fraction(0)] + [c / (k + 1) for k, c in enumerate(gt)])


def _poly_eval(coeffs, x):
    acc = coeffs[-1]
    for c in reversed(coeffs[:-1]):
        acc = acc * x + c
    return acc


def gamma(j, xi):
    """Integrated extrapolation weight; exact when xi is a Fraction."""
    if j < 0:
        raise InputError("index j must be >= 0")
    if isinstance(xi, Fraction):
        return _poly_eval(gamma_poly(j), xi)
    return float(_poly_eval([float(c) for c in gamma_poly(j)], float(xi)))


def gamma_tilde(j, xi):
    """Derivative of gamma(j, .); accepts any real xi, negative included."""
    if j < 0:
        raise InputError("index j must be >= 0")
    if isinstance(xi, Fraction):
        return _poly_eval(gamma_tilde_poly(j), xi)
    return float(_poly_eval([float(c) for c in gamma_tilde_poly(j)], float(xi)))


@lru_cache(maxsize=None)
def ab_alpha(k):
    """Classical k-step Adams-Bashforth weights alpha_0..alpha_{k-1}, exact."""
    if k not in SUPPORTED_AB_ORDERS:
        raise InputError(f"unsupported multistep order k={k}; supported: {SUPPORTED_AB_ORDERS}")
    gamma_at_one = [gamma(j, Fraction(1)) for j in range(k)]
    alphas = []
    for ell in range(k):
        s = sum(comb(j, ell) * gamma_at_one[j] for j in range(ell, k))
        alphas.append(Fraction((-1) ** ell) * s)
    return tuple(alphas)


@dataclass(frozen=True)
class AbCoefficientSet:
    """Substep weights for the k-step scheme split into p local steps.

    ``alpha[ell]`` are the classical weights; ``beta[m][ell]`` weight the
    frozen coarse products during local substep m.  Both are stored exactly
    and mirrored as float arrays for the steppers.
    """

    k: int
    p: int
    alpha: tuple
    beta: tuple

    @property
    def alpha_f(self):
        return np.array([float(a) for a in self.alpha])

    @property
    def beta_f(self):
        return np.array([[float(b) for b in row] for row in self.beta])


def ab_coefficients(k, p):
    """Generate the exact substep weight table for given (k, p)."""
    if k not in SUPPORTED_AB_ORDERS:
        raise InputError(f"unsupported multistep order k={k}; supported: {SUPPORTED_AB_ORDERS}")
    if p < 1:
        raise InputError("refinement ratio p must be >= 1")
    alphas = ab_alpha(k)
    beta = []
    for m in range(p):
        row = []
        for ell in range(k):
            total = Fraction(0)
            for i in range(k):
                xi = Fraction(m - i, p)
                inner = sum(comb(j, ell) * gamma_tilde(j, xi) for j in range(ell, k))
                total += alphas[i] * Fraction((-1) ** ell) * inner
            row.append(total)
        if sum(row) != 1:
            raise InternalConsistencyError(
                f"substep weight row m={m} for (k={k}, p={p}) sums to {sum(row)}, expected 1"
            )
        beta.append(tuple(row))
    return AbCoefficientSet(k=k, p=p, alpha=alphas, beta=tuple(beta))


@dataclass(frozen=True)
class AlphaPTable:
    """Integer weights alpha_j (j = 1..p-1) of the one-step form of the
    local leap-frog scheme: the effective operator is

        A_p = A - (1/p^2) * sum_j dtau^(2j) alpha_j (A P)^j A.
    """

    p: int
    alpha: tuple


@lru_cache(maxsize=None)
def alpha_p_table(p):
    """Generate the integer table by the three-term recursion.

    Base rows: alpha_1^2 = 1, alpha_1^3 = 6, alpha_2^3 = -1.  The recursion
    is seeded with the empty p=1 row; its first rule reads
    alpha_1^{q+1} = q^2 + 2 alpha_1^q - alpha_1^{q-1}.  The table is
    validated elsewhere against a symbolic expansion of the substep
    recursion and against the one-step equivalence oracle.
    """
    if p < 1:
        raise InputError("p must be >= 1")
    rows = {1: {}, 2: {1: 1}}
    for q in range(2, p):
        prev, cur = rows[q - 1], rows[q]
        nxt = {1: q * q + 2 * cur.get(1, 0) - prev.get(1, 0)}
        for j in range(2, q - 1):
            nxt[j] = 2 * cur.get(j, 0) - prev.get(j, 0) - cur.get(j - 1, 0)
        if q - 1 >= 2:
            nxt[q - 1] = 2 * cur.get(q - 1, 0) - cur.get(q - 2, 0)
        nxt[q] = -cur.get(q - 1, 0)
        rows[q + 1] = nxt
    table = rows[p] if p in rows else {}
    return AlphaPTable(p=p, alpha=tuple(table.get(j, 0) for j in range(1, p)))
