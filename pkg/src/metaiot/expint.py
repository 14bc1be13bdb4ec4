"""Asymptotic evaluation of the exponential integral E1 for large arguments."""

from __future__ import annotations

import cmath

from .errors import AccuracyError

# At the cutoff the first omitted term after MAX_TERMS terms is 20!/20^20 ~ 2e-8.
ASYMPTOTIC_CUTOFF = 20.0
MAX_TERMS = 20


def asymptotic_e1(z: complex, terms: int | None = None) -> tuple[complex, float, int]:
    """E1(z) from ``e^{-z}/z * sum_k k!/(-z)^k``.

    Returns ``(value, relative_error_bound, n_terms)``.  With ``terms=None``
    the sum is extended until the next term would stop shrinking (onset of
    divergence) or ``MAX_TERMS`` is reached; the bound is the modulus of the
    first omitted term relative to the partial sum.
    """
    z = complex(z)
    if terms is None and (abs(z) < ASYMPTOTIC_CUTOFF or z.real < -1e-12 * abs(z)):
        raise AccuracyError(
            f"|z| = {abs(z):.3g} below asymptotic cutoff {ASYMPTOTIC_CUTOFF} or Re z < 0")
    limit = MAX_TERMS if terms is None else terms
    total = 0j
    term = 1 + 0j
    k = 0
    while k < limit:
        total += term
        nxt = term * (k + 1) / (-z)
        k += 1
        if terms is None and abs(nxt) >= abs(term):
            term = nxt
            break
        term = nxt
    bound = abs(term) / abs(total)
    return cmath.exp(-z) / z * total, bound, k


def exponential_integral(z: complex, terms: int | None = None) -> complex:
    """E1(z) = integral from z to infinity of e^{-t}/t dt, asymptotic regime only."""
    return asymptotic_e1(z, terms)[0]

