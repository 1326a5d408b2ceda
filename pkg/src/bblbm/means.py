"""Weighted power means and the exponent arithmetic of the
Borell-Brascamp-Lieb inequality.

The exponent p is an extended real: any finite float, 0.0, ``math.inf``
and ``-math.inf`` are all meaningful values and are dispatched exactly,
never approximated by a numerical limit.
"""

from __future__ import annotations

import math

from .errors import DomainError

__all__ = ["p_mean", "bbl_exponent"]


def p_mean(p: float, t: float, a: float, b: float) -> float:
    """Weighted p-mean of two nonnegative numbers.

    For finite nonzero ``p`` and ``a*b != 0`` this is
    ``((1-t)*a**p + t*b**p)**(1/p)``, evaluated in the log domain so
    that tiny and huge ``|p|`` are equally stable.  Conventions: the
    value is 0 whenever ``a*b == 0``; ``p = +inf`` gives ``max(a, b)``;
    ``p = 0`` gives the geometric mean ``a**(1-t) * b**t``; ``p = -inf``
    gives ``min(a, b)``.

    Raises
    ------
    DomainError
        If ``t`` is outside [0, 1] or ``a`` or ``b`` is negative.
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"interpolation parameter t={t} outside [0, 1]")
    if a < 0.0 or b < 0.0:
        raise DomainError(f"p-mean arguments must be nonnegative, got a={a}, b={b}")
    if a == 0.0 or b == 0.0:
        return 0.0
    if a == b:
        return a
    if math.isinf(p):
        return max(a, b) if p > 0 else min(a, b)
    la, lb = math.log(a), math.log(b)
    mu = (1.0 - t) * la + t * lb
    if p == 0.0:
        return math.exp(mu)
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    # center at the geometric mean: exact at p == 0 and immune to
    # overflow/underflow of a**p, b**p for huge |p|
    da, db = la - mu, lb - mu
    if abs(p) * max(abs(da), abs(db)) < 1e-300:
        # below float resolution the p-mean is the geometric mean
        return math.exp(mu)
    va, vb = p * da, p * db
    m = max(va, vb)
    s = (1.0 - t) * math.exp(va - m) + t * math.exp(vb - m)
    return math.exp(mu + (m + math.log(s)) / p)


def bbl_exponent(p: float, N: float) -> float:
    """Exponent p/(1 + N*p) for the integral side of the inequality.

    The conventions mirror :func:`p_mean`: ``+inf`` maps to ``1/N``,
    ``0`` maps to ``0``, and the boundary value ``-1/N`` maps to
    ``-inf``.

    Raises
    ------
    DomainError
        If ``p < -1/N`` or ``N < 1``.
    """
    if N < 1.0:
        raise DomainError(f"dimension bound N={N} must be >= 1")
    lo = -1.0 / N
    if p < lo:
        raise DomainError(f"exponent p={p} below the admissible bound -1/N={lo}")
    if p == lo:
        return -math.inf
    if math.isinf(p):
        return 1.0 / N
    if p == 0.0:
        return 0.0
    return p / (1.0 + N * p)
