"""Scalar special functions for inclusion probabilities of distance-based classifiers.

The probability that a sample belongs to a class whose latent features are
modelled as an isotropic unit-variance Gaussian around an anchor is the
chi-square upper tail of the squared anchor distance.  Everything here is a
pure function of its arguments, double precision, and safe to call from any
number of threads.
"""

from __future__ import annotations

import math

from .errors import DomainError, NumericError

# Clamp floor applied to probabilities that feed a downstream log, so losses
# built on log(p) stay finite (log(1e-300) ~ -690.78).
PROB_FLOOR = 1e-300

_MAX_ITER = 500
_REL_TOL = 1e-15
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Lanczos rational approximation (Godfrey's g=607/128, 15-term set).
# Empirically |lnGamma rel. error| < 1e-13 on a in [0.5, 1e4]; verified in
# tests against a 50-digit oracle and the platform lgamma.
_LANCZOS_G = 607.0 / 128.0
_LANCZOS_COEFFS = (
    0.99999999999999709182,
    57.156235665862923517,
    -59.597960355475491248,
    14.136097974741747174,
    -0.49191381609762019978,
    3.3994649984811888699e-5,
    4.6523628927048575665e-5,
    -9.8374475304879564677e-5,
    1.5808870322491248884e-4,
    -2.1026444172410488319e-4,
    2.1743961811521264320e-4,
    -1.6431810653676389022e-4,
    8.4418223983852743293e-5,
    -2.6190838401581408670e-5,
    3.6899182659531622704e-6,
)


def log_gamma(a: float) -> float:
    """Natural log of the Gamma function for a > 0."""
    if not a > 0.0:
        raise DomainError(f"log_gamma requires a > 0, got {a}")
    if a < 0.5:
        # Reflection keeps the Lanczos series on its accurate branch.
        return math.log(math.pi / math.sin(math.pi * a)) - log_gamma(1.0 - a)
    series = _LANCZOS_COEFFS[0]
    for i, c in enumerate(_LANCZOS_COEFFS[1:], start=1):
        series += c / (a - 1.0 + i)
    t = a + _LANCZOS_G - 0.5
    return _LOG_SQRT_2PI + (a - 0.5) * math.log(t) - t + math.log(series)


def _check_gamma_args(a: float, x: float) -> None:
    if not a > 0.0:
        raise DomainError(f"incomplete gamma requires a > 0, got a={a}")
    if not x >= 0.0:
        raise DomainError(f"incomplete gamma requires x >= 0, got x={x}")


def _lower_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by power series (x < a + 1)."""
    if x == 0.0:
        return 0.0
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _REL_TOL:
            log_pre = a * math.log(x) - x - log_gamma(a)
            return total * math.exp(log_pre)
    raise NumericError(
        f"lower gamma series stalled at a={a}, x={x}", iterations=_MAX_ITER
    )


def _upper_continued_fraction(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by a Lentz continued fraction (x >= a + 1)."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _REL_TOL:
            log_pre = a * math.log(x) - x - log_gamma(a)
            return h * math.exp(log_pre)
    raise NumericError(
        f"upper gamma continued fraction stalled at a={a}, x={x}", iterations=_MAX_ITER
    )


def reg_upper_inc_gamma(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a), in [0, 1]."""
    _check_gamma_args(a, x)
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        q = 1.0 - _lower_series(a, x)
    else:
        q = _upper_continued_fraction(a, x)
    return min(max(q, 0.0), 1.0)


def reg_lower_inc_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) = 1 - Q(a, x), in [0, 1].

    Computed directly by the series on its branch, which keeps tiny values
    exact where forming 1 - Q would cancel.
    """
    _check_gamma_args(a, x)
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        p = _lower_series(a, x)
    else:
        p = 1.0 - _upper_continued_fraction(a, x)
    return min(max(p, 0.0), 1.0)


def prob_inclusion(d_sq: float, n: int) -> float:
    """Probability of inclusion: chi-square(n) upper tail of a squared distance.

    Equals Q(n/2, d_sq/2).  Decreases from 1 at d_sq = 0 towards 0; the
    result is clamped to [PROB_FLOOR, 1] so downstream logs stay finite.
    """
    _check_inclusion_args(d_sq, n)
    q = reg_upper_inc_gamma(0.5 * n, 0.5 * d_sq)
    return max(q, PROB_FLOOR)


def prob_exclusion(d_sq: float, n: int) -> float:
    """Complement 1 - prob_inclusion, computed without cancellation and clamped likewise."""
    _check_inclusion_args(d_sq, n)
    p = reg_lower_inc_gamma(0.5 * n, 0.5 * d_sq)
    return max(p, PROB_FLOOR)


def _check_inclusion_args(d_sq: float, n: int) -> None:
    if not d_sq >= 0.0:
        raise DomainError(f"squared distance must be >= 0, got {d_sq}")
    if n < 1:
        raise DomainError(f"latent dimension must be >= 1, got {n}")


def prob_inclusion_grad(d_sq: float, n: int) -> float:
    """Derivative of prob_inclusion w.r.t. d_sq: the negated chi-square(n) density.

    Returns -d_sq^(n/2-1) exp(-d_sq/2) / (2^(n/2) Gamma(n/2)), evaluated in
    log space.  At d_sq = 0 the density is 0 for n >= 3, 1/2 for n = 2, and
    unbounded for n = 1 (rejected).
    """
    _check_inclusion_args(d_sq, n)
    half_n = 0.5 * n
    if d_sq == 0.0:
        if n == 1:
            raise DomainError("chi-square density is unbounded at d_sq = 0 for n = 1")
        return -0.5 if n == 2 else 0.0
    log_density = (
        (half_n - 1.0) * math.log(d_sq)
        - 0.5 * d_sq
        - half_n * math.log(2.0)
        - log_gamma(half_n)
    )
    return -math.exp(log_density)


def h_scale(x: float) -> float:
    """Distance squashing sqrt(x + 1) - 1 used by hypersphere-classifier scores.

    Evaluated as x / (sqrt(x + 1) + 1), which is exact at 0 and avoids
    cancellation for small x.
    """
    if not x >= 0.0:
        raise DomainError(f"h_scale requires x >= 0, got {x}")
    return x / (math.sqrt(x + 1.0) + 1.0)
