"""Confidence bounds on proportions and binomial tail sums.

These kernels back every dataset-estimated leaf bound and the
independent-binomial linking expression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Acklam's rational approximation to the standard normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425

UPPER = "upper"
LOWER = "lower"
NORMAL = "normal-approx"
EXACT = "exact"

# Normal approximation of the binomial is only trusted above this sample size.
MIN_NORMAL_N = 30


def normal_ppf(p: float) -> float:
    """Standard normal quantile for ``0 < p < 1`` (relative error ~1e-9)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must be in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    if p > 1.0 - _P_LOW:
        return -normal_ppf(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    )


def z_quantile(q: float) -> float:
    """Two-sided critical value for a ``q`` percent confidence level.

    This is the ``(100 + q) / 200`` quantile of the standard normal, so
    ``z_quantile(99)`` is about 2.576 and ``z_quantile(0)`` is 0.
    """
    if not 0.0 <= q < 100.0:
        raise ValueError(f"confidence level must satisfy 0 <= q < 100, got {q}")
    if q == 0.0:
        return 0.0
    return normal_ppf((100.0 + q) / 200.0)


@dataclass(frozen=True)
class ConfidenceBound:
    m: float
    n: int
    sigma_q: float
    gamma: float
    q: float
    direction: str
    method: str


def proportion_bound(m: float, n: int, q: float, direction: str = UPPER,
                     method: str = NORMAL) -> ConfidenceBound:
    """One side of the q% confidence interval around an observed proportion.

    With the normal approximation the half-width is
    ``z(q) * sqrt(m (1 - m) / n)``; the upper bound is ``m + sigma`` and
    the lower bound ``max(0, m - sigma)``.  ``method="exact"`` gives the
    matching Clopper-Pearson endpoint and is the only option for n <= 30.
    """
    if direction not in (UPPER, LOWER):
        raise ValueError(f"direction must be 'upper' or 'lower', got {direction!r}")
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"proportion must be in [0, 1], got {m}")
    if n < 1:
        raise ValueError(f"sample size must be positive, got {n}")
    if method == NORMAL:
        if n <= MIN_NORMAL_N:
            raise ValueError(
                f"normal approximation needs N > {MIN_NORMAL_N} (got N={n}); "
                "use method='exact'"
            )
        sigma = z_quantile(q) * math.sqrt(m * (1.0 - m) / n)
        if direction == UPPER:
            gamma = min(1.0, m + sigma)
        else:
            gamma = max(0.0, m - sigma)
        return ConfidenceBound(m, n, sigma, gamma, q, direction, method)
    if method == EXACT:
        gamma = clopper_pearson(m, n, q, direction)
        return ConfidenceBound(m, n, abs(gamma - m), gamma, q, direction, method)
    raise ValueError(f"unknown method {method!r}")


def clopper_pearson(m: float, n: int, q: float, direction: str) -> float:
    from scipy.stats import beta

    k = round(m * n)
    alpha = 1.0 - q / 100.0
    if direction == UPPER:
        return 1.0 if k >= n else float(beta.ppf(1.0 - alpha / 2.0, k + 1, n - k))
    return 0.0 if k <= 0 else float(beta.ppf(alpha / 2.0, k, n - k + 1))


def _log_pmf(n: int, k: int, logp: float, logq: float) -> float:
    return (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
            + k * logp + (n - k) * logq)


def binomial_tail(n: int, k_min: int, p: float) -> float:
    """``P(X >= k_min)`` for ``X ~ Binomial(n, p)``.

    Terms are generated by the pmf ratio recurrence outward from the
    largest term inside ``[k_min, n]``, which is anchored once in log
    space; all terms are then summed with :func:`math.fsum`.
    """
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    if k_min < 0:
        raise ValueError(f"k_min must be >= 0, got {k_min}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if k_min == 0:
        return 1.0
    if k_min > n or p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0

    logp, logq = math.log(p), math.log1p(-p)
    mode = min(n, max(k_min, math.floor((n + 1) * p)))
    anchor = _log_pmf(n, mode, logp, logq)
    odds = p / (1.0 - p)

    rel = [1.0]
    t = 1.0
    for k in range(mode, n):
        t *= (n - k) / (k + 1) * odds
        rel.append(t)
        if t < 1e-18:
            break
    t = 1.0
    for k in range(mode, k_min, -1):
        t *= k / ((n - k + 1) * odds)
        rel.append(t)
        if t < 1e-18:
            break
    return min(1.0, math.exp(anchor) * math.fsum(rel))
