"""Exact small-count statistics used throughout the security analysis.

The confidence machinery deliberately avoids Gaussian approximations: every
observed count is converted to one-sided bounds on its underlying rate with
the exact binomial (Clopper-Pearson) construction, evaluated through the
regularized incomplete beta function so that sessions with ~1e11 trials are
handled without forming any factorial directly.
"""

from __future__ import annotations

import math

from scipy import special

__all__ = [
    "binomial_lower",
    "binomial_upper",
    "binomial_interval",
    "binary_entropy",
    "poisson_weights",
    "poisson_tail",
]


def _bisect_to(a: float, b: float, lo: float, hi: float, target: float) -> float:
    """Invert x -> betainc(a, b, x) (increasing) to ``target`` on [lo, hi]."""
    flo = float(special.betainc(a, b, lo))
    fhi = float(special.betainc(a, b, hi))
    if flo >= target:
        return lo
    if fhi <= target:
        return hi
    for _ in range(110):
        mid = 0.5 * (lo + hi)
        if float(special.betainc(a, b, mid)) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def binomial_lower(k: float, n: float, epsilon: float) -> float:
    """Largest rate p such that P[Binomial(n, p) >= k] <= epsilon.

    With probability at least 1 - epsilon a single observed count k drawn
    from Binomial(n, p_true) satisfies p_true >= the returned value.  For
    k <= 0 the bound is 0 (no count can certify a positive rate).

    ``k`` may be non-integral: the bound interpolates smoothly through the
    beta quantile, which is what the deterministic expected-count evaluator
    in the optimizer relies on.
    """
    _check_count_args(k, n, epsilon)
    if k <= 0.0:
        return 0.0
    if k >= n:
        # P[X >= n] = p^n  =>  p = epsilon ** (1/n)
        return float(epsilon) ** (1.0 / n)
    # P[X >= k] = I_p(k, n - k + 1), increasing in p.
    a, b = k, n - k + 1.0
    x = float(special.betaincinv(a, b, epsilon))
    # The quantile routine loses its footing in the extreme-n, tiny-rate
    # corner (it can land above the observed rate).  The forward function
    # stays accurate there, so verify the tail mass and re-invert by
    # bisection below the observed rate when the check fails.
    if not (0.0 <= x <= k / n) or not (
        0.2 * epsilon <= float(special.betainc(a, b, x)) <= 5.0 * epsilon
    ):
        x = _bisect_to(a, b, 0.0, k / n, epsilon)
    return x


def binomial_upper(k: float, n: float, epsilon: float) -> float:
    """Smallest rate p such that P[Binomial(n, p) <= k] <= epsilon.

    With probability at least 1 - epsilon, p_true <= the returned value.
    For k >= n the bound is 1.
    """
    _check_count_args(k, n, epsilon)
    if k >= n:
        return 1.0
    if k <= 0.0:
        # P[X <= 0] = (1-p)^n  =>  p = 1 - epsilon ** (1/n)
        return 1.0 - float(epsilon) ** (1.0 / n)
    # P[X <= k] = 1 - I_p(k + 1, n - k), so invert I at 1 - epsilon.
    a, b = k + 1.0, n - k
    x = float(special.betaincinv(a, b, 1.0 - epsilon))
    # Same safeguard as the lower bound, on the other side of the mean.
    if not (k / n <= x <= 1.0) or not (
        0.2 * epsilon <= 1.0 - float(special.betainc(a, b, x)) <= 5.0 * epsilon
    ):
        x = _bisect_to(a, b, k / n, 1.0, 1.0 - epsilon)
    return x


def binomial_interval(k: float, n: float, epsilon: float) -> tuple[float, float]:
    """One-sided exact bounds (lower, upper) on a binomial rate.

    Each side individually holds with confidence 1 - epsilon; the pair
    therefore covers the true rate with probability at least 1 - 2*epsilon.
    """
    return binomial_lower(k, n, epsilon), binomial_upper(k, n, epsilon)


def _check_count_args(k: float, n: float, epsilon: float) -> None:
    if not n > 0:
        raise ValueError("n must be > 0")
    if k < 0 or k > n:
        raise ValueError(f"count k={k} must lie in [0, n={n}]")
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    if math.isnan(k) or math.isnan(n):
        raise ValueError("k and n must be finite")


def binary_entropy(p: float) -> float:
    """Shannon entropy of a bit with bias p, in bits.  H(0) = H(1) = 0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    if p == 0.0 or p == 1.0:
        return 0.0
    q = 1.0 - p
    return -(p * math.log2(p) + q * math.log2(q))


def poisson_weights(mu: float, cutoff: int) -> list[float]:
    """Poisson probabilities e^-mu * mu^n / n! for n = 0 .. cutoff.

    Computed by the stable multiplicative recurrence; mean photon numbers
    in this pipeline are O(1) so no log-space handling is needed.
    """
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if cutoff < 0:
        raise ValueError("cutoff must be >= 0")
    weights = [math.exp(-mu)]
    for n in range(1, cutoff + 1):
        weights.append(weights[-1] * mu / n)
    return weights


def poisson_tail(mu: float, cutoff: int) -> float:
    """P[Poisson(mu) > cutoff], computed via the incomplete gamma function.

    This is the mass that the truncated constraint systems must absorb as
    slack; using gammainc keeps it accurate even when it is ~1e-12 and a
    1 - sum() evaluation would cancel.
    """
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if cutoff < 0:
        raise ValueError("cutoff must be >= 0")
    if mu == 0.0:
        return 0.0
    # P[N >= c+1] = P[Gamma(c+1, 1) <= mu]
    return float(special.gammainc(cutoff + 1.0, mu))
