"""Single-photon yield and error bounds from multi-intensity count statistics.

Alice varies the pulse intensity among the scheme's levels; the per-level
detection and error counts then over-constrain the per-photon-number yields
of the channel.  This module turns a tally into two families of linear
constraints

    Y_j_lo - tail_j  <=  sum_n  w_jn * y_n             <=  Y_j_hi
    B_j_lo - tail_j  <=  sum_n  w_jn * y_n * b_n       <=  B_j_hi

with w_jn the Poisson photon-number weights of level j truncated at the
configured cutoff (the neglected mass is absorbed into the lower-side slack
``tail_j``, so the true channel always stays inside the feasible region),
and extracts from them:

* the minimal single-photon yield ``y1`` compatible with the observations,
* a tight upper bound on the single-photon error rate ``b1`` (via bisection
  over the substituted error variables e_n = y_n * b_n), and
* the conservative worst-case ``b1`` that charges every observed error in a
  basis to the single-photon bits.

All confidence intervals are exact binomial bounds; each one-sided bound
individually holds except with probability epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._simplex import solve_lp
from .core import BASES, ConfidenceConfig, DecoyScheme, SessionTally
from .stats import binomial_interval, poisson_tail, poisson_weights

__all__ = [
    "YieldConstraintSystem",
    "ErrorConstraintSystem",
    "YieldSolution",
    "ErrorBoundResult",
    "SinglePhotonBounds",
    "yield_bounds",
    "error_bounds",
    "solve_y1_lower",
    "b1_tight",
    "b1_worst_case",
    "single_photon_sifted_weight",
    "single_photon_bounds",
]


@dataclass(frozen=True)
class YieldConstraintSystem:
    """Truncated linear constraints on the photon-number yields y_n."""

    mus: tuple[float, ...]
    lows: tuple[float, ...]      # per-level lower bounds on the detection rate
    highs: tuple[float, ...]     # per-level upper bounds
    weights: tuple[tuple[float, ...], ...]  # w_jn, shape (levels, cutoff+1)
    tails: tuple[float, ...]     # per-level truncated Poisson mass
    cutoff: int

    def __post_init__(self) -> None:
        if len(self.mus) < 1:
            raise ValueError("constraint system needs at least one level")
        if not (len(self.mus) == len(self.lows) == len(self.highs) == len(self.tails)):
            raise ValueError("per-level arrays must have equal length")
        for lo, hi in zip(self.lows, self.highs):
            if lo > hi:
                raise ValueError("lower bound exceeds upper bound")


@dataclass(frozen=True)
class ErrorConstraintSystem:
    """Same shape as the yield system, but bounding sum_n w_jn * e_n.

    ``e_n = y_n * b_n`` is the joint rate of an n-photon pulse being
    detected *and* sifted into this basis with the wrong bit value,
    normalized like a yield (per sent pulse, per matched-basis detection
    scale), so the two systems share the y_n variables.
    """

    basis: str
    mus: tuple[float, ...]
    lows: tuple[float, ...]
    highs: tuple[float, ...]
    weights: tuple[tuple[float, ...], ...]
    tails: tuple[float, ...]
    cutoff: int


@dataclass(frozen=True)
class YieldSolution:
    feasible: bool
    y1_lower: float
    yields: tuple[float, ...] | None  # the minimizing vertex, for diagnostics


@dataclass(frozen=True)
class ErrorBoundResult:
    feasible: bool
    value: float  # upper bound on b1, in [0, 1]


def yield_bounds(
    tally: SessionTally, scheme: DecoyScheme, config: ConfidenceConfig
) -> YieldConstraintSystem:
    """Exact-binomial detection-rate intervals for every intensity level.

    The per-level rate is detections (both measurement bases) over pulses
    sent; levels with zero sent pulses are rejected.
    """
    lows, highs, weights, tails = [], [], [], []
    for j, lv in enumerate(tally.levels):
        if lv.sent <= 0:
            raise ValueError(f"level {j} has no sent pulses; cannot bound its yield")
        lo, hi = binomial_interval(lv.detected_total(), lv.sent, config.epsilon)
        lows.append(lo)
        highs.append(hi)
        mu = scheme.mus[j]
        weights.append(tuple(poisson_weights(mu, config.photon_cutoff)))
        tails.append(poisson_tail(mu, config.photon_cutoff))
    return YieldConstraintSystem(
        mus=scheme.mus,
        lows=tuple(lows),
        highs=tuple(highs),
        weights=tuple(weights),
        tails=tuple(tails),
        cutoff=config.photon_cutoff,
    )


def error_bounds(
    tally: SessionTally,
    scheme: DecoyScheme,
    config: ConfidenceConfig,
    basis: str,
) -> ErrorConstraintSystem:
    """Per-level bounds on the error-weighted yield in one basis.

    The observable splits into two independently bounded factors: the
    per-sifted-bit error fraction (binomial over sifted bits) and the
    per-sent detection rate (binomial over sent pulses).  Their interval
    product bounds the error yield sum_n w_jn y_n b_n; since basis choice
    is independent of photon number, the sifting factor cancels.
    """
    if basis not in BASES:
        raise ValueError(f"unknown basis {basis!r}")
    lows, highs, weights, tails = [], [], [], []
    for j, lv in enumerate(tally.levels):
        if lv.sent <= 0:
            raise ValueError(f"level {j} has no sent pulses")
        y_lo, y_hi = binomial_interval(lv.detected_total(), lv.sent, config.epsilon)
        sifted = lv.sifted[basis]
        if sifted > 0:
            r_lo, r_hi = binomial_interval(lv.errors[basis], sifted, config.epsilon)
        else:
            r_lo, r_hi = 0.0, 1.0  # no data: error fraction unconstrained
        lows.append(r_lo * y_lo)
        highs.append(r_hi * y_hi)
        mu = scheme.mus[j]
        weights.append(tuple(poisson_weights(mu, config.photon_cutoff)))
        tails.append(poisson_tail(mu, config.photon_cutoff))
    return ErrorConstraintSystem(
        basis=basis,
        mus=scheme.mus,
        lows=tuple(lows),
        highs=tuple(highs),
        weights=tuple(weights),
        tails=tuple(tails),
        cutoff=config.photon_cutoff,
    )


def _yield_rows(system) -> tuple[np.ndarray, np.ndarray]:
    """Two-sided level constraints as stacked <= rows (A, b)."""
    w = np.asarray(system.weights, dtype=float)
    hi = np.asarray(system.highs, dtype=float)
    lo = np.asarray(system.lows, dtype=float) - np.asarray(system.tails, dtype=float)
    a = np.vstack([w, -w])
    b = np.concatenate([hi, -lo])
    return a, b


def solve_y1_lower(system: YieldConstraintSystem) -> YieldSolution:
    """Minimize the single-photon yield over the truncated constraint polytope.

    Returns an infeasible result when no yield vector in [0, 1]^(cutoff+1)
    satisfies the observed count intervals (possible for adversarial or
    corrupted tallies); callers must treat that as "no key".
    """
    dim = system.cutoff + 1
    a, b = _yield_rows(system)
    c = np.zeros(dim)
    c[1] = 1.0
    res = solve_lp(c, a, b, lo=np.zeros(dim), hi=np.ones(dim))
    if not res.ok:
        return YieldSolution(feasible=False, y1_lower=0.0, yields=None)
    y1 = min(1.0, max(0.0, float(res.x[1])))
    return YieldSolution(feasible=True, y1_lower=y1, yields=tuple(float(v) for v in res.x))


def _joint_lp(ysys, esys, y1_floor, t, pin_vacuum):
    """min t*y1 - e1 over the joint (y, e) polytope.  Returns LPResult."""
    dim = ysys.cutoff + 1
    ay, by = _yield_rows(ysys)
    ae, be = _yield_rows(esys)
    n_vars = 2 * dim
    rows = []
    rhs = []
    # yield rows act on the first block, error rows on the second
    zeros = np.zeros_like(ay)
    rows.append(np.hstack([ay, zeros]))
    rhs.append(by)
    rows.append(np.hstack([np.zeros_like(ae), ae]))
    rhs.append(be)
    # e_n - y_n <= 0
    link = np.hstack([-np.eye(dim), np.eye(dim)])
    rows.append(link)
    rhs.append(np.zeros(dim))
    # y1 >= y1_floor
    floor_row = np.zeros((1, n_vars))
    floor_row[0, 1] = -1.0
    rows.append(floor_row)
    rhs.append(np.array([-y1_floor]))
    if pin_vacuum:
        # Zero-photon clicks are uncorrelated with the sender's bit, so
        # exactly half of them land as errors: e_0 = y_0 / 2, written as a
        # pair of opposed inequalities.
        pin = np.zeros((2, n_vars))
        pin[0, 0], pin[0, dim] = -0.5, 1.0
        pin[1, 0], pin[1, dim] = 0.5, -1.0
        rows.append(pin)
        rhs.append(np.zeros(2))

    a = np.vstack(rows)
    b = np.concatenate(rhs)
    c = np.zeros(n_vars)
    c[1] = t
    c[dim + 1] = -1.0
    hi = np.concatenate([np.ones(dim), np.full(dim, np.inf)])
    return solve_lp(c, a, b, lo=np.zeros(n_vars), hi=hi)


def b1_tight(
    ysys: YieldConstraintSystem,
    esys: ErrorConstraintSystem,
    y1_lower: float,
    tolerance: float = 1e-9,
    pin_vacuum: bool = True,
) -> ErrorBoundResult:
    """Largest single-photon error fraction consistent with the joint system.

    Bisects on t in [0, 1]: t is achievable iff some point of the joint
    polytope (with y1 held at or above its certified floor) has
    e1 - t*y1 >= 0.  The returned value is the high end of the final
    bracket, so it is conservative to within ``tolerance``.

    With ``pin_vacuum`` the zero-photon error rate is fixed at one half
    (see :class:`~decoyqkd.core.ConfidenceConfig`); this is what lets the
    dominant dark-count error mass be deducted from the single-photon
    error budget instead of being chargeable to it.
    """
    if ysys.cutoff != esys.cutoff or ysys.mus != esys.mus:
        raise ValueError("yield and error systems describe different schemes")
    if y1_lower <= 0.0:
        # Ratio e1/y1 is unconstrained when y1 may vanish.
        first = _joint_lp(ysys, esys, 0.0, 0.0, pin_vacuum)
        return ErrorBoundResult(feasible=first.ok, value=1.0)

    first = _joint_lp(ysys, esys, y1_lower, 0.0, pin_vacuum)
    if not first.ok:
        return ErrorBoundResult(feasible=False, value=1.0)

    # Accepting "achievable" on a hair of numerical noise only loosens the
    # bound (conservative); rejecting on noise would tighten it unsoundly,
    # so the threshold sits slightly on the positive side, scaled to y1.
    slack = 1e-11 * y1_lower
    lo, hi = 0.0, 1.0
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        res = _joint_lp(ysys, esys, y1_lower, mid, pin_vacuum)
        if res.ok and res.objective <= slack:
            lo = mid  # achievable: some point has e1 >= mid * y1
        else:
            hi = mid
    return ErrorBoundResult(feasible=True, value=hi)


def single_photon_sifted_weight(
    tally: SessionTally,
    scheme: DecoyScheme,
    basis: str,
    levels: tuple[int, ...] | None = None,
) -> float:
    """Expected sifted single-photon bits in ``basis`` per unit of y1.

    Multiplying this weight by a lower bound on y1 gives a lower bound on
    the number of sifted bits in the basis that originated from
    single-photon pulses:

        W = sum_j sent_j * mu_j * exp(-mu_j) * (sifted_jb / detected_j)

    The measured per-level sifting ratio (sifted over all detections at
    that level) is used rather than an assumed 1/2 basis-match factor.
    ``levels`` restricts the sum (e.g. to the keyed signal level); the
    default covers every intensity level.
    """
    if levels is None:
        levels = tuple(range(scheme.n_levels))
    total = 0.0
    for j in levels:
        lv = tally.levels[j]
        det = lv.detected_total()
        if det == 0:
            continue
        ratio = lv.sifted[basis] / det
        total += lv.sent * scheme.mus[j] * math.exp(-scheme.mus[j]) * ratio
    return total


def b1_worst_case(
    tally: SessionTally,
    scheme: DecoyScheme,
    y1_lower: float,
    basis: str,
    levels: tuple[int, ...] | None = None,
) -> ErrorBoundResult:
    """Upper-bound b1 by charging every observed error to single photons.

    value = (observed errors in ``basis``) / N1_lower, clamped to [0, 1],
    by default over every intensity level: all errors seen in the basis
    are assumed to sit on the certified single-photon sifted population
    N1_lower = y1_lower * W.  When that population is zero the bound
    collapses to 1 (feasible but vacuous), which downstream forces a
    zero-length key.
    """
    if levels is None:
        levels = tuple(range(scheme.n_levels))
    weight = single_photon_sifted_weight(tally, scheme, basis, levels)
    n1 = y1_lower * weight
    errors = sum(tally.levels[j].errors[basis] for j in levels)
    if n1 <= 0.0:
        return ErrorBoundResult(feasible=False, value=1.0)
    return ErrorBoundResult(feasible=True, value=min(1.0, errors / n1))


@dataclass(frozen=True)
class SinglePhotonBounds:
    """Full decoy-analysis output for one session.

    ``b1_tight_by_basis[b]`` never exceeds ``b1_worst_by_basis[b]``: both
    are valid upper confidence bounds, so the composition takes their
    minimum for the tight variant.
    """

    feasible: bool
    y1_lower: float
    n1_lower_by_basis: dict[str, float]
    b1_worst_by_basis: dict[str, float]
    b1_tight_by_basis: dict[str, float]
    bounds_consumed: int  # number of one-sided epsilon-bounds used

    @property
    def epsilon_budget(self) -> int:
        return self.bounds_consumed


def single_photon_bounds(
    tally: SessionTally,
    scheme: DecoyScheme,
    config: ConfidenceConfig,
    key_levels: tuple[int, ...] | None = None,
    bisection_tolerance: float = 1e-9,
) -> SinglePhotonBounds:
    """Run the complete decoy analysis: y1 floor plus both b1 variants per basis.

    ``key_levels`` (default: the signal level) sets which levels' sifted
    bits are keyed; it scopes ``n1_lower_by_basis``, the certified
    single-photon population available for key extraction.  Both b1
    bounds, in contrast, always use the whole session: the single-photon
    error rate is a property of the channel, not of a level, so every
    observed error constrains it.
    """
    if key_levels is None:
        key_levels = (scheme.signal_index,)
    ysys = yield_bounds(tally, scheme, config)
    ysol = solve_y1_lower(ysys)

    n1 = {}
    worst = {}
    tight = {}
    n_levels = scheme.n_levels
    # 2 bounds per level for yields; per basis: 2 more per level for errors.
    consumed = 2 * n_levels + 2 * n_levels * len(BASES)
    for basis in BASES:
        weight = single_photon_sifted_weight(tally, scheme, basis, key_levels)
        n1[basis] = ysol.y1_lower * weight
        wc = b1_worst_case(tally, scheme, ysol.y1_lower, basis)
        worst[basis] = wc.value
        if ysol.feasible:
            esys = error_bounds(tally, scheme, config, basis)
            tb = b1_tight(
                ysys, esys, ysol.y1_lower, bisection_tolerance,
                pin_vacuum=config.pin_vacuum_errors,
            )
            tight[basis] = min(tb.value, wc.value) if tb.feasible else wc.value
        else:
            tight[basis] = 1.0
    return SinglePhotonBounds(
        feasible=ysol.feasible,
        y1_lower=ysol.y1_lower,
        n1_lower_by_basis=n1,
        b1_worst_by_basis=worst,
        b1_tight_by_basis=tight,
        bounds_consumed=consumed,
    )
