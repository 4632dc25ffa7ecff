"""Small dense two-phase simplex solver.

The constraint systems produced by the decoy analysis are tiny (tens of
variables and rows), so rather than pulling in an external LP dependency the
pipeline carries its own tableau simplex.  It is deliberately boring:
explicit slack/artificial columns, Dantzig pricing with a Bland fallback for
anti-cycling, and absolute tolerances suited to the O(1) row coefficients
these systems have after assembly.

Problems are stated as

    minimize c.x  subject to  a_ub @ x <= b_ub,  lo <= x <= hi

with ``lo``/``hi`` entries allowed to be 0/None.  Lower bounds are shifted
out and finite upper bounds become rows, which keeps the core routine to the
plain ``Ax <= b, x >= 0`` form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LPResult", "solve_lp", "SimplexError"]

_TOL = 1e-11
_MAX_ITER = 20000


class SimplexError(RuntimeError):
    """Raised when the solver exceeds its iteration budget (never expected)."""


@dataclass(frozen=True)
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    objective: float | None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def solve_lp(c, a_ub, b_ub, lo=None, hi=None) -> LPResult:
    """Minimize ``c.x`` s.t. ``a_ub @ x <= b_ub`` and ``lo <= x <= hi``.

    Parameters
    ----------
    c : array-like, shape (n,)
    a_ub : array-like, shape (m, n)
    b_ub : array-like, shape (m,)
    lo, hi : array-like or None
        Per-variable bounds.  ``lo`` defaults to 0; ``hi`` entries may be
        None/inf for unbounded-above variables.
    """
    c = np.asarray(c, dtype=float).copy()
    a = np.asarray(a_ub, dtype=float).reshape(len(b_ub), len(c)).copy()
    b = np.asarray(b_ub, dtype=float).copy()
    n = len(c)

    lo_arr = np.zeros(n) if lo is None else np.asarray(
        [0.0 if v is None else float(v) for v in lo], dtype=float
    )
    if hi is None:
        hi_arr = np.full(n, np.inf)
    else:
        hi_arr = np.asarray(
            [np.inf if v is None else float(v) for v in hi], dtype=float
        )
    if np.any(hi_arr < lo_arr - 1e-15):
        return LPResult("infeasible", None, None)

    # Shift lower bounds to zero: x = lo + z, z >= 0.
    b = b - a @ lo_arr
    shifted_hi = hi_arr - lo_arr

    # Finite upper bounds become rows z_k <= hi_k - lo_k.
    finite = np.isfinite(shifted_hi)
    if np.any(finite):
        extra = np.zeros((int(finite.sum()), n))
        extra[np.arange(int(finite.sum())), np.where(finite)[0]] = 1.0
        a = np.vstack([a, extra])
        b = np.concatenate([b, shifted_hi[finite]])

    status, z, obj_shift = _simplex_min(c, a, b)
    if status != "optimal":
        return LPResult(status, None, None)
    x = z + lo_arr
    return LPResult("optimal", x, float(c @ x))


def _simplex_min(c, a, b):
    """Core routine: min c.z s.t. a z <= b, z >= 0 (b of any sign)."""
    m, n = a.shape

    # Orient rows so the right-hand side is nonnegative; rows flipped this
    # way lose their identity slack and get an artificial instead.
    neg = b < 0
    a = np.where(neg[:, None], -a, a)
    b = np.where(neg, -b, b)
    # After flipping: original "<=" rows keep slack +1; flipped rows have
    # slack coefficient -1 and need an artificial.
    slack_sign = np.where(neg, -1.0, 1.0)
    art_rows = np.where(neg)[0]
    n_art = len(art_rows)

    # Column layout: [ structural (n) | slacks (m) | artificials (n_art) ]
    width = n + m + n_art
    tab = np.zeros((m, width + 1))
    tab[:, :n] = a
    tab[np.arange(m), n + np.arange(m)] = slack_sign
    for i, row in enumerate(art_rows):
        tab[row, n + m + i] = 1.0
    tab[:, -1] = b

    basis = np.empty(m, dtype=int)
    basis[:] = n + np.arange(m)  # slacks
    for i, row in enumerate(art_rows):
        basis[row] = n + m + i

    if n_art:
        # Phase 1: minimize the sum of artificials.
        cost1 = np.zeros(width)
        cost1[n + m :] = 1.0
        val = _run_simplex(tab, basis, cost1, allow_cols=width)
        if val is None:
            raise SimplexError("phase 1 exceeded iteration budget")
        if val > 1e-7:
            return "infeasible", None, None
        _evict_artificials(tab, basis, n + m)

    cost2 = np.zeros(width)
    cost2[:n] = c
    val = _run_simplex(tab, basis, cost2, allow_cols=n + m)
    if val is None:
        return "unbounded", None, None

    z = np.zeros(n)
    for i, bi in enumerate(basis):
        if bi < n:
            z[bi] = tab[i, -1]
    return "optimal", z, val


def _run_simplex(tab, basis, cost, allow_cols):
    """Run simplex iterations in place.  Returns objective, or None if unbounded."""
    m = tab.shape[0]
    bland = False
    for iteration in range(_MAX_ITER):
        # Reduced costs: r = cost - cost_B . B^-1 A  (tableau is already B^-1 A).
        cb = cost[basis]
        r = cost[:allow_cols] - cb @ tab[:, :allow_cols]
        r[basis[basis < allow_cols]] = 0.0  # exact zeros for basic columns

        if bland:
            candidates = np.where(r < -_TOL)[0]
            if candidates.size == 0:
                return float(cb @ tab[:, -1])
            col = int(candidates[0])
        else:
            col = int(np.argmin(r))
            if r[col] >= -_TOL:
                return float(cb @ tab[:, -1])

        column = tab[:, col]
        positive = column > _TOL
        if not np.any(positive):
            return None  # unbounded in this direction
        ratios = np.full(m, np.inf)
        ratios[positive] = tab[positive, -1] / column[positive]
        row = int(np.argmin(ratios))
        if bland:
            # Bland tie-break: smallest basis index among minimal ratios.
            best = ratios[row]
            ties = np.where(np.abs(ratios - best) <= 1e-12 * (1.0 + abs(best)))[0]
            row = int(min(ties, key=lambda i: basis[i]))

        _pivot(tab, row, col)
        basis[row] = col

        if iteration == 4 * (tab.shape[1] + m):
            bland = True  # degeneracy suspected; switch to anti-cycling rule
    raise SimplexError("simplex exceeded iteration budget")


def _pivot(tab, row, col):
    tab[row] /= tab[row, col]
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])
    tab[:, col] = 0.0
    tab[row, col] = 1.0


def _evict_artificials(tab, basis, n_real):
    """Pivot any artificial still basic (at zero) onto a real column."""
    m = tab.shape[0]
    for i in range(m):
        if basis[i] >= n_real:
            pivot_col = None
            for j in range(n_real):
                if abs(tab[i, j]) > 1e-9:
                    pivot_col = j
                    break
            if pivot_col is None:
                # Redundant row: zero it out; it can never bind again.
                tab[i, :] = 0.0
                continue
            _pivot(tab, i, pivot_col)
            basis[i] = pivot_col
    # Artificial columns are dead from here on: zero them so they are never
    # priced back in.
    tab[:, n_real:-1] = 0.0
