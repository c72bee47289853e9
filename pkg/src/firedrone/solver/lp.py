"""Dense-tableau two-phase simplex.

Pricing is Dantzig (most negative reduced cost) until a run of degenerate
pivots is seen, after which Bland's smallest-index rule takes over for the
rest of the phase so cycling cannot occur.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from typing import Optional

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
DEGENERATE_RUN = 50
DUAL_TOL = 1e-7


@dataclass
class LinearProgram:
    """``min (or max) c @ x`` s.t. ``A x (<=, >=, =) b`` and ``lo <= x <= hi``."""

    c: np.ndarray
    A: np.ndarray = None
    senses: list = None
    b: np.ndarray = None
    lo: np.ndarray = None
    hi: np.ndarray = None
    maximize: bool = False

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A = np.zeros((0, n)) if self.A is None else np.asarray(self.A, dtype=float).reshape(-1, n)
        m = self.A.shape[0]
        self.b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).reshape(-1)
        self.senses = ["<="] * m if self.senses is None else list(self.senses)
        self.lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, dtype=float).reshape(-1)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).reshape(-1)
        if self.b.size != m or len(self.senses) != m:
            raise ValueError(f"{m} constraint rows but {self.b.size} right-hand sides and {len(self.senses)} senses")
        if self.lo.size != n or self.hi.size != n:
            raise ValueError("bounds must have one entry per variable")
        bad = set(self.senses) - {"<=", ">=", "="}
        if bad:
            raise ValueError(f"unknown constraint sense(s) {sorted(bad)}")
        if not (np.isfinite(self.c).all() and np.isfinite(self.A).all() and np.isfinite(self.b).all()):
            raise ValueError("LP coefficients must be finite")
        if np.any(self.lo > self.hi) or np.any(self.lo == np.inf) or np.any(self.hi == -np.inf):
            raise ValueError("variable bounds must satisfy lo <= hi")

    @property
    def n(self) -> int:
        return self.c.size

    def add_row(self, coef, sense, rhs) -> None:
        self.A = np.vstack([self.A, np.asarray(coef, dtype=float).reshape(1, -1)])
        self.senses.append(sense)
        self.b = np.append(self.b, float(rhs))

    def violation(self, x) -> float:
        """Largest constraint or bound violation at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = max(0.0, float(np.max(self.lo - x, initial=0.0)), float(np.max(x - self.hi, initial=0.0)))
        if self.A.shape[0]:
            r = self.A @ x - self.b
            s = np.asarray(self.senses)
            worst = max(worst, float(np.max(np.where(s == "<=", r, 0.0), initial=0.0)))
            worst = max(worst, float(np.max(np.where(s == ">=", -r, 0.0), initial=0.0)))
            worst = max(worst, float(np.max(np.where(s == "=", np.abs(r), 0.0), initial=0.0)))
        return worst


class LpResult(NamedTuple):
    status: str
    x: np.ndarray
    objective: float


@dataclass
class _Tableau:
    T: np.ndarray
    basis: np.ndarray
    pivots: int = 0
    degenerate: int = field(default=0)

    def pivot(self, r: int, k: int) -> None:
        T = self.T
        T[r] /= T[r, k]
        col = T[:, k].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.basis[r] = k
        self.pivots += 1

    def run(self, n_active: int, max_iter: int) -> str:
        """Minimize the objective in the last row over the first ``n_active`` columns."""
        T = self.T
        m = T.shape[0] - 1
        bland = False
        run = 0
        for _ in range(max_iter):
            red = T[m, :n_active]
            if bland:
                cand = np.nonzero(red < -PIVOT_TOL)[0]
                if cand.size == 0:
                    return OPTIMAL
                k = int(cand[0])
            else:
                k = int(np.argmin(red))
                if red[k] >= -PIVOT_TOL:
                    return OPTIMAL
            col = T[:m, k]
            pos = col > PIVOT_TOL
            if not pos.any():
                return UNBOUNDED
            ratios = np.full(m, np.inf)
            ratios[pos] = T[:m, -1][pos] / col[pos]
            best = ratios.min()
            ties = np.nonzero(ratios <= best + 1e-12)[0]
            r = int(ties[np.argmin(self.basis[ties])])
            if best <= 1e-12:
                run += 1
                if run >= DEGENERATE_RUN:
                    bland = True
            else:
                run = 0
            self.pivot(r, k)
        raise RuntimeError("simplex iteration limit reached")


def _standardize(lp: LinearProgram):
    """Rewrite as ``min c'y`` s.t. ``A'y = b' >= 0``, ``y >= 0``.

    Returns the pieces plus a map recovering ``x`` from ``y``.
    """
    n = lp.n
    sign = -1.0 if lp.maximize else 1.0
    c = sign * lp.c
    lo, hi = lp.lo, lp.hi
    free = ~np.isfinite(lo)
    # x = lo + y for finite lo; x = y_plus - y_minus for free variables
    shift = np.where(free, 0.0, lo)
    cols = [np.eye(n)]
    cost = [c]
    if free.any():
        cols.append(-np.eye(n)[:, free])
        cost.append(-c[free])
    M = np.hstack(cols)          # x = shift + M @ y
    cvec = np.concatenate(cost)
    rows = [lp.A @ M] if lp.A.shape[0] else []
    rhs = [lp.b - lp.A @ shift] if lp.A.shape[0] else []
    senses = list(lp.senses)
    boxed = np.nonzero(np.isfinite(hi))[0]
    if boxed.size:
        rows.append(M[boxed])
        rhs.append(hi[boxed] - shift[boxed])
        senses += ["<="] * boxed.size
    A = np.vstack(rows) if rows else np.zeros((0, M.shape[1]))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    return A, b, senses, cvec, M, shift, sign


def solve_lp(lp: LinearProgram, max_iter: int = 50_000) -> LpResult:
    A, b, senses, c, M, shift, sign = _standardize(lp)
    m, ny = A.shape
    if m == 0:
        if np.any(c < -PIVOT_TOL):
            return LpResult(UNBOUNDED, np.full(lp.n, np.nan), -sign * np.inf)
        x = shift + M @ np.zeros(ny)
        return LpResult(OPTIMAL, x, float(lp.c @ x))

    senses = np.asarray(senses)
    flip = b < 0
    A = np.where(flip[:, None], -A, A)
    b = np.abs(b)
    senses = np.where(flip & (senses == "<="), "G", np.where(flip & (senses == ">="), "<=", senses))
    senses = np.where(senses == "G", ">=", senses)

    n_slack = int(np.sum(senses != "="))
    S = np.zeros((m, n_slack))
    art_rows = []
    basis = np.full(m, -1)
    k = 0
    for i, s in enumerate(senses):
        if s == "<=":
            S[i, k] = 1.0
            basis[i] = ny + k
            k += 1
        elif s == ">=":
            S[i, k] = -1.0
            art_rows.append(i)
            k += 1
        else:
            art_rows.append(i)
    n_art = len(art_rows)
    Art = np.zeros((m, n_art))
    for a, i in enumerate(art_rows):
        Art[i, a] = 1.0
        basis[i] = ny + n_slack + a
    n_real = ny + n_slack
    T = np.zeros((m + 1, n_real + n_art + 1))
    T[:m, :ny] = A
    T[:m, ny:n_real] = S
    T[:m, n_real:-1] = Art
    T[:m, -1] = b
    tab = _Tableau(T, basis)

    if n_art:
        T[m, n_real:-1] = 1.0
        for i in art_rows:
            T[m] -= T[i]
        tab.run(n_real + n_art, max_iter)
        if -T[m, -1] > FEAS_TOL * max(1.0, float(np.abs(b).max())):
            return LpResult(INFEASIBLE, np.full(lp.n, np.nan), np.nan)
        # drive remaining artificials out of the basis
        keep = np.ones(m + 1, dtype=bool)
        for r in range(m):
            if tab.basis[r] >= n_real:
                row = np.abs(T[r, :n_real])
                j = int(np.argmax(row))
                if row[j] > PIVOT_TOL:
                    tab.pivot(r, j)
                else:
                    keep[r] = False
        if not keep.all():
            tab.T = T = T[keep]
            tab.basis = tab.basis[keep[:m]]
            m = T.shape[0] - 1
        T = tab.T = np.hstack([T[:, :n_real], T[:, -1:]])

    # phase two objective row: reduced costs of c over the current basis
    cfull = np.concatenate([c, np.zeros(n_slack)])
    T[m, :] = 0.0
    T[m, :n_real] = cfull
    for r in range(m):
        cb = cfull[tab.basis[r]]
        if cb != 0.0:
            T[m] -= cb * T[r]
    status = tab.run(n_real, max_iter)
    if status == UNBOUNDED:
        return LpResult(UNBOUNDED, np.full(lp.n, np.nan), -sign * np.inf)
    y = np.zeros(n_real)
    y[tab.basis] = T[:m, -1]
    x = shift + M @ y[:ny]
    return LpResult(OPTIMAL, x, float(lp.c @ x))


# ---------------------------------------------------------------------------
# bounded dual simplex with warm starts


class BasisHint(NamedTuple):
    basic: tuple          # keys of the basic variables
    rows: tuple           # row keys of the problem the basis belongs to


class WarmResult(NamedTuple):
    status: str
    x: np.ndarray
    objective: float
    basis: Optional[BasisHint]


def solve_dual_warm(
    c, A, b, senses, lo, hi, row_keys, basis_hint=None, max_iter: int = 5_000
) -> WarmResult:
    """``min c @ x`` s.t. rows and bounds, by the bounded dual simplex.

    Every row becomes ``a @ x + s = b`` with ``s >= 0`` (``<=``) or ``s = 0``
    (``=``).  ``basis_hint`` lists keys of basic variables from an earlier
    solve: ``("x", j)`` for structurals and ``("s", key)`` for the slack of
    the row tagged ``key`` in ``row_keys``.  Rows absent from the hinted
    problem enter with their slack basic.  When no dual feasible start can be
    found the problem is handed to the two-phase method.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, c.size)
    b = np.asarray(b, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    m, n = A.shape
    sgn = np.array([-1.0 if s == ">=" else 1.0 for s in senses])
    A = A * sgn[:, None]
    b = b * sgn
    N = n + m
    full = np.hstack([A, np.eye(m)])
    cost = np.concatenate([c, np.zeros(m)])
    lower = np.concatenate([lo, np.zeros(m)])
    upper = np.concatenate([hi, np.where(np.asarray(senses) == "=", 0.0, np.inf)])

    def cold():
        lp = LinearProgram(c, A, ["=" if s == "=" else "<=" for s in senses], b, lo, hi)
        res = solve_lp(lp)
        return WarmResult(res.status, res.x, res.objective, None)

    keys = [("x", j) for j in range(n)] + [("s", k) for k in row_keys]
    where = {k: i for i, k in enumerate(keys)}
    if m == 0:
        x = np.where(c >= 0, lo, hi)
        if not np.all(np.isfinite(x)):
            return cold()
        return WarmResult(OPTIMAL, x, float(c @ x), BasisHint((), ()))

    def start(basis):
        basis = list(dict.fromkeys(basis))
        if len(basis) < m:
            used = set(basis)
            basis += [n + r for r in range(m) if n + r not in used][: m - len(basis)]
        basis = basis[:m]
        try:
            Binv = np.linalg.inv(full[:, basis])
        except np.linalg.LinAlgError:
            return None
        T = Binv @ full
        if not np.all(np.isfinite(T)) or np.abs(T).max() > 1e10:
            return None
        basis = np.array(basis)
        is_basic = np.zeros(N, dtype=bool)
        is_basic[basis] = True
        d = cost - cost[basis] @ T
        d[is_basic] = 0.0
        # nonbasic values sit at the bound that keeps the reduced cost dual feasible
        nb = ~is_basic
        d[nb & (np.abs(d) <= DUAL_TOL)] = 0.0
        at_upper = nb & (d < 0.0)
        if np.any(at_upper & ~np.isfinite(upper)) or np.any(~at_upper & nb & ~np.isfinite(lower)):
            return None
        return basis, T, Binv @ b, is_basic, d, at_upper

    state = None
    if basis_hint:
        old_rows = set(basis_hint.rows)
        fresh = [n + r for r, k in enumerate(row_keys) if k not in old_rows]
        state = start([where[k] for k in basis_hint.basic if k in where] + fresh)
    if state is None:
        state = start(list(range(n, N)))
    if state is None:
        return cold()
    basis, T, beta, is_basic, d, at_upper = state
    nb = ~is_basic

    def nonbasic_values():
        v = np.where(at_upper, upper, lower)
        v[is_basic] = 0.0
        return v

    bland = False
    stall = 0
    for _ in range(max_iter):
        xn = nonbasic_values()
        xb = beta - T @ np.where(is_basic, 0.0, xn)
        lb, ub = lower[basis], upper[basis]
        below = lb - xb
        above = xb - ub
        infeas = np.maximum(below, above)
        if bland:
            bad = np.nonzero(infeas > FEAS_TOL)[0]
            r = int(bad[np.argmin(basis[bad])]) if bad.size else 0
        else:
            r = int(np.argmax(infeas))
        if infeas[r] <= FEAS_TOL:
            x = xn.copy()
            x[basis] = xb
            xs = x[:n]
            return WarmResult(OPTIMAL, xs, float(c @ xs), BasisHint(tuple(keys[k] for k in basis), tuple(row_keys)))
        row = T[r]
        free = nb & (upper > lower)
        if below[r] > above[r]:
            # basic variable must rise to its lower bound
            cand = free & (((~at_upper) & (row < -PIVOT_TOL)) | (at_upper & (row > PIVOT_TOL)))
            target = lb[r]
        else:
            cand = free & (((~at_upper) & (row > PIVOT_TOL)) | (at_upper & (row < -PIVOT_TOL)))
            target = ub[r]
        idx = np.nonzero(cand)[0]
        if idx.size == 0:
            return WarmResult(INFEASIBLE, np.full(n, np.nan), np.nan, None)
        ratios = np.abs(d[idx] / row[idx])
        best = ratios.min()
        j = int(idx[ratios <= best + 1e-12][0])
        # a run of dual-degenerate steps switches to smallest-index leaving rows
        stall = stall + 1 if best <= 1e-12 else 0
        if stall >= DEGENERATE_RUN:
            bland = True
        # pivot: column j enters, basis[r] leaves at ``target``
        leaving = int(basis[r])
        piv = T[r, j]
        T[r] /= piv
        beta[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        beta -= col * beta[r]
        d -= d[j] * T[r]
        d[j] = 0.0
        basis[r] = j
        is_basic[j] = True
        is_basic[leaving] = False
        at_upper[j] = False
        at_upper[leaving] = target == upper[leaving] and np.isfinite(upper[leaving]) and target != lower[leaving]
        nb = ~is_basic
    return cold()
