"""Self-contained LP/MILP solver for box-bounded dispatch problems.

The LP core is a bounded-variable revised simplex: variables live between
(possibly infinite) bounds, one slack per constraint row, no artificial
variables.  Feasibility is reached with a composite phase 1 that minimizes
the total bound violation of the basic variables, which also lets
branch-and-bound nodes warm-start from the parent basis after a bound fix.
Binary variables are handled by best-first branch and bound on the
``binary_mask`` flags.

Everything is deterministic: Dantzig pricing with lowest-index tie-breaks,
Bland's rule as anti-cycling fallback, and heap ordering by insertion
sequence on equal node bounds.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Relation",
    "Status",
    "LinearProblem",
    "Solution",
    "SolveStats",
    "SolverOptions",
    "FeasibilityReport",
    "solve_lp",
    "solve_milp",
    "check_feasible",
    "dump_problem",
]

INF = float("inf")

LE, EQ, GE = "<=", "=", ">="
_RELATIONS = (LE, EQ, GE)


class Status(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"
    NODE_LIMIT = "node_limit"


@dataclass
class SolveStats:
    iterations: int = 0
    nodes: int = 0
    wall_time: float = 0.0


@dataclass
class Solution:
    status: Status
    values: np.ndarray | None
    objective: float | None
    stats: SolveStats = field(default_factory=SolveStats)


@dataclass
class SolverOptions:
    """Numerical knobs; defaults match the documented solver contract."""

    feas_tol: float = 1e-7      # bound/row violation tolerance (scaled data)
    opt_tol: float = 1e-9       # reduced-cost tolerance
    int_tol: float = 1e-6       # integrality tolerance for binaries
    abs_gap: float = 1e-6       # absolute MILP optimality gap
    max_iterations: int | None = None   # per LP solve; None = 50 * n_vars
    node_limit: int = 100_000
    refactor_every: int = 100
    bland_after: int = 300      # consecutive degenerate pivots before Bland

    def iteration_cap(self, n_vars: int) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return max(100, 50 * n_vars)


Row = tuple[np.ndarray, np.ndarray, str, float]


@dataclass
class LinearProblem:
    """Sparse MILP instance: box bounds, constraint rows, binary flags.

    ``rows`` holds ``(indices, coefficients, relation, rhs)`` tuples with
    relation one of ``"<="``, ``"="``, ``">="``.  Bounds may be ``+-inf``.
    """

    n_vars: int
    cost: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    rows: list[Row]
    binary_mask: np.ndarray

    @classmethod
    def build(
        cls,
        cost: Sequence[float],
        lower: Sequence[float],
        upper: Sequence[float],
        rows: Iterable[tuple[Sequence[int], Sequence[float], str, float]] = (),
        binary: Sequence[int] | None = None,
    ) -> "LinearProblem":
        cost = np.asarray(cost, dtype=float)
        n = len(cost)
        mask = np.zeros(n, dtype=bool)
        if binary is not None:
            mask[list(binary)] = True
        norm_rows: list[Row] = [
            (np.asarray(idx, dtype=int), np.asarray(coef, dtype=float), rel, float(rhs))
            for idx, coef, rel, rhs in rows
        ]
        return cls(
            n_vars=n,
            cost=cost,
            lower=np.asarray(lower, dtype=float),
            upper=np.asarray(upper, dtype=float),
            rows=norm_rows,
            binary_mask=mask,
        )

    def validate(self) -> None:
        n = self.n_vars
        for name, arr in (
            ("cost", self.cost),
            ("lower", self.lower),
            ("upper", self.upper),
            ("binary_mask", self.binary_mask),
        ):
            if len(arr) != n:
                raise ValueError(f"{name}: expected length {n}, got {len(arr)}")
        if np.any(self.lower > self.upper):
            bad = int(np.argmax(self.lower > self.upper))
            raise ValueError(
                f"variable {bad}: lower bound {self.lower[bad]} exceeds upper "
                f"bound {self.upper[bad]}"
            )
        if np.any(self.binary_mask):
            lo = self.lower[self.binary_mask]
            up = self.upper[self.binary_mask]
            if np.any(lo < -1e-12) or np.any(up > 1 + 1e-12):
                raise ValueError("binary variables must have bounds within [0, 1]")
        for k, (idx, coef, rel, _) in enumerate(self.rows):
            if rel not in _RELATIONS:
                raise ValueError(f"row {k}: unknown relation {rel!r}")
            if len(idx) != len(coef):
                raise ValueError(f"row {k}: index/coefficient length mismatch")
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise ValueError(f"row {k}: variable index out of range")


@dataclass
class FeasibilityReport:
    """Signed violations of a candidate point against a problem."""

    row_residuals: np.ndarray     # >= 0, amount each row is violated by
    bound_violations: np.ndarray  # >= 0, per variable
    max_violation: float

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_violation <= tol


def check_feasible(problem: LinearProblem, point: Sequence[float]) -> FeasibilityReport:
    """Report per-row and per-bound violations of ``point``."""
    x = np.asarray(point, dtype=float)
    if x.shape != (problem.n_vars,):
        raise ValueError(
            f"point has shape {x.shape}, expected ({problem.n_vars},)"
        )
    row_res = np.zeros(len(problem.rows))
    for k, (idx, coef, rel, rhs) in enumerate(problem.rows):
        act = float(coef @ x[idx])
        if rel == LE:
            row_res[k] = max(0.0, act - rhs)
        elif rel == GE:
            row_res[k] = max(0.0, rhs - act)
        else:
            row_res[k] = abs(act - rhs)
    bound_viol = np.maximum(problem.lower - x, 0.0) + np.maximum(x - problem.upper, 0.0)
    # +-inf bounds never contribute
    bound_viol = np.where(np.isfinite(bound_viol), bound_viol, 0.0)
    worst = 0.0
    if len(row_res):
        worst = float(row_res.max())
    if len(bound_viol):
        worst = max(worst, float(bound_viol.max()))
    return FeasibilityReport(row_res, bound_viol, worst)


# variable status codes inside the simplex
_NB_LO, _NB_UP, _BASIC, _NB_FR = 0, 1, 2, 3


class _Simplex:
    """Bounded-variable revised simplex over ``[A | I] z = b``.

    Holds the scaled constraint matrix including slack columns; bounds are
    mutated between solves by branch and bound (binary fixings), the matrix
    is shared.
    """

    def __init__(self, problem: LinearProblem, options: SolverOptions):
        self.opt = options
        n = problem.n_vars
        m = len(problem.rows)
        self.n = n
        self.m = m
        A = np.zeros((m, n))
        b = np.zeros(m)
        slack_lo = np.zeros(m)
        slack_up = np.zeros(m)
        for k, (idx, coef, rel, rhs) in enumerate(problem.rows):
            A[k, idx] = coef
            b[k] = rhs
            if rel == LE:
                slack_lo[k], slack_up[k] = 0.0, INF
            elif rel == GE:
                slack_lo[k], slack_up[k] = -INF, 0.0
            else:
                slack_lo[k], slack_up[k] = 0.0, 0.0
        # row equilibration: scale each row by its max-abs coefficient
        scale = np.abs(A).max(axis=1, initial=0.0)
        scale[scale == 0.0] = 1.0
        A /= scale[:, None]
        b /= scale
        self.A = np.hstack([A, np.eye(m)]) if m else A.reshape((0, n))
        self.b = b
        self.lower = np.concatenate([problem.lower, slack_lo])
        self.upper = np.concatenate([problem.upper, slack_up])
        cost_scale = float(np.abs(problem.cost).max(initial=0.0)) or 1.0
        self.cost_scale = cost_scale
        self.cost = np.concatenate([problem.cost / cost_scale, np.zeros(m)])
        self.ntot = n + m
        self.iter_cap = options.iteration_cap(n)

    def default_start(self) -> tuple[np.ndarray, np.ndarray]:
        """Slack basis; structural variables at their smallest finite bound."""
        vstat = np.full(self.ntot, _NB_LO, dtype=np.int8)
        no_lo = ~np.isfinite(self.lower)
        vstat[no_lo & np.isfinite(self.upper)] = _NB_UP
        vstat[no_lo & ~np.isfinite(self.upper)] = _NB_FR
        basis = np.arange(self.n, self.n + self.m)
        vstat[basis] = _BASIC
        return basis, vstat

    def _nb_values(self, vstat: np.ndarray) -> np.ndarray:
        x = np.where(vstat == _NB_UP, self.upper, self.lower)
        x[vstat == _NB_FR] = 0.0
        x[~np.isfinite(x)] = 0.0
        return x

    def solve(
        self, basis: np.ndarray, vstat: np.ndarray
    ) -> tuple[Status, np.ndarray, int]:
        """Run phase 1 + 2 from the given starting basis.

        Returns final status, the full variable vector (structural + slack)
        and the iteration count.  ``basis``/``vstat`` are updated in place so
        callers can snapshot them for warm starts.
        """
        opt = self.opt
        ftol = opt.feas_tol
        otol = opt.opt_tol
        ptol = 1e-10
        m, ntot = self.m, self.ntot

        x = self._nb_values(vstat)
        if m:
            Binv = self._refactorize(basis)
            x[basis] = 0.0
            x[basis] = Binv @ (self.b - self.A @ x)
        else:
            Binv = np.zeros((0, 0))

        fixed = self.lower == self.upper
        iters = 0
        degen = 0
        bland = False
        pivots_since_refactor = 0

        while True:
            if iters >= self.iter_cap:
                return Status.ITERATION_LIMIT, x, iters
            xB = x[basis]
            lB = self.lower[basis]
            uB = self.upper[basis]
            above = xB > uB + ftol
            below = xB < lB - ftol
            phase1 = bool(above.any() or below.any())

            if phase1:
                cB = above.astype(float) - below.astype(float)
                c_used = np.zeros(ntot)
            else:
                c_used = self.cost
                cB = c_used[basis]

            y = cB @ Binv if m else np.zeros(0)
            d = c_used - y @ self.A if m else c_used.copy()

            # entering candidates: profitable moves off a bound
            viol = np.zeros(ntot)
            at_lo = vstat == _NB_LO
            at_up = vstat == _NB_UP
            at_fr = vstat == _NB_FR
            viol[at_lo] = np.maximum(-d[at_lo], 0.0)
            viol[at_up] = np.maximum(d[at_up], 0.0)
            viol[at_fr] = np.abs(d[at_fr])
            viol[fixed] = 0.0
            if not (viol > otol).any():
                if phase1:
                    # phase-1 optimum with violations left: truly infeasible
                    return Status.INFEASIBLE, x, iters
                return Status.OPTIMAL, x, iters

            if bland:
                q = int(np.flatnonzero(viol > otol)[0])
            else:
                q = int(np.argmax(viol))
            s = 1.0 if (vstat[q] == _NB_LO or (vstat[q] == _NB_FR and d[q] < 0)) else -1.0

            w = Binv @ self.A[:, q] if m else np.zeros(0)
            delta = -s * w  # rate of change of basic values per unit step

            # ratio test
            t_limit = np.full(m, INF)
            hit_upper = np.zeros(m, dtype=bool)
            if m:
                feas = ~above & ~below
                dec = delta < -ptol
                inc = delta > ptol
                mask = above & dec
                t_limit[mask] = (xB[mask] - uB[mask]) / -delta[mask]
                hit_upper[mask] = True
                mask = below & inc
                t_limit[mask] = (lB[mask] - xB[mask]) / delta[mask]
                mask = feas & dec & np.isfinite(lB)
                t_limit[mask] = (xB[mask] - lB[mask]) / -delta[mask]
                mask = feas & inc & np.isfinite(uB)
                t_limit[mask] = (uB[mask] - xB[mask]) / delta[mask]
                hit_upper[mask] = True
                np.maximum(t_limit, 0.0, out=t_limit)

            t_basic = float(t_limit.min()) if m else INF
            rng = self.upper[q] - self.lower[q]
            t_flip = float(rng) if np.isfinite(rng) and vstat[q] != _NB_FR else INF
            t_star = min(t_basic, t_flip)

            if t_star == INF:
                if phase1:
                    # numerically stuck: refactorize once, else give up
                    Binv = self._refactorize(basis)
                    x[basis] = 0.0
                    x[basis] = Binv @ (self.b - self.A @ x)
                    iters += 1
                    pivots_since_refactor = 0
                    if bland:
                        return Status.INFEASIBLE, x, iters
                    bland = True
                    continue
                return Status.UNBOUNDED, x, iters

            iters += 1
            if t_star <= ptol:
                degen += 1
                if degen > opt.bland_after:
                    bland = True
            else:
                degen = 0
                bland = False

            if t_flip <= t_basic:
                # bound flip: entering variable jumps to its other bound
                x[q] = self.upper[q] if s > 0 else self.lower[q]
                if m:
                    x[basis] = xB + delta * t_flip
                vstat[q] = _NB_UP if s > 0 else _NB_LO
                continue

            # leaving variable: smallest ratio, stability tie-break on |delta|
            ties = np.flatnonzero(t_limit <= t_basic + 1e-12)
            if bland:
                r = int(ties[np.argmin(basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(delta[ties]))])
            leave = int(basis[r])

            x[basis] = xB + delta * t_star
            x[q] = (self.lower[q] if vstat[q] == _NB_LO else
                    self.upper[q] if vstat[q] == _NB_UP else 0.0) + s * t_star
            x[leave] = self.upper[leave] if hit_upper[r] else self.lower[leave]
            vstat[leave] = _NB_UP if hit_upper[r] else _NB_LO
            vstat[q] = _BASIC
            basis[r] = q

            # product-form inverse update
            wr = w[r]
            if abs(wr) < 1e-11:
                Binv = self._refactorize(basis)
            else:
                Binv[r, :] /= wr
                others = w.copy()
                others[r] = 0.0
                Binv -= np.outer(others, Binv[r, :])
            pivots_since_refactor += 1
            if pivots_since_refactor >= opt.refactor_every:
                Binv = self._refactorize(basis)
                xv = self._nb_values(vstat)
                xv[basis] = Binv @ (self.b - self.A @ self._zero_basic(xv, basis))
                x = xv
                pivots_since_refactor = 0

    def _zero_basic(self, x: np.ndarray, basis: np.ndarray) -> np.ndarray:
        x = x.copy()
        x[basis] = 0.0
        return x

    def _refactorize(self, basis: np.ndarray) -> np.ndarray:
        B = self.A[:, basis]
        try:
            return np.linalg.inv(B)
        except np.linalg.LinAlgError:
            # fall back to least-squares pseudo-inverse; the next pivots will
            # repair the basis
            return np.linalg.pinv(B)

    def finish(self, basis: np.ndarray, vstat: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Recompute basic values from a fresh factorization for tight residuals."""
        if self.m:
            Binv = self._refactorize(basis)
            xv = self._nb_values(vstat)
            xv[basis] = Binv @ (self.b - self.A @ self._zero_basic(xv, basis))
            return xv
        return x


def _lp_on_simplex(
    sx: _Simplex,
    cost: np.ndarray,
    warm: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[Status, np.ndarray | None, float | None, int, np.ndarray, np.ndarray]:
    if warm is None:
        basis, vstat = sx.default_start()
    else:
        basis, vstat = warm[0].copy(), warm[1].copy()
    status, x, iters = sx.solve(basis, vstat)
    if status is Status.OPTIMAL:
        x = sx.finish(basis, vstat, x)
        values = x[: sx.n].copy()
        return status, values, float(cost @ values), iters, basis, vstat
    return status, None, None, iters, basis, vstat


def solve_lp(
    problem: LinearProblem, options: SolverOptions | None = None
) -> Solution:
    """Minimize ``cost @ x`` subject to the rows and bounds.

    ``binary_mask`` is ignored (binaries relaxed to their bounds).  The
    result is deterministic for a fixed input.
    """
    options = options or SolverOptions()
    problem.validate()
    t0 = time.perf_counter()
    sx = _Simplex(problem, options)
    status, values, objective, iters, _, _ = _lp_on_simplex(sx, problem.cost)
    stats = SolveStats(iterations=iters, nodes=0, wall_time=time.perf_counter() - t0)
    return Solution(status=status, values=values, objective=objective, stats=stats)


def solve_milp(
    problem: LinearProblem, options: SolverOptions | None = None
) -> Solution:
    """Best-first branch and bound over the binary variables.

    The returned objective is within ``options.abs_gap`` of the true optimum;
    branching is on the most fractional binary (ties: lowest index) and node
    LPs warm-start from the parent basis.  Node-limit exhaustion is reported
    as ``Status.NODE_LIMIT``.
    """
    options = options or SolverOptions()
    problem.validate()
    bin_idx = np.flatnonzero(problem.binary_mask)
    if len(bin_idx) == 0:
        return solve_lp(problem, options)

    t0 = time.perf_counter()
    sx = _Simplex(problem, options)
    base_lower = sx.lower.copy()
    base_upper = sx.upper.copy()

    total_iters = 0
    nodes = 0
    incumbent: np.ndarray | None = None
    incumbent_obj = INF
    limit_hit = False
    iteration_trouble = False

    # heap entries: (lp bound of parent, sequence, fixings, warm basis)
    seq = 0
    root: tuple[float, int, dict[int, float], tuple | None] = (-INF, seq, {}, None)
    heap = [root]
    while heap:
        bound, _, fixings, warm = heapq.heappop(heap)
        if bound >= incumbent_obj - options.abs_gap:
            continue
        if nodes >= options.node_limit:
            limit_hit = True
            break
        nodes += 1
        sx.lower[:] = base_lower
        sx.upper[:] = base_upper
        for j, v in fixings.items():
            sx.lower[j] = v
            sx.upper[j] = v
        status, values, objective, iters, basis, vstat = _lp_on_simplex(
            sx, problem.cost, warm
        )
        total_iters += iters
        if status is Status.UNBOUNDED:
            stats = SolveStats(total_iters, nodes, time.perf_counter() - t0)
            return Solution(Status.UNBOUNDED, None, None, stats)
        if status is not Status.OPTIMAL:
            if status is Status.ITERATION_LIMIT:
                iteration_trouble = True
            continue
        if objective >= incumbent_obj - options.abs_gap:
            continue
        frac = np.abs(values[bin_idx] - np.round(values[bin_idx]))
        worst = int(np.argmax(frac))
        if frac[worst] <= options.int_tol:
            vals = values.copy()
            vals[bin_idx] = np.round(vals[bin_idx])
            obj = float(problem.cost @ vals)
            if obj < incumbent_obj:
                incumbent_obj = obj
                incumbent = vals
            continue
        j = int(bin_idx[worst])
        snapshot = (basis.copy(), vstat.copy())
        for fix_value in (0.0, 1.0):
            child = dict(fixings)
            child[j] = fix_value
            seq += 1
            heapq.heappush(heap, (objective, seq, child, snapshot))

    stats = SolveStats(total_iters, nodes, time.perf_counter() - t0)
    if incumbent is not None:
        status = Status.NODE_LIMIT if limit_hit else Status.OPTIMAL
        return Solution(status, incumbent, incumbent_obj, stats)
    if limit_hit:
        return Solution(Status.NODE_LIMIT, None, None, stats)
    if iteration_trouble:
        return Solution(Status.ITERATION_LIMIT, None, None, stats)
    return Solution(Status.INFEASIBLE, None, None, stats)


def dump_problem(problem: LinearProblem, path: str | Path) -> None:
    """Write a plain-text dump for external cross-checking.

    Format: header lines ``nvars``, ``cost``, ``lower``, ``upper``,
    ``binary`` (space-separated values), then one ``row`` line per
    constraint: ``row <rel> <rhs> <idx>:<coef> ...``.
    """
    def fmt(v: float) -> str:
        return repr(float(v))

    lines = [f"nvars {problem.n_vars}"]
    for name, arr in (
        ("cost", problem.cost),
        ("lower", problem.lower),
        ("upper", problem.upper),
    ):
        lines.append(name + " " + " ".join(fmt(v) for v in arr))
    lines.append("binary " + " ".join(str(int(v)) for v in problem.binary_mask))
    for idx, coef, rel, rhs in problem.rows:
        terms = " ".join(f"{int(i)}:{fmt(c)}" for i, c in zip(idx, coef))
        lines.append(f"row {rel} {fmt(rhs)} {terms}")
    Path(path).write_text("\n".join(lines) + "\n")
