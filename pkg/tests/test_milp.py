"""Solver tests: LP against vertex enumeration, MILP against brute force."""

import itertools

import numpy as np
import pytest

from vpplab.milp import (
    INF,
    LinearProblem,
    SolverOptions,
    Status,
    check_feasible,
    dump_problem,
    solve_lp,
    solve_milp,
)


def vertex_enumeration_min(cost, lower, upper, rows):
    """Independent 2-variable oracle: enumerate all candidate vertices.

    Candidates are intersections of any two active conditions (bounds or row
    equalities); infeasible candidates are discarded.
    """
    conds = []
    n = len(cost)
    assert n == 2
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(lower[j]):
            conds.append((e, lower[j]))
        if np.isfinite(upper[j]):
            conds.append((e, upper[j]))
    for idx, coef, rel, rhs in rows:
        a = np.zeros(n)
        a[list(idx)] = coef
        conds.append((a, rhs))

    def feasible(x):
        if np.any(x < np.asarray(lower) - 1e-9) or np.any(x > np.asarray(upper) + 1e-9):
            return False
        for idx, coef, rel, rhs in rows:
            act = float(np.dot(coef, x[list(idx)]))
            if rel == "<=" and act > rhs + 1e-9:
                return False
            if rel == ">=" and act < rhs - 1e-9:
                return False
            if rel == "=" and abs(act - rhs) > 1e-9:
                return False
        return True

    best = None
    for (a1, b1), (a2, b2) in itertools.combinations(conds, 2):
        M = np.vstack([a1, a2])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, [b1, b2])
        if feasible(x):
            val = float(np.dot(cost, x))
            if best is None or val < best:
                best = val
    return best


def random_instance(rng):
    """Small bounded MILP with a random number of binaries (<= 10)."""
    n_cont = rng.integers(1, 9)
    n_bin = rng.integers(1, 11)
    n = int(n_cont + n_bin)
    cost = rng.normal(0, 2, n)
    lower = np.zeros(n)
    upper = np.concatenate([rng.uniform(0.5, 5.0, n_cont), np.ones(n_bin)])
    binary = list(range(n_cont, n))
    rows = []
    for _ in range(int(rng.integers(1, 6))):
        k = int(rng.integers(1, min(n, 5) + 1))
        idx = rng.choice(n, size=k, replace=False)
        coef = rng.normal(0, 1, k)
        rel = ["<=", ">=", "="][int(rng.integers(0, 3))]
        # keep equality rows satisfiable: rhs from a random box point
        point = rng.uniform(lower, upper)
        slack = rng.uniform(0, 1.0)
        act = float(coef @ point[idx])
        rhs = act + slack if rel == "<=" else act - slack if rel == ">=" else act
        rows.append((idx, coef, rel, rhs))
    return LinearProblem.build(cost, lower, upper, rows, binary=binary)


def brute_force_milp(problem):
    """Enumerate every binary assignment, solve the remaining LP, take best."""
    bin_idx = np.flatnonzero(problem.binary_mask)
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=len(bin_idx)):
        lower = problem.lower.copy()
        upper = problem.upper.copy()
        lower[bin_idx] = bits
        upper[bin_idx] = bits
        sub = LinearProblem(
            n_vars=problem.n_vars,
            cost=problem.cost,
            lower=lower,
            upper=upper,
            rows=problem.rows,
            binary_mask=np.zeros(problem.n_vars, dtype=bool),
        )
        sol = solve_lp(sub)
        if sol.status is Status.OPTIMAL and (best is None or sol.objective < best):
            best = sol.objective
    return best


class TestSolveLp:
    def test_bound_attained_optimum(self):
        p = LinearProblem.build([1.0], [0.0], [5.0])
        sol = solve_lp(p)
        assert sol.status is Status.OPTIMAL
        assert sol.objective == pytest.approx(0.0, abs=1e-9)
        assert sol.values[0] == pytest.approx(0.0, abs=1e-9)

    def test_two_var_vertex_oracle(self):
        rows = [(np.array([0, 1]), np.array([1.0, 1.0]), "<=", 1.0)]
        p = LinearProblem.build([-1.0, -1.0], [0.0, 0.0], [1.0, 1.0], rows)
        sol = solve_lp(p)
        oracle = vertex_enumeration_min(p.cost, p.lower, p.upper, p.rows)
        assert sol.status is Status.OPTIMAL
        assert oracle == pytest.approx(-1.0)
        assert sol.objective == pytest.approx(oracle, abs=1e-9)

    def test_random_lps_match_vertex_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            rows = []
            for _ in range(int(rng.integers(0, 4))):
                coef = rng.normal(0, 1, 2)
                rel = ["<=", ">="][int(rng.integers(0, 2))]
                point = rng.uniform(0, 2, 2)
                rhs = float(coef @ point) + (0.5 if rel == "<=" else -0.5)
                rows.append((np.array([0, 1]), coef, rel, rhs))
            p = LinearProblem.build(rng.normal(0, 1, 2), [0.0, 0.0], [2.0, 2.0], rows)
            sol = solve_lp(p)
            oracle = vertex_enumeration_min(p.cost, p.lower, p.upper, p.rows)
            if oracle is None:
                assert sol.status is Status.INFEASIBLE
            else:
                assert sol.status is Status.OPTIMAL
                assert sol.objective == pytest.approx(oracle, abs=1e-7)

    def test_infeasible_detected(self):
        rows = [
            (np.array([0]), np.array([1.0]), ">=", 1.0),
            (np.array([0]), np.array([1.0]), "<=", 0.0),
        ]
        p = LinearProblem.build([1.0], [-10.0], [10.0], rows)
        assert solve_lp(p).status is Status.INFEASIBLE

    def test_unbounded_detected(self):
        p = LinearProblem.build([-1.0], [0.0], [INF])
        assert solve_lp(p).status is Status.UNBOUNDED

    def test_equality_row(self):
        rows = [(np.array([0, 1]), np.array([1.0, 1.0]), "=", 1.5)]
        p = LinearProblem.build([1.0, 2.0], [0.0, 0.0], [1.0, 1.0], rows)
        sol = solve_lp(p)
        assert sol.status is Status.OPTIMAL
        assert sol.values[0] == pytest.approx(1.0, abs=1e-9)
        assert sol.values[1] == pytest.approx(0.5, abs=1e-9)

    def test_free_variable(self):
        rows = [(np.array([0, 1]), np.array([1.0, 1.0]), ">=", 2.0)]
        p = LinearProblem.build([1.0, 0.5], [-INF, 0.0], [INF, 1.0], rows)
        sol = solve_lp(p)
        assert sol.status is Status.OPTIMAL
        # cheapest: y at its upper bound, x makes up the rest
        assert sol.objective == pytest.approx(1.5, abs=1e-8)

    def test_iteration_limit_reported(self):
        rows = [(np.array([0, 1]), np.array([1.0, 1.0]), "<=", 1.0)]
        p = LinearProblem.build([-1.0, -1.0], [0.0, 0.0], [1.0, 1.0], rows)
        sol = solve_lp(p, SolverOptions(max_iterations=0))
        assert sol.status is Status.ITERATION_LIMIT

    def test_weak_duality_spot_check(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            rows = []
            for _ in range(2):
                coef = rng.normal(0, 1, 3)
                point = rng.uniform(0, 1, 3)
                rows.append((np.arange(3), coef, "<=", float(coef @ point) + 0.3))
            p = LinearProblem.build(rng.normal(0, 1, 3), np.zeros(3), np.ones(3), rows)
            sol = solve_lp(p)
            assert sol.status is Status.OPTIMAL
            # any feasible point must cost at least the optimum
            for _ in range(20):
                x = rng.uniform(0, 1, 3)
                if check_feasible(p, x).ok(1e-9):
                    assert p.cost @ x >= sol.objective - 1e-7

    def test_determinism(self):
        rng = np.random.default_rng(3)
        p = random_instance(rng)
        a = solve_lp(p)
        b = solve_lp(p)
        assert a.objective == b.objective
        assert a.stats.iterations == b.stats.iterations
        assert np.array_equal(a.values, b.values)


class TestSolveMilp:
    def test_no_binaries_equals_lp(self):
        rows = [(np.array([0, 1]), np.array([2.0, 1.0]), "<=", 3.0)]
        p = LinearProblem.build([-1.0, -1.0], [0.0, 0.0], [2.0, 2.0], rows)
        lp = solve_lp(p)
        mip = solve_milp(p)
        assert mip.objective == lp.objective
        assert np.array_equal(mip.values, lp.values)

    def test_knapsack_enumeration(self):
        # max 5a + 4b s.t. 2a + 3b <= 4, binaries -> a=1, b=0
        rows = [(np.array([0, 1]), np.array([2.0, 3.0]), "<=", 4.0)]
        p = LinearProblem.build([-5.0, -4.0], [0.0, 0.0], [1.0, 1.0], rows, binary=[0, 1])
        best = min(
            -5.0 * a - 4.0 * b
            for a in (0, 1)
            for b in (0, 1)
            if 2 * a + 3 * b <= 4
        )
        sol = solve_milp(p)
        assert best == -5.0
        assert sol.status is Status.OPTIMAL
        assert sol.objective == pytest.approx(best, abs=1e-9)
        assert sol.values[0] == pytest.approx(1.0)
        assert sol.values[1] == pytest.approx(0.0)

    def test_random_instances_match_enumeration(self):
        rng = np.random.default_rng(42)
        checked = 0
        for _ in range(100):
            p = random_instance(rng)
            sol = solve_milp(p)
            oracle = brute_force_milp(p)
            if oracle is None:
                assert sol.status is Status.INFEASIBLE
            else:
                assert sol.status is Status.OPTIMAL
                assert sol.objective == pytest.approx(oracle, abs=1e-6)
                checked += 1
        assert checked >= 50  # most random instances should be feasible

    def test_optimal_solutions_feasible(self):
        rng = np.random.default_rng(1234)
        for _ in range(50):
            p = random_instance(rng)
            sol = solve_milp(p)
            if sol.status is Status.OPTIMAL:
                report = check_feasible(p, sol.values)
                assert report.max_violation <= 1e-6
                frac = np.abs(sol.values[p.binary_mask] - np.round(sol.values[p.binary_mask]))
                assert frac.max(initial=0.0) <= 1e-6

    def test_milp_infeasible(self):
        rows = [
            (np.array([0, 1]), np.array([1.0, 1.0]), "=", 1.0),
            (np.array([0, 1]), np.array([1.0, 1.0]), "<=", 0.3),
        ]
        p = LinearProblem.build([1.0, 1.0], [0.0, 0.0], [1.0, 1.0], rows, binary=[0, 1])
        assert solve_milp(p).status is Status.INFEASIBLE

    def test_node_limit_reported(self):
        rng = np.random.default_rng(5)
        p = random_instance(rng)
        sol = solve_milp(p, SolverOptions(node_limit=0))
        assert sol.status is Status.NODE_LIMIT

    def test_determinism(self):
        rng = np.random.default_rng(77)
        p = random_instance(rng)
        a = solve_milp(p)
        b = solve_milp(p)
        assert a.objective == b.objective
        assert a.stats.nodes == b.stats.nodes
        assert a.stats.iterations == b.stats.iterations
        if a.values is not None:
            assert np.array_equal(a.values, b.values)


class TestCheckFeasible:
    def test_triangle_vertex(self):
        rows = [
            (np.array([0, 1]), np.array([1.0, 1.0]), "<=", 1.0),
        ]
        p = LinearProblem.build([0.0, 0.0], [0.0, 0.0], [1.0, 1.0], rows)
        report = check_feasible(p, [1.0, 0.0])
        assert report.max_violation == 0.0

    def test_constructed_violation(self):
        rows = [(np.array([0]), np.array([1.0]), "<=", 1.0)]
        p = LinearProblem.build([0.0], [0.0], [5.0], rows)
        report = check_feasible(p, [1.5])
        assert report.row_residuals[0] == pytest.approx(0.5)
        assert report.max_violation == pytest.approx(0.5)

    def test_dimension_mismatch(self):
        p = LinearProblem.build([0.0], [0.0], [1.0])
        with pytest.raises(ValueError):
            check_feasible(p, [0.0, 1.0])


def test_dump_problem_round_readable(tmp_path):
    rows = [(np.array([0, 1]), np.array([1.0, -2.0]), "<=", 3.0)]
    p = LinearProblem.build([1.0, 0.0], [0.0, 0.0], [1.0, 1.0], rows, binary=[1])
    path = tmp_path / "problem.txt"
    dump_problem(p, path)
    text = path.read_text().splitlines()
    assert text[0] == "nvars 2"
    assert text[-1].startswith("row <= 3.0")
    assert "binary 0 1" in text
