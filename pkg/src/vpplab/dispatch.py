"""Translate scenario + forecasts + initial state into the dispatch MILP.

Variables per grid segment t: CHP power, battery discharge/charge split,
RES curtailment, grid draw/feed split, battery state of charge, the
commitment binaries u/v/w, and (optionally) a lost-load slack that keeps the
problem feasible under any forecast.  The CHP start variable v_t is a start
*request*: its effect on the on/off state u lands at the first grid point at
least ``startup_time`` later, so the planner sees the same dead time the
plant enforces.  Minimum up/down windows run over wall-clock time and count
effective turn-on events; pre-horizon history enters as constants derived
from the initial state.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from vpplab.milp import LinearProblem, Solution, Status, check_feasible
from vpplab.model import ScenarioConfig, TimeGrid

__all__ = [
    "InitialState",
    "DispatchSchedule",
    "Command",
    "DispatchError",
    "build_dispatch_problem",
    "extract_dispatch",
    "first_step_command",
    "write_schedule_csv",
]

_EPS = 1e-6


class DispatchError(ValueError):
    """Inconsistent inputs to the problem builder or extractor."""


@dataclass(frozen=True)
class InitialState:
    """Plant state at the start of the planning horizon.

    ``chp_time_in_state`` is how long the unit has been in its current
    on/off state; ``chp_starting_remaining`` > 0 means a start request is
    pending and the unit turns on that many minutes from now (it then
    overrides ``chp_on`` which must be False).
    """

    soc: float
    chp_on: bool = False
    chp_time_in_state: float = 1e9
    chp_starting_remaining: float = 0.0
    prev_power: float = 0.0

    def validate(self, scenario: ScenarioConfig) -> None:
        problems = []
        if not 0.0 <= self.soc <= 1.0:
            problems.append(f"soc must be in [0, 1], got {self.soc}")
        if self.chp_time_in_state < 0 or self.chp_starting_remaining < 0:
            problems.append("durations must be >= 0")
        if self.chp_starting_remaining > scenario.chp.startup_time + 1e-9:
            problems.append(
                f"chp_starting_remaining {self.chp_starting_remaining} exceeds "
                f"startup_time {scenario.chp.startup_time}"
            )
        if self.chp_on and self.chp_starting_remaining > 0:
            problems.append("chp cannot be on and starting at the same time")
        if problems:
            raise DispatchError("; ".join(problems))


class _Layout:
    """Variable index layout for one dispatch problem."""

    def __init__(self, n_segments: int, allow_lost_load: bool):
        s = n_segments
        self.s = s
        self.allow_lost = allow_lost_load
        self.chp = 0
        self.dis = s
        self.chg = 2 * s
        self.curt = 3 * s
        self.draw = 4 * s
        self.feed = 5 * s
        self.x = 6 * s            # S+1 entries: x_0 .. x_S
        self.u = 7 * s + 1
        self.v = 8 * s + 1
        self.w = 9 * s + 1
        self.lost = 10 * s + 1 if allow_lost_load else None
        self.n_vars = 10 * s + 1 + (s if allow_lost_load else 0)

    @classmethod
    def infer(cls, n_segments: int, n_vars: int) -> "_Layout":
        for allow in (False, True):
            cand = cls(n_segments, allow)
            if cand.n_vars == n_vars:
                return cand
        raise DispatchError(
            f"problem with {n_vars} variables does not match a {n_segments}-segment layout"
        )


def _start_effect_map(points: np.ndarray, startup_time: float) -> dict[int, int]:
    """Map start-request index j -> grid index where the turn-on lands.

    The effect lands at the earliest grid point >= request + startup_time
    such that j is the latest index with points[j] <= points[t] - startup.
    Requests whose effect is not representable on the grid (or falls beyond
    the horizon) are dropped; the builder pins those v to zero.
    """
    n_seg = len(points) - 1
    effect: dict[int, int] = {}
    for t in range(n_seg):
        j = int(np.searchsorted(points, points[t] - startup_time + 1e-9, side="right")) - 1
        if j >= 0 and j not in effect:
            effect[j] = t
    return effect


def build_dispatch_problem(
    scenario: ScenarioConfig,
    demand_forecast: Sequence[float],
    res_forecast: Sequence[float],
    init: InitialState,
    grid: TimeGrid,
    battery_enabled: bool = True,
    allow_lost_load: bool = True,
) -> LinearProblem:
    """Assemble the MILP over the grid; see the module docstring for shape."""
    init.validate(scenario)
    s = grid.n_segments
    demand = np.asarray(demand_forecast, dtype=float)
    res = np.asarray(res_forecast, dtype=float)
    if demand.shape != (s,) or res.shape != (s,):
        raise DispatchError(
            f"forecasts must have one value per grid segment ({s}), got "
            f"{demand.shape} and {res.shape}"
        )
    chp = scenario.chp
    points = grid.points
    now = points[0]
    hours = grid.steps / 60.0

    L = _Layout(s, allow_lost_load)
    n = L.n_vars
    cost = np.zeros(n)
    lower = np.zeros(n)
    upper = np.zeros(n)

    batt_p = scenario.battery_p_max if battery_enabled else 0.0
    upper[L.chp: L.chp + s] = chp.p_max
    upper[L.dis: L.dis + s] = batt_p
    upper[L.chg: L.chg + s] = batt_p
    upper[L.curt: L.curt + s] = res
    upper[L.draw: L.draw + s] = scenario.grid_p_max
    upper[L.feed: L.feed + s] = scenario.grid_p_max
    if battery_enabled:
        upper[L.x: L.x + s + 1] = 1.0
        lower[L.x] = upper[L.x] = init.soc
    else:
        lower[L.x: L.x + s + 1] = init.soc
        upper[L.x: L.x + s + 1] = init.soc
    upper[L.u: L.u + s] = 1.0
    upper[L.v: L.v + s] = 1.0
    upper[L.w: L.w + s] = 1.0
    if allow_lost_load:
        upper[L.lost: L.lost + s] = demand

    cost[L.chp: L.chp + s] = hours * chp.kappa_gen
    cost[L.dis: L.dis + s] = hours * scenario.kappa_batt
    cost[L.curt: L.curt + s] = hours * scenario.kappa_res_curtail
    cost[L.draw: L.draw + s] = hours * scenario.kappa_grid_draw
    cost[L.feed: L.feed + s] = -hours * scenario.kappa_grid_feedin
    cost[L.v: L.v + s] = chp.kappa_start
    if allow_lost_load:
        cost[L.lost: L.lost + s] = hours * scenario.lost_load_penalty

    effect = _start_effect_map(points, chp.startup_time)
    effect_at = {t: j for j, t in effect.items()}  # turn-on segment -> request var
    for j in range(s):
        if j not in effect:
            upper[L.v + j] = 0.0  # effect not representable on this grid

    # pre-horizon history
    pending_idx: int | None = None
    turn_on_hist: float | None = None
    shutdown_hist: float | None = None
    if init.chp_starting_remaining > 0:
        target = now + init.chp_starting_remaining
        hits = np.flatnonzero(np.abs(points[:-1] - target) <= 1e-6)
        if len(hits) == 0:
            raise DispatchError(
                f"pending start completes at t={target} min which is not a grid "
                f"point; chp_starting_remaining must align with the fine grid"
            )
        pending_idx = int(hits[0])
        if pending_idx in effect_at:
            upper[L.v + effect_at[pending_idx]] = 0.0  # already starting
    elif init.chp_on:
        turn_on_hist = now - init.chp_time_in_state
    else:
        shutdown_hist = now - init.chp_time_in_state

    u_prev = 1.0 if init.chp_on else 0.0

    # history-driven fixings (also encoded in the window rows; fixing the
    # bounds keeps branch and bound away from decided segments)
    for t in range(s):
        if pending_idx is not None:
            if t < pending_idx:
                upper[L.u + t] = 0.0
            elif points[t] < points[pending_idx] + chp.min_uptime - 1e-9:
                lower[L.u + t] = 1.0
        if turn_on_hist is not None and points[t] < turn_on_hist + chp.min_uptime - 1e-9:
            lower[L.u + t] = 1.0
        if shutdown_hist is not None and points[t] < shutdown_hist + chp.min_downtime - 1e-9:
            upper[L.u + t] = 0.0
    if np.any(lower[L.u: L.u + s] > upper[L.u: L.u + s]):
        raise DispatchError("initial state forces a segment both on and off; "
                            "check min-up/down history")

    rows = []
    for t in range(s):
        # power balance: chp + dis - chg - curt + draw - feed (+ lost) = D - RES
        idx = [L.chp + t, L.dis + t, L.chg + t, L.curt + t, L.draw + t, L.feed + t]
        coef = [1.0, 1.0, -1.0, -1.0, 1.0, -1.0]
        if allow_lost_load:
            idx.append(L.lost + t)
            coef.append(1.0)
        rows.append((np.array(idx), np.array(coef), "=", float(demand[t] - res[t])))

    if battery_enabled:
        cap = scenario.battery_capacity
        for t in range(s):
            k = hours[t] / cap
            rows.append((
                np.array([L.x + t + 1, L.x + t, L.chg + t, L.dis + t]),
                np.array([1.0, -1.0, -k, k]),
                "=",
                0.0,
            ))

    for t in range(s):
        # semi-continuous CHP band
        rows.append((np.array([L.chp + t, L.u + t]), np.array([1.0, -chp.p_max]), "<=", 0.0))
        rows.append((np.array([L.chp + t, L.u + t]), np.array([1.0, -chp.p_min]), ">=", 0.0))

    for t in range(s):
        # state logic with delayed start effect
        idx = [L.u + t, L.w + t]
        coef = [1.0, 1.0]
        rhs = 0.0
        if t > 0:
            idx.append(L.u + t - 1)
            coef.append(-1.0)
        else:
            rhs += u_prev
        if t in effect_at:
            idx.append(L.v + effect_at[t])
            coef.append(-1.0)
        if pending_idx is not None and t == pending_idx:
            rhs += 1.0
        rows.append((np.array(idx), np.array(coef), "=", rhs))

    for t in range(s):
        # minimum up: turn-on events in the trailing window force u_t = 1
        window = [i for i in range(t + 1) if points[i] > points[t] - chp.min_uptime + 1e-9]
        idx = [L.v + effect_at[i] for i in window if i in effect_at]
        coef = [1.0] * len(idx)
        idx.append(L.u + t)
        coef.append(-1.0)
        rhs = 0.0
        if pending_idx is not None and pending_idx in window:
            rhs -= 1.0
        if turn_on_hist is not None and turn_on_hist > points[t] - chp.min_uptime + 1e-9:
            rhs -= 1.0
        rows.append((np.array(idx), np.array(coef), "<=", rhs))

        # minimum down: shutdown events in the trailing window force u_t = 0
        window = [i for i in range(t + 1) if points[i] > points[t] - chp.min_downtime + 1e-9]
        idx = [L.w + i for i in window]
        coef = [1.0] * len(idx)
        idx.append(L.u + t)
        coef.append(1.0)
        rhs = 1.0
        if shutdown_hist is not None and shutdown_hist > points[t] - chp.min_downtime + 1e-9:
            rhs -= 1.0
        rows.append((np.array(idx), np.array(coef), "<=", rhs))

    if chp.ramp_up is not None:
        for t in range(s):
            if t == 0:
                rows.append((np.array([L.chp]), np.array([1.0]), "<=",
                             chp.ramp_up + init.prev_power))
            else:
                rows.append((np.array([L.chp + t, L.chp + t - 1]),
                             np.array([1.0, -1.0]), "<=", chp.ramp_up))
    if chp.ramp_down is not None:
        for t in range(s):
            if t == 0:
                rows.append((np.array([L.chp]), np.array([-1.0]), "<=",
                             chp.ramp_down - init.prev_power))
            else:
                rows.append((np.array([L.chp + t - 1, L.chp + t]),
                             np.array([1.0, -1.0]), "<=", chp.ramp_down))

    binaries = list(range(L.u, L.u + 3 * s))
    return LinearProblem.build(cost, lower, upper, rows, binary=binaries)


@dataclass(frozen=True)
class DispatchSchedule:
    """Planned dispatch extracted from an optimal solution."""

    grid: TimeGrid
    p_chp: np.ndarray
    p_batt: np.ndarray        # signed, discharge > 0
    p_res_used: np.ndarray
    p_curtail: np.ndarray
    p_grid_draw: np.ndarray
    p_grid_feed: np.ndarray
    p_lost: np.ndarray
    served_demand: np.ndarray
    soc: np.ndarray           # S+1 values, soc[0] = initial
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    demand: np.ndarray
    res_available: np.ndarray
    objective: float


def extract_dispatch(
    problem: LinearProblem, solution: Solution, grid: TimeGrid
) -> DispatchSchedule:
    """Read a schedule out of an optimal solution; refuses other statuses."""
    if solution.status is not Status.OPTIMAL:
        raise DispatchError(f"cannot extract a schedule from a {solution.status.value} solve")
    s = grid.n_segments
    L = _Layout.infer(s, problem.n_vars)
    vals = solution.values
    report = check_feasible(problem, vals)
    if report.max_violation > 1e-6:
        raise DispatchError(
            f"solution violates the problem by {report.max_violation:.3e}"
        )
    seg = slice(0, s)
    res_avail = problem.upper[L.curt: L.curt + s].copy()
    balance_rhs = np.array([problem.rows[t][3] for t in range(s)])
    demand = balance_rhs + res_avail
    curtail = vals[L.curt: L.curt + s].copy()
    lost = vals[L.lost: L.lost + s].copy() if L.allow_lost else np.zeros(s)
    return DispatchSchedule(
        grid=grid,
        p_chp=vals[L.chp: L.chp + s].copy(),
        p_batt=vals[L.dis: L.dis + s] - vals[L.chg: L.chg + s],
        p_res_used=res_avail - curtail,
        p_curtail=curtail,
        p_grid_draw=vals[L.draw: L.draw + s].copy(),
        p_grid_feed=vals[L.feed: L.feed + s].copy(),
        p_lost=lost,
        served_demand=demand - lost,
        soc=vals[L.x: L.x + s + 1].copy(),
        u=np.round(vals[L.u: L.u + s]).astype(int),
        v=np.round(vals[L.v: L.v + s]).astype(int),
        w=np.round(vals[L.w: L.w + s]).astype(int),
        demand=demand,
        res_available=res_avail,
        objective=float(solution.objective),
    )


@dataclass(frozen=True)
class Command:
    """Setpoints for the first fine step plus the start/stop decision."""

    chp_start: bool
    chp_stop: bool
    chp_power: float
    battery_power: float      # signed, discharge > 0
    curtail: float
    grid_draw: float
    grid_feed: float
    lost: float


def first_step_command(schedule: DispatchSchedule) -> Command:
    """Project the schedule onto the first segment (the step that is applied)."""
    if schedule.grid.n_segments == 0:
        raise DispatchError("empty schedule")
    return Command(
        chp_start=bool(schedule.v[0] == 1),
        chp_stop=bool(schedule.w[0] == 1),
        chp_power=float(schedule.p_chp[0]),
        battery_power=float(schedule.p_batt[0]),
        curtail=float(schedule.p_curtail[0]),
        grid_draw=float(schedule.p_grid_draw[0]),
        grid_feed=float(schedule.p_grid_feed[0]),
        lost=float(schedule.p_lost[0]),
    )


def write_schedule_csv(schedule: DispatchSchedule, path: str | Path) -> None:
    """Dump a schedule: one row per segment, SOC at the segment end."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "t_min", "dt_min", "p_chp_kw", "p_batt_kw", "p_res_kw",
            "p_curtail_kw", "p_grid_kw", "soc", "u", "v", "w",
        ])
        g = schedule.grid
        for t in range(g.n_segments):
            writer.writerow([
                f"{g.points[t]:g}",
                f"{g.steps[t]:g}",
                f"{schedule.p_chp[t]:.6f}",
                f"{schedule.p_batt[t]:.6f}",
                f"{schedule.p_res_used[t]:.6f}",
                f"{schedule.p_curtail[t]:.6f}",
                f"{schedule.p_grid_draw[t] - schedule.p_grid_feed[t]:.6f}",
                f"{schedule.soc[t + 1]:.6f}",
                schedule.u[t],
                schedule.v[t],
                schedule.w[t],
            ])
