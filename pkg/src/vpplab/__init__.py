"""Virtual-power-plant dispatch laboratory.

A small library for studying how forecast error degrades the optimal
operation of a community energy system: an embedded MILP solver, a
unit-commitment problem builder on a variable time grid, lead-time
forecast-error models, and a rolling-horizon MPC simulator with per-device
cost accounting.
"""

from vpplab.model import (
    Profile,
    ScenarioConfig,
    SegmentSeries,
    TimeGrid,
    UnitParams,
    build_time_grid,
    default_scenario,
    load_profile_csv,
    load_scenario,
    resample_profile,
    validate_scenario,
)
from vpplab.milp import (
    LinearProblem,
    Solution,
    SolverOptions,
    Status,
    check_feasible,
    solve_lp,
    solve_milp,
)

__version__ = "0.1.0"
