"""Scenario definition, variable-step time grids and profile resampling.

The scenario describes a small self-consumption community: one CHP unit with
commitment restrictions, an aggregated renewable generator that can only be
curtailed, a passive load, a battery and a limited grid connection.  Planning
runs on a variable-step time grid (fine steps first, coarse steps towards the
end of the horizon); measured profiles are kept at the fine resolution
``dt_opt`` and averaged onto grid segments in an energy-preserving way.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

__all__ = [
    "UnitParams",
    "ScenarioConfig",
    "TimeGrid",
    "Profile",
    "SegmentSeries",
    "ScenarioValidationError",
    "ProfileCoverageError",
    "default_scenario",
    "validate_scenario",
    "build_time_grid",
    "resample_profile",
    "resample_series",
    "validate_profile",
    "load_scenario",
    "load_profile_csv",
    "write_profile_csv",
]

#: default planning grid: 5-min steps up to 15 min, widening monotonically,
#: 60-min steps from 120 min to 600 min, then up to a final 180-min step;
#: 15 h total.
DEFAULT_CONTROL_POINTS = (
    0, 5, 10, 15, 30, 60, 90, 120, 180, 240, 300, 360, 420, 480, 540, 600, 720, 900,
)


class ScenarioValidationError(ValueError):
    """Raised when a scenario violates one or more invariants.

    ``violations`` lists one human-readable message per violated invariant,
    each prefixed with the offending field name.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid scenario: " + "; ".join(self.violations))


class ProfileCoverageError(ValueError):
    """Raised when a profile does not cover a requested time window."""


@dataclass(frozen=True)
class UnitParams:
    """Parameters of one dispatchable unit (here: the CHP).

    Powers are kW, durations minutes, prices EUR.  ``ramp_up``/``ramp_down``
    limit the power change per grid step; ``None`` means unlimited.
    """

    name: str
    p_min: float
    p_max: float
    ramp_up: float | None = None
    ramp_down: float | None = None
    min_uptime: float = 0.0
    min_downtime: float = 0.0
    startup_time: float = 0.0
    kappa_gen: float = 0.0
    kappa_start: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Full simulation scenario: unit limits, prices and time-grid policy."""

    chp: UnitParams
    res_p_max: float
    demand_p_max: float
    grid_p_max: float
    battery_capacity: float
    battery_p_max: float
    kappa_batt: float
    kappa_grid_draw: float
    kappa_grid_feedin: float
    kappa_res_curtail: float
    horizon: float
    control_points: tuple[float, ...] = DEFAULT_CONTROL_POINTS
    dt_opt: float = 5.0
    # must dominate every other price so unserved demand is never chosen
    # voluntarily by the optimizer
    lost_load_penalty: float = 10.0


@dataclass(frozen=True)
class TimeGrid:
    """Absolute grid points (min) and the step widths between them."""

    points: np.ndarray
    steps: np.ndarray

    @property
    def n_segments(self) -> int:
        return len(self.steps)

    @property
    def start(self) -> float:
        return float(self.points[0])

    @property
    def end(self) -> float:
        return float(self.points[-1])

    def midpoints(self) -> np.ndarray:
        """Segment midpoints, used as representative forecast lead anchors."""
        return 0.5 * (self.points[:-1] + self.points[1:])


@dataclass(frozen=True)
class Profile:
    """Fine-resolution demand / renewable availability series.

    ``times`` are minutes since simulation start, uniformly spaced by the
    scenario's ``dt_opt``; row ``i`` holds the mean power over
    ``[times[i], times[i] + dt_opt)``.
    """

    times: np.ndarray
    demand: np.ndarray
    res_available: np.ndarray


@dataclass(frozen=True)
class SegmentSeries:
    """Per-segment demand and renewable availability on a planning grid."""

    demand: np.ndarray
    res_available: np.ndarray


def default_scenario() -> ScenarioConfig:
    """Scenario used throughout the bundled experiments.

    CHP 6..20 kW with 15 min startup, 20/15 min up/down times; 10 kW grid
    connection; 20 kWh / 20 kW battery; 15 h horizon on the default variable
    grid re-planned every 5 minutes.
    """
    return ScenarioConfig(
        chp=UnitParams(
            name="chp",
            p_min=6.0,
            p_max=20.0,
            ramp_up=None,
            ramp_down=None,
            min_uptime=20.0,
            min_downtime=15.0,
            startup_time=15.0,
            kappa_gen=0.10,
            kappa_start=0.30,
        ),
        res_p_max=30.0,
        demand_p_max=50.0,
        grid_p_max=10.0,
        battery_capacity=20.0,
        battery_p_max=20.0,
        kappa_batt=0.15,
        kappa_grid_draw=0.30,
        kappa_grid_feedin=0.03,
        kappa_res_curtail=0.10,
        horizon=900.0,
        control_points=tuple(float(t) for t in DEFAULT_CONTROL_POINTS),
        dt_opt=5.0,
        lost_load_penalty=10.0,
    )


def _is_multiple(value: float, base: float, tol: float = 1e-9) -> bool:
    if base <= 0:
        return False
    ratio = value / base
    return abs(ratio - round(ratio)) <= tol


def _check_unit(unit: UnitParams, dt_opt: float, out: list[str]) -> None:
    if unit.p_min < 0:
        out.append(f"{unit.name}.p_min: must be >= 0, got {unit.p_min}")
    if unit.p_min > unit.p_max:
        out.append(
            f"{unit.name}.p_min: must be <= p_max ({unit.p_max}), got {unit.p_min}"
        )
    for label, dur in (
        ("min_uptime", unit.min_uptime),
        ("min_downtime", unit.min_downtime),
        ("startup_time", unit.startup_time),
    ):
        if dur < 0:
            out.append(f"{unit.name}.{label}: must be >= 0, got {dur}")
        elif not _is_multiple(dur, dt_opt):
            out.append(
                f"{unit.name}.{label}: {dur} min is not a multiple of dt_opt={dt_opt} min"
            )
    for label, ramp in (("ramp_up", unit.ramp_up), ("ramp_down", unit.ramp_down)):
        if ramp is not None and not (ramp > 0):
            out.append(f"{unit.name}.{label}: finite ramp limit must be > 0, got {ramp}")
    if unit.kappa_gen < 0 or unit.kappa_start < 0:
        out.append(f"{unit.name}: prices must be >= 0")


def _collect_violations(cfg: ScenarioConfig) -> list[str]:
    out: list[str] = []
    if cfg.dt_opt <= 0:
        out.append(f"dt_opt: must be > 0, got {cfg.dt_opt}")
        return out  # everything below needs a valid fine step

    _check_unit(cfg.chp, cfg.dt_opt, out)

    for name in ("res_p_max", "demand_p_max", "grid_p_max", "battery_p_max"):
        value = getattr(cfg, name)
        if value < 0:
            out.append(f"{name}: must be >= 0, got {value}")
    if cfg.battery_p_max > 0 and cfg.battery_capacity <= 0:
        out.append(
            f"battery_capacity: must be > 0 when battery enabled, got {cfg.battery_capacity}"
        )
    for name in (
        "kappa_batt",
        "kappa_grid_draw",
        "kappa_grid_feedin",
        "kappa_res_curtail",
        "lost_load_penalty",
    ):
        if getattr(cfg, name) < 0:
            out.append(f"{name}: price must be >= 0, got {getattr(cfg, name)}")

    pts = cfg.control_points
    if len(pts) < 2:
        out.append("control_points: need at least two points")
    else:
        if pts[0] != 0:
            out.append(f"control_points: first element must be 0, got {pts[0]}")
        if not all(b > a for a, b in zip(pts, pts[1:])):
            out.append("control_points: must be strictly increasing")
        if pts[-1] != cfg.horizon:
            out.append(
                f"control_points: last element must equal horizon={cfg.horizon}, got {pts[-1]}"
            )
        bad = [p for p in pts if not _is_multiple(p, cfg.dt_opt)]
        if bad:
            out.append(
                f"control_points: {bad} are not multiples of dt_opt={cfg.dt_opt}"
            )
    if cfg.horizon <= 0:
        out.append(f"horizon: must be > 0, got {cfg.horizon}")
    return out


def validate_scenario(raw: Mapping | ScenarioConfig) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from a mapping and check all invariants.

    Accepts either an existing config (re-validated) or a mapping whose keys
    mirror the ``ScenarioConfig`` field names exactly (``chp`` itself a
    mapping of ``UnitParams`` fields).  Raises
    :class:`ScenarioValidationError` listing every violated invariant.
    """
    if isinstance(raw, ScenarioConfig):
        cfg = raw
    else:
        data = dict(raw)
        unknown = set(data) - {f for f in ScenarioConfig.__dataclass_fields__}
        if unknown:
            raise ScenarioValidationError(
                [f"{k}: unknown scenario key" for k in sorted(unknown)]
            )
        try:
            unit_raw = dict(data.pop("chp"))
        except (KeyError, TypeError):
            raise ScenarioValidationError(["chp: missing or not a mapping"]) from None
        unknown = set(unit_raw) - {f for f in UnitParams.__dataclass_fields__}
        if unknown:
            raise ScenarioValidationError(
                [f"chp.{k}: unknown unit key" for k in sorted(unknown)]
            )
        unit_raw.setdefault("name", "chp")
        try:
            chp = UnitParams(**unit_raw)
            if "control_points" in data:
                data["control_points"] = tuple(float(p) for p in data["control_points"])
            cfg = ScenarioConfig(chp=chp, **data)
        except TypeError as exc:
            raise ScenarioValidationError([str(exc)]) from None

    violations = _collect_violations(cfg)
    if violations:
        raise ScenarioValidationError(violations)
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load and validate a scenario from a YAML file."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, Mapping):
        raise ScenarioValidationError([f"{path}: expected a mapping at top level"])
    return validate_scenario(raw)


def build_time_grid(config: ScenarioConfig, now: float) -> TimeGrid:
    """Place the scenario's control points at absolute time ``now``.

    Pure and deterministic; rejects control-point lists that violate the
    scenario invariants so a grid can be built from unvalidated configs too.
    """
    pts = config.control_points
    bad = _collect_violations(config)
    grid_bad = [v for v in bad if v.startswith("control_points") or v.startswith("horizon")]
    if grid_bad:
        raise ScenarioValidationError(grid_bad)
    points = np.asarray(pts, dtype=float) + float(now)
    steps = np.diff(points)
    return TimeGrid(points=points, steps=steps)


def resample_series(
    times: np.ndarray, values: np.ndarray, grid: TimeGrid, dt: float
) -> np.ndarray:
    """Average a fine series onto grid segments (energy preserving).

    ``values[i]`` is the mean power over ``[times[i], times[i] + dt)``; every
    grid segment must be exactly tiled by fine rows.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times[0] > grid.start + 1e-9 or times[-1] + dt < grid.end - 1e-9:
        raise ProfileCoverageError(
            f"profile covers [{times[0]}, {times[-1] + dt}] min but the grid "
            f"needs [{grid.start}, {grid.end}] min"
        )
    out = np.empty(grid.n_segments)
    # fine rows are uniform: locate by index arithmetic
    for k in range(grid.n_segments):
        i0 = int(round((grid.points[k] - times[0]) / dt))
        i1 = int(round((grid.points[k + 1] - times[0]) / dt))
        if i0 < 0 or i1 > len(values) or i1 <= i0:
            raise ProfileCoverageError(
                f"grid segment [{grid.points[k]}, {grid.points[k + 1]}] min not "
                f"covered by profile rows"
            )
        out[k] = values[i0:i1].mean()
    return out


def resample_profile(profile: Profile, grid: TimeGrid, dt: float | None = None) -> SegmentSeries:
    """Resample demand and RES availability onto a planning grid."""
    if dt is None:
        dt = float(profile.times[1] - profile.times[0]) if len(profile.times) > 1 else 5.0
    return SegmentSeries(
        demand=resample_series(profile.times, profile.demand, grid, dt),
        res_available=resample_series(profile.times, profile.res_available, grid, dt),
    )


def validate_profile(profile: Profile, config: ScenarioConfig) -> None:
    """Check profile invariants against the scenario limits."""
    problems: list[str] = []
    t = profile.times
    if len(t) < 2:
        problems.append("times: need at least two rows")
    else:
        dt = np.diff(t)
        if not np.all(dt > 0):
            problems.append("times: must be strictly increasing")
        elif not np.allclose(dt, config.dt_opt, atol=1e-9):
            problems.append(f"times: spacing must be uniform dt_opt={config.dt_opt} min")
    if np.any(profile.demand < -1e-9) or np.any(profile.demand > config.demand_p_max + 1e-9):
        problems.append(f"demand: values must lie in [0, {config.demand_p_max}] kW")
    if np.any(profile.res_available < -1e-9) or np.any(
        profile.res_available > config.res_p_max + 1e-9
    ):
        problems.append(f"res_available: values must lie in [0, {config.res_p_max}] kW")
    if problems:
        raise ScenarioValidationError(problems)


def load_profile_csv(path: str | Path) -> Profile:
    """Read a profile CSV with header ``time_min,demand_kw,res_kw``."""
    times: list[float] = []
    demand: list[float] = []
    res: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"time_min", "demand_kw", "res_kw"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise ValueError(
                f"{path}: expected header time_min,demand_kw,res_kw, got {reader.fieldnames}"
            )
        for line, row in enumerate(reader, start=2):
            try:
                times.append(float(row["time_min"]))
                demand.append(float(row["demand_kw"]))
                res.append(float(row["res_kw"]))
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{line}: malformed row {row}") from None
    return Profile(
        times=np.asarray(times), demand=np.asarray(demand), res_available=np.asarray(res)
    )


def write_profile_csv(profile: Profile, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_min", "demand_kw", "res_kw"])
        for t, d, r in zip(profile.times, profile.demand, profile.res_available):
            writer.writerow([f"{t:g}", f"{d:.6f}", f"{r:.6f}"])
