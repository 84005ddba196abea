"""Lead-time forecast-error growth model and degraded-forecast synthesis.

The relative prediction RMSE grows with lead time t following
``eps(t) = t / (a + b * t**c)``.  The model is fitted to (lead, rmse)
samples, then used two ways: drawing synthetic forecast errors whose
horizon-RMS matches a target level, and building a worst-case envelope
(demand inflated, generation deflated) for robust optimization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from vpplab.model import ScenarioConfig, TimeGrid, resample_series

__all__ = [
    "ErrorModel",
    "ForecastPolicy",
    "FitError",
    "fit_error_model",
    "eval_error_model",
    "synthesize_forecast",
    "worst_case_envelope",
    "read_rmse_samples",
    "write_rmse_samples",
    "ExternalForecasts",
    "read_external_forecasts",
]


class FitError(ValueError):
    """Raised when the error-growth fit cannot be performed."""


@dataclass(frozen=True)
class ErrorModel:
    """Parameters of ``eps(t) = t / (a + b * t**c)``.

    ``norm`` rescales eps so that its RMS over the operative set of lead
    times equals 1; it is set by :meth:`calibrated` before the model drives
    error synthesis.
    """

    a: float
    b: float
    c: float
    norm: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.c > 0):
            raise FitError(f"model parameters must be positive, got {(self.a, self.b, self.c)}")
        if not self.norm > 0:
            raise FitError(f"norm must be positive, got {self.norm}")

    def calibrated(self, leads: np.ndarray) -> "ErrorModel":
        """Return a copy whose eps/norm has unit RMS over ``leads``."""
        eps = eval_error_model(self, np.asarray(leads, dtype=float))
        rms = float(np.sqrt(np.mean(eps**2)))
        if rms <= 0:
            raise FitError("cannot calibrate: eps is zero on all given leads")
        return replace(self, norm=rms)


@dataclass(frozen=True)
class ForecastPolicy:
    """How the MPC obtains its demand/RES forecasts.

    * ``perfect`` — the resampled truth.
    * ``synthetic`` — truth plus seeded Gaussian errors with lead-dependent
      sigma scaled so the horizon-RMS equals ``target_rmse`` times the unit
      maximum.
    * ``worst_case`` — a synthetic forecast wrapped in the robust envelope
      (demand up, RES down) with margin ``margin`` (defaults to
      ``target_rmse``).
    * ``external`` — forecasts read from a CSV file, one block per issue
      time.
    """

    kind: str
    target_rmse: float = 0.0
    margin: float | None = None
    path: str | None = None
    model: ErrorModel | None = None

    _KINDS = ("perfect", "synthetic", "worst_case", "external")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}, expected one of {self._KINDS}")
        if self.target_rmse < 0:
            raise ValueError(f"target_rmse must be >= 0, got {self.target_rmse}")
        if self.kind in ("synthetic", "worst_case") and self.model is None:
            raise ValueError(f"{self.kind} policy needs an ErrorModel")
        if self.kind == "external" and not self.path:
            raise ValueError("external policy needs a file path")

    @classmethod
    def perfect(cls) -> "ForecastPolicy":
        return cls(kind="perfect")

    @classmethod
    def synthetic(cls, target_rmse: float, model: ErrorModel) -> "ForecastPolicy":
        return cls(kind="synthetic", target_rmse=target_rmse, model=model)

    @classmethod
    def worst_case(
        cls, target_rmse: float, model: ErrorModel, margin: float | None = None
    ) -> "ForecastPolicy":
        return cls(kind="worst_case", target_rmse=target_rmse, model=model, margin=margin)

    @classmethod
    def external(cls, path: str | Path) -> "ForecastPolicy":
        return cls(kind="external", path=str(path))

    def label(self) -> str:
        if self.kind == "perfect":
            return "perfect"
        if self.kind == "synthetic":
            return f"synthetic_{self.target_rmse:g}"
        if self.kind == "worst_case":
            m = self.margin if self.margin is not None else self.target_rmse
            return f"worst_case_{self.target_rmse:g}_{m:g}"
        return f"external_{Path(self.path).stem}"


def eval_error_model(model: ErrorModel, lead: float | np.ndarray) -> float | np.ndarray:
    """Evaluate ``eps(lead) = lead / (a + b * lead**c)``; lead in minutes."""
    arr = np.asarray(lead, dtype=float)
    if np.any(arr < 0):
        raise ValueError(f"lead times must be >= 0, got min {arr.min()}")
    out = np.zeros_like(arr)
    pos = arr > 0
    out[pos] = arr[pos] / (model.a + model.b * arr[pos] ** model.c)
    if np.isscalar(lead) or np.ndim(lead) == 0:
        return float(out)
    return out


def _gauss_newton(t, eps, a, b, c, iters=60):
    """Polish (a, b, c) on the original residuals; returns params and SSR."""
    params = np.array([a, b, c], dtype=float)
    lam = 1e-8

    def residuals(p):
        den = p[0] + p[1] * t ** p[2]
        return eps - t / den

    best = params.copy()
    best_ssr = float(np.sum(residuals(params) ** 2))
    for _ in range(iters):
        a_, b_, c_ = params
        den = a_ + b_ * t**c_
        f = t / den
        # Jacobian of the residual (eps - f): -df/dp
        J = np.column_stack([
            f / den,                      # -df/da = t/den^2
            f * t**c_ / den,              # -df/db
            f * b_ * t**c_ * np.log(t) / den,  # -df/dc
        ])
        r = eps - f
        A = J.T @ J + lam * np.eye(3)
        try:
            step = np.linalg.solve(A, -(J.T @ r))
        except np.linalg.LinAlgError:
            break
        cand = params + step
        if cand[0] <= 0 or cand[1] <= 0 or cand[2] <= 0:
            # halve until positive or give up this iteration
            scale = 1.0
            for _ in range(20):
                scale *= 0.5
                cand = params + scale * step
                if cand[0] > 0 and cand[1] > 0 and cand[2] > 0:
                    break
            else:
                break
        ssr = float(np.sum(residuals(cand) ** 2))
        if ssr < best_ssr - 1e-15:
            best, best_ssr = cand.copy(), ssr
            params = cand
            lam = max(lam * 0.5, 1e-12)
        else:
            lam *= 10.0
            if lam > 1e6:
                break
    return best, best_ssr


def fit_error_model(samples) -> ErrorModel:
    """Least-squares fit of the error-growth curve to (lead, rmse) samples.

    For each exponent c on a geometric grid over [0.1, 3.0] the reciprocal
    form ``1/eps = a * (1/t) + b * t**(c-1)`` is solved as a linear
    least-squares problem in (a, b); the best candidate (scored on the
    original eps scale) is polished with a damped Gauss-Newton refinement.
    """
    pts = [(float(t), float(e)) for t, e in samples]
    pts = [(t, e) for t, e in pts if t > 0]
    if len({t for t, _ in pts}) < 3:
        raise FitError("need at least 3 samples with distinct positive lead times")
    t = np.array([p[0] for p in pts])
    eps = np.array([p[1] for p in pts])
    if np.all(eps <= 0):
        raise FitError("degenerate samples: all error values are zero")
    if np.any(eps < 0):
        raise FitError("error samples must be >= 0")

    pos = eps > 0
    tp, ep = t[pos], eps[pos]
    inv = 1.0 / ep
    best = None  # (ssr, a, b, c)
    for c in np.geomspace(0.1, 3.0, 200):
        X = np.column_stack([1.0 / tp, tp ** (c - 1.0)])
        coef, *_ = np.linalg.lstsq(X, inv, rcond=None)
        a, b = float(coef[0]), float(coef[1])
        if a <= 0 or b <= 0:
            continue
        pred = t / (a + b * t**c)
        ssr = float(np.sum((eps - pred) ** 2))
        if best is None or ssr < best[0]:
            best = (ssr, a, b, c)
    if best is None:
        raise FitError("fit failed: no exponent gave positive (a, b); "
                       "check that the samples grow from zero lead time")

    (a, b, c), ssr = _gauss_newton(tp, ep, best[1], best[2], best[3])
    if a <= 0 or b <= 0 or c <= 0:
        raise FitError(f"refined fit left the positive domain: {(a, b, c)}")
    return ErrorModel(a=a, b=b, c=c)


def fit_rms_residual(model: ErrorModel, samples) -> float:
    """RMS residual of a model against (lead, rmse) samples."""
    t = np.array([float(p[0]) for p in samples])
    e = np.array([float(p[1]) for p in samples])
    pred = eval_error_model(model, t)
    return float(np.sqrt(np.mean((e - pred) ** 2)))


def error_sigmas(
    model: ErrorModel, leads: np.ndarray, target_rmse: float, unit_p_max: float
) -> np.ndarray:
    """Per-segment error standard deviations (kW) for the given lead times."""
    eps = eval_error_model(model, np.asarray(leads, dtype=float))
    return target_rmse * unit_p_max * eps / model.norm


def synthesize_forecast(
    true_values: np.ndarray,
    leads: np.ndarray,
    unit_p_max: float,
    model: ErrorModel,
    target_rmse: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Perturb per-segment truth with lead-dependent Gaussian errors.

    The sigma profile follows the calibrated error-growth curve so the
    horizon-RMS of the pre-clamp error equals ``target_rmse * unit_p_max``;
    the result is clamped to the physical range [0, unit_p_max].  With
    ``target_rmse == 0`` the truth is returned unchanged.
    """
    if target_rmse < 0:
        raise ValueError(f"target_rmse must be >= 0, got {target_rmse}")
    true_values = np.asarray(true_values, dtype=float)
    if target_rmse == 0:
        return true_values.copy()
    sigma = error_sigmas(model, leads, target_rmse, unit_p_max)
    errors = rng.normal(0.0, 1.0, size=len(true_values)) * sigma
    return np.clip(true_values + errors, 0.0, unit_p_max)


def worst_case_envelope(
    demand_forecast: np.ndarray,
    res_forecast: np.ndarray,
    leads: np.ndarray,
    model: ErrorModel,
    margin: float,
    scenario: ScenarioConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Adverse-direction envelope: demand inflated, RES deflated.

    Guards against the negative energy balance a late CHP start cannot
    cover: each segment moves by ``margin`` times the unit maximum times the
    calibrated error curve at its lead, clamped to physical ranges.
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    dem_shift = error_sigmas(model, leads, margin, scenario.demand_p_max)
    res_shift = error_sigmas(model, leads, margin, scenario.res_p_max)
    demand_wc = np.clip(np.asarray(demand_forecast) + dem_shift, 0.0, scenario.demand_p_max)
    res_wc = np.clip(np.asarray(res_forecast) - res_shift, 0.0, scenario.res_p_max)
    return demand_wc, res_wc


def read_rmse_samples(path: str | Path) -> list[tuple[float, float]]:
    """Read fitting samples from a CSV with header ``lead_min,relative_rmse``."""
    out: list[tuple[float, float]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"lead_min", "relative_rmse"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise ValueError(
                f"{path}: expected header lead_min,relative_rmse, got {reader.fieldnames}"
            )
        for line, row in enumerate(reader, start=2):
            try:
                out.append((float(row["lead_min"]), float(row["relative_rmse"])))
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{line}: malformed row {row}") from None
    return out


def write_rmse_samples(samples, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lead_min", "relative_rmse"])
        for t, e in samples:
            writer.writerow([f"{t:g}", f"{e:.6f}"])


class ExternalForecasts:
    """Forecast blocks from a CSV: ``issue_min,lead_min,demand_kw,res_kw``.

    Each issue time carries fine-resolution rows (lead spacing dt_opt)
    covering the optimization horizon; they are averaged onto whatever grid
    the MPC asks for.
    """

    def __init__(self, blocks: dict[float, tuple[np.ndarray, np.ndarray, np.ndarray]]):
        self.blocks = blocks

    @classmethod
    def from_csv(cls, path: str | Path) -> "ExternalForecasts":
        rows: dict[float, list[tuple[float, float, float]]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            expected = {"issue_min", "lead_min", "demand_kw", "res_kw"}
            if reader.fieldnames is None or set(reader.fieldnames) != expected:
                raise ValueError(
                    f"{path}: expected header issue_min,lead_min,demand_kw,res_kw, "
                    f"got {reader.fieldnames}"
                )
            for line, row in enumerate(reader, start=2):
                try:
                    issue = float(row["issue_min"])
                    rows.setdefault(issue, []).append(
                        (float(row["lead_min"]), float(row["demand_kw"]), float(row["res_kw"]))
                    )
                except (TypeError, ValueError):
                    raise ValueError(f"{path}:{line}: malformed row {row}") from None
        blocks = {}
        for issue, items in rows.items():
            items.sort()
            leads = np.array([i[0] for i in items])
            blocks[issue] = (
                leads,
                np.array([i[1] for i in items]),
                np.array([i[2] for i in items]),
            )
        return cls(blocks)

    def segment_forecast(
        self, issue: float, grid: TimeGrid, dt: float
    ) -> tuple[np.ndarray, np.ndarray]:
        if issue not in self.blocks:
            raise KeyError(f"no external forecast block issued at t={issue} min")
        leads, demand, res = self.blocks[issue]
        times = leads + issue
        return (
            resample_series(times, demand, grid, dt),
            resample_series(times, res, grid, dt),
        )


def read_external_forecasts(path: str | Path) -> ExternalForecasts:
    return ExternalForecasts.from_csv(path)
