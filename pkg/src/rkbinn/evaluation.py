"""Forecast metrics, identification error and report rendering."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .bilinear import PolynomialCoefficients, RKModel, model_forward
from .dynamics import DIVERGENCE_LIMIT, OdeSystem, Trajectory, integrate_fixed
from .numerics import DimensionError

log = logging.getLogger(__name__)

HORIZONS = (1, 4, 8)


@dataclass
class Rollout:
    trajectory: Trajectory
    diverged: bool = False
    diverged_at: int | None = None


def rollout(step_fn: Callable, x0, n_steps: int, h: float = 1.0, t0: float = 0.0) -> Rollout:
    """Iterate a one-step predictor; stops early (flagged) once a state leaves ``|x| <= 1e12``.

    A ``FloatingPointError`` raised by ``step_fn`` counts as divergence too.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.asarray(x0, dtype=np.float64)
    states = [x]
    for n in range(1, n_steps + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                x = np.asarray(step_fn(x), dtype=np.float64)
        except FloatingPointError:
            return Rollout(Trajectory(t0, h, np.array(states)), True, n)
        if not np.all(np.abs(x) <= DIVERGENCE_LIMIT):
            return Rollout(Trajectory(t0, h, np.array(states)), True, n)
        states.append(x)
    return Rollout(Trajectory(t0, h, np.array(states)))


def forecast_via_solver(model: RKModel, x0, t_end: float, scheme: str = "rk4") -> Trajectory:
    """Use the learned block as a vector field inside a classical fixed-step solver."""
    n_steps = int(round(t_end / model.dt))
    return integrate_fixed(model.field, x0, model.dt, n_steps, scheme=scheme)


class ReplayPredictor:
    """Maps each state of a recorded series to its recorded successor (a perfect oracle)."""

    def __init__(self, traj: Trajectory):
        self.states = traj.states
        self._index = {}
        for i, s in enumerate(self.states[:-1]):
            self._index.setdefault(s.tobytes(), i)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        try:
            idx = [self._index[x.tobytes()] for x in X]
        except KeyError:
            raise ValueError("state is not part of the replayed series") from None
        return self.states[np.array(idx) + 1]


@dataclass
class ForecastReport:
    model_id: str
    horizons: tuple
    rmse: list
    n_initial_conditions: int
    n_diverged: list = field(default_factory=list)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ValueError("horizons must be strictly increasing")


def rmse_at_horizons(predictor: Callable, test: Trajectory, horizons=HORIZONS,
                     model_id: str = "model") -> ForecastReport:
    """RMSE of iterated forecasts from every admissible start of ``test``.

    ``predictor`` maps a batch ``(n, d)`` of states one step ahead. All
    starts ``k`` with ``k + max(horizons)`` inside the series are rolled
    out together. A start whose forecast leaves ``|x| <= 1e12`` (or turns
    non-finite) is counted as diverged and excluded from every horizon.
    """
    horizons = tuple(int(m) for m in horizons)
    S = test.states
    hmax = max(horizons)
    n_starts = len(S) - hmax
    if n_starts < 1:
        raise ValueError(f"test series of {len(S)} states is too short for horizon {hmax}")
    X = S[:n_starts].copy()
    alive = np.ones(n_starts, dtype=bool)
    sq_err = {}
    with np.errstate(all="ignore"):
        for m in range(1, hmax + 1):
            X = np.asarray(predictor(X), dtype=np.float64)
            bad = ~np.all(np.abs(X) <= DIVERGENCE_LIMIT, axis=1)
            alive &= ~bad
            X[bad] = 0.0
            if m in horizons:
                sq_err[m] = (X - S[m:m + n_starts]) ** 2
    n_div = int((~alive).sum())
    if n_div:
        log.warning("%s: %d of %d forecasts diverged and were excluded", model_id, n_div, n_starts)
    rmse = [float(np.sqrt(np.mean(sq_err[m][alive]))) if alive.any() else float("nan")
            for m in horizons]
    return ForecastReport(model_id, horizons, rmse, n_starts, [n_div] * len(horizons))


# ---------------------------------------------------------------------------
# identification


@dataclass
class IdentificationReport:
    mse: float
    names: list
    true: np.ndarray
    estimated: np.ndarray


def true_polynomial(system: OdeSystem) -> PolynomialCoefficients:
    if system.name != "lorenz63":
        raise ValueError("reference coefficients are only tabulated for lorenz63")
    s, r, b = (system.params[k] for k in ("sigma", "rho", "beta"))
    xi = np.zeros((10, 3))
    # rows: 1, x0, x1, x2, x0x0, x0x1, x0x2, x1x1, x1x2, x2x2
    xi[1, 0], xi[2, 0] = -s, s
    xi[1, 1], xi[2, 1], xi[6, 1] = r, -1.0, -1.0
    xi[3, 2], xi[5, 2] = -b, 1.0
    return PolynomialCoefficients.from_monomials(xi)


def parameter_mse(poly: PolynomialCoefficients, system: OdeSystem) -> IdentificationReport:
    """MSE over all 30 monomial coefficients (3 constant, 9 linear, 18 quadratic)."""
    truth = true_polynomial(system)
    if poly.d != truth.d:
        raise DimensionError(f"polynomial dim {poly.d} does not match {system.name}")
    est = poly.to_monomials()
    ref = truth.to_monomials()
    d = poly.d
    terms = ["1"] + [f"x{i}" for i in range(d)] + [f"x{i}*x{j}" for i in range(d) for j in range(i, d)]
    names = [f"dx{k}/dt:{t}" for t in terms for k in range(d)]
    return IdentificationReport(float(np.mean((est - ref) ** 2)), names, ref.ravel(), est.ravel())


# ---------------------------------------------------------------------------
# rendering


def write_forecast_csv(reports: list, path, h: float | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "horizon_steps", "horizon_time", "rmse", "n_initial_conditions", "n_diverged"])
        for r in reports:
            for m, e, nd in zip(r.horizons, r.rmse, r.n_diverged):
                w.writerow([r.model_id, m, "" if h is None else f"{m * h:.10g}", f"{e:.17g}",
                            r.n_initial_conditions, nd])


def format_forecast_table(reports: list) -> str:
    """Rows ``t0+h, t0+4h, ...``; one column per model."""
    header = ["horizon"] + [r.model_id for r in reports]
    rows = []
    for i, m in enumerate(reports[0].horizons):
        label = "t0+h" if m == 1 else f"t0+{m}h"
        rows.append([label] + [f"{r.rmse[i]:.3e}" for r in reports])
    notes = [f"{r.model_id}: {r.n_diverged[0]} diverged" for r in reports if r.n_diverged and r.n_diverged[0]]
    return _table(header, rows) + ("\n" + "\n".join(notes) if notes else "")


def format_identification_table(reports: dict) -> str:
    header = [""] + list(reports)
    return _table(header, [["MSE"] + [f"{r.mse:.4f}" for r in reports.values()]])


def write_identification_csv(report: IdentificationReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coefficient", "true", "estimated"])
        for n, t, e in zip(report.names, report.true, report.estimated):
            w.writerow([n, f"{t:.17g}", f"{e:.17g}"])
        w.writerow(["MSE", "", f"{report.mse:.17g}"])


def _table(header, rows) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    lines = [fmt.format(*header), "  ".join("-" * w for w in widths)]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines)
