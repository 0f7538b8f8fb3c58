"""Reference ODE systems, fixed-step and adaptive integrators, datasets.

The three systems are Lorenz-63, the Oregonator and Lorenz-96. Their
vector fields are written once as numba kernels so the adaptive solver
can run compiled; that matters for the Oregonator, whose stiffness
forces ~1e8 explicit steps for a 50k-sample dataset.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numba
import numpy as np

from .numerics import DimensionError, make_rng

DIVERGENCE_LIMIT = 1e12


class IntegrationError(RuntimeError):
    """Raised on divergence, step-size underflow or substep exhaustion."""


# ---------------------------------------------------------------------------
# vector fields


@numba.njit(cache=True)
def _lorenz63(x, p):
    sigma, rho, beta = p[0], p[1], p[2]
    out = np.empty(3)
    out[0] = sigma * (x[1] - x[0])
    out[1] = rho * x[0] - x[1] - x[0] * x[2]
    out[2] = x[0] * x[1] - beta * x[2]
    return out


@numba.njit(cache=True)
def _oregonator(x, p):
    alpha, beta, sigma = p[0], p[1], p[2]
    out = np.empty(3)
    out[0] = alpha * (x[1] + x[0] * (1.0 - beta * x[0] - x[1]))
    out[1] = (x[2] - (1.0 + x[0]) * x[1]) / alpha
    out[2] = sigma * (x[0] - x[2])
    return out


@numba.njit(cache=True)
def _lorenz96(x, p):
    forcing = p[0]
    n = x.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = (x[(i + 1) % n] - x[(i - 2) % n]) * x[(i - 1) % n] - x[i] + forcing
    return out


@numba.njit(cache=True)
def _apply_rows(kernel, xs, p):
    out = np.empty_like(xs)
    for r in range(xs.shape[0]):
        out[r] = kernel(xs[r], p)
    return out


@dataclass(frozen=True)
class OdeSystem:
    name: str
    params: dict
    dim: int
    kernel: Callable = field(repr=False, compare=False)
    param_names: tuple = field(repr=False, compare=False)

    def __post_init__(self):
        missing = [k for k in self.param_names if k not in self.params]
        if missing:
            raise ValueError(f"{self.name}: missing parameters {missing}")

    @property
    def param_array(self) -> np.ndarray:
        return np.array([float(self.params[k]) for k in self.param_names])

    def field(self, x) -> np.ndarray:
        """Evaluate the vector field on one state ``(d,)`` or a batch ``(n, d)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim or x.ndim not in (1, 2):
            raise DimensionError(f"{self.name} expects states of dim {self.dim}, got shape {x.shape}")
        if x.ndim == 1:
            return self.kernel(np.ascontiguousarray(x), self.param_array)
        return _apply_rows(self.kernel, np.ascontiguousarray(x), self.param_array)

    def __call__(self, x) -> np.ndarray:
        return self.field(x)


_REGISTRY = {
    "lorenz63": dict(kernel=_lorenz63, names=("sigma", "rho", "beta"),
                     defaults={"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
                     dim=3, h=0.01, x0=(1.0, 1.0, 1.0)),
    "oregonator": dict(kernel=_oregonator, names=("alpha", "beta", "sigma"),
                       defaults={"alpha": 77.27, "beta": 8.375e-6, "sigma": 0.161},
                       dim=3, h=0.1, x0=(1.0, 2.0, 3.0)),
    "lorenz96": dict(kernel=_lorenz96, names=("A",), defaults={"A": 9.0},
                     dim=40, h=0.05, x0=None),
}

SYSTEM_NAMES = tuple(_REGISTRY)


def make_system(name: str, **params) -> OdeSystem:
    try:
        spec = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; valid names: {', '.join(SYSTEM_NAMES)}") from None
    merged = dict(spec["defaults"])
    merged.update(params)
    return OdeSystem(name, merged, spec["dim"], spec["kernel"], spec["names"])


def default_step(name: str) -> float:
    return _REGISTRY[name]["h"]


def default_initial_condition(name: str) -> np.ndarray:
    spec = _REGISTRY[name]
    if spec["x0"] is not None:
        return np.array(spec["x0"], dtype=np.float64)
    # Lorenz-96: forcing-level rest state with one nudged component
    x0 = np.full(spec["dim"], spec["defaults"]["A"])
    x0[19] += 0.01
    return x0


def lorenz63_field(x, params: dict | None = None) -> np.ndarray:
    return make_system("lorenz63", **(params or {})).field(x)


def oregonator_field(x, params: dict | None = None) -> np.ndarray:
    return make_system("oregonator", **(params or {})).field(x)


def lorenz96_field(x, params: dict | None = None) -> np.ndarray:
    return make_system("lorenz96", **(params or {})).field(x)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    t0: float
    h: float
    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2:
            raise DimensionError("trajectory states must be (n, d)")
        if self.h <= 0:
            raise ValueError("trajectory step must be positive")

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(len(self))

    def segment(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.t0 + start * self.h, self.h, self.states[start:stop].copy())


def write_trajectory_csv(traj: Trajectory, path) -> None:
    path = Path(path)
    header = ["t"] + [f"x{i}" for i in range(traj.dim)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, row in zip(traj.times, traj.states):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def read_trajectory_csv(path) -> Trajectory:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ValueError(f"{path}: missing 't,x0,...' header")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    if data.shape[0] < 1:
        raise ValueError(f"{path}: no states")
    t = data[:, 0]
    # the step is stored implicitly; 12 digits undo the rounding of the written times
    h = float(f"{(t[-1] - t[0]) / (len(t) - 1):.12g}") if len(t) > 1 else 1.0
    return Trajectory(float(t[0]), h, data[:, 1:])


# ---------------------------------------------------------------------------
# fixed-step schemes


def euler_step(field, x, dt: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(field(x), dtype=np.float64)
    if not np.all(np.isfinite(k)):
        raise IntegrationError("non-finite field value in euler_step")
    return x + dt * k


RK4_ALPHA = (1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0)
RK4_BETA = (1.0, 0.5, 0.5, 1.0)


def rk4_step(field, x, dt: float) -> np.ndarray:
    """Classical RK4 in the residual form ``x + sum_i alpha_i dt k_i``.

    ``k_1 = f(x)``, ``k_i = f(x + beta_i dt k_{i-1})``. The summation
    order here is the reference that the network forward pass mirrors.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=np.float64)
    acc = x
    k = np.zeros_like(x)
    for a, b in zip(RK4_ALPHA, RK4_BETA):
        k = np.asarray(field(x + b * dt * k), dtype=np.float64)
        if not np.all(np.isfinite(k)):
            raise IntegrationError("non-finite stage in rk4_step")
        acc = acc + a * dt * k
    return acc


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "rk45"
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_substeps: int = 10_000_000

    def __post_init__(self):
        if self.scheme not in ("euler", "rk4", "rk45"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_substeps < 1:
            raise ValueError("max_substeps must be >= 1")


def integrate_fixed(field, x0, dt: float, n_steps: int, scheme: str = "rk4", t0: float = 0.0) -> Trajectory:
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    step = {"rk4": rk4_step, "euler": euler_step}[scheme]
    x = np.asarray(x0, dtype=np.float64).copy()
    out = np.empty((n_steps + 1, x.shape[0]))
    out[0] = x
    for n in range(1, n_steps + 1):
        x = step(field, x, dt)
        if not np.all(np.abs(x) <= DIVERGENCE_LIMIT):
            raise IntegrationError(f"integration diverged at step {n}")
        out[n] = x
    return Trajectory(t0, dt, out)


# ---------------------------------------------------------------------------
# adaptive Dormand-Prince 5(4)

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array([
    [0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

# status codes returned by the core loop
_OK, _UNDERFLOW, _EXHAUSTED, _DIVERGED = 0, 1, 2, 3


def _dopri_core(f, p, x0, h_out, n_out, rtol, atol, max_sub, A, E):
    d = x0.shape[0]
    out = np.empty((n_out + 1, d))
    out[0] = x0
    y = x0.copy()
    t = 0.0
    k = np.empty((7, d))
    k[0] = f(y, p)
    hs = 0.1 * h_out
    for n in range(1, n_out + 1):
        t_target = n * h_out
        substeps = 0
        while True:
            if substeps >= max_sub:
                return out, _EXHAUSTED, t
            remaining = t_target - t
            landing = hs >= remaining
            step = remaining if landing else hs
            if step < 1e-14 * max(1.0, abs(t)):
                return out, _UNDERFLOW, t
            for s in range(1, 7):
                ys = y.copy()
                for j in range(s):
                    if A[s, j] != 0.0:
                        ys += step * A[s, j] * k[j]
                k[s] = f(ys, p)
            y_new = ys  # stage 7 input is the 5th-order solution (FSAL)
            err = 0.0
            for i in range(d):
                e = 0.0
                for j in range(7):
                    e += E[j] * k[j, i]
                e *= step
                sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
                err += (e / sc) ** 2
            err = math.sqrt(err / d)
            substeps += 1
            if err <= 1.0 and np.all(np.isfinite(y_new)):
                t = t_target if landing else t + step
                y = y_new
                k[0] = k[6]
                fac = 10.0 if err == 0.0 else min(10.0, max(0.2, 0.9 * err ** -0.2))
                if not landing or fac * step > hs:
                    hs = fac * step
                if np.max(np.abs(y)) > 1e12:
                    return out, _DIVERGED, t
                if landing:
                    break
            else:
                fac = 0.2 if not math.isfinite(err) else max(0.2, 0.9 * err ** -0.2)
                hs = fac * step
        out[n] = y
    return out, _OK, t


_dopri_core_jit = numba.njit(cache=True)(_dopri_core)


def _run_dopri(field, x0, h: float, n_out: int, config: IntegratorConfig):
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    if isinstance(field, OdeSystem):
        return _dopri_core_jit(field.kernel, field.param_array, x0, h, n_out,
                               config.rel_tol, config.abs_tol, config.max_substeps, _A, _E)

    def f(y, _p):
        return np.asarray(field(y), dtype=np.float64)

    return _dopri_core(f, None, x0, h, n_out, config.rel_tol, config.abs_tol,
                       config.max_substeps, _A, _E)


def integrate_adaptive(field, x0, t_span: float, h: float,
                       config: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Adaptive RK45 integration sampled at every multiple of ``h`` up to ``t_span``.

    ``field`` may be an :class:`OdeSystem` (compiled fast path) or any
    callable mapping a state vector to its derivative. Steps are shortened
    to land exactly on each output time, so no interpolation is involved.
    """
    if h <= 0:
        raise ValueError("output step h must be positive")
    n_out = int(round(t_span / h))
    if n_out < 1:
        raise ValueError("t_span must cover at least one output step")
    states, status, t_reached = _run_dopri(field, x0, h, n_out, config)
    if status == _UNDERFLOW:
        raise IntegrationError(f"step size underflow at t={t_reached:.6g}")
    if status == _EXHAUSTED:
        raise IntegrationError(f"more than {config.max_substeps} substeps before t={t_reached:.6g}")
    if status == _DIVERGED:
        raise IntegrationError(f"solution diverged at t={t_reached:.6g}")
    return Trajectory(0.0, h, states)


def generate_dataset(system: OdeSystem | str, n_train: int = 50_000, n_test: int = 1000,
                     h: float | None = None, spinup: int = 1000, seed: int = 0,
                     config: IntegratorConfig = IntegratorConfig()):
    """One long adaptive run split into disjoint consecutive train and test segments.

    The seed perturbs the documented initial condition by ``1e-3 * N(0, 1)``
    per component; the first ``spinup`` output states are discarded.
    """
    if isinstance(system, str):
        system = make_system(system)
    if spinup < 0:
        raise ValueError("spinup must be >= 0")
    h = default_step(system.name) if h is None else h
    rng = make_rng(seed, "data")
    x0 = default_initial_condition(system.name) + 1e-3 * rng.standard_normal(system.dim)
    total = spinup + n_train + n_test
    traj = integrate_adaptive(system, x0, (total - 1) * h, h, config)
    full = traj.states
    train = Trajectory(spinup * h, h, full[spinup:spinup + n_train].copy())
    test = Trajectory((spinup + n_train) * h, h, full[spinup + n_train:total].copy())
    return train, test
