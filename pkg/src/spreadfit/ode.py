"""Fixed-step classical Runge-Kutta integration with exact landing on output times.

Two execution paths share one marching rule:

- a numba kernel, used when the system supplies a compiled in-place
  right-hand side (all built-in models do);
- a plain Python loop over :func:`rk4_step` for arbitrary callables.

Between consecutive output times the solver takes full steps of size ``h`` and
shortens the last one so that it lands exactly on the output time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .errors import IntegrationError

DEFAULT_STEP = 1e-3
NEGATIVE_TOLERANCE = -1e-9

# Slack when counting substeps so that an interval of exactly n*h is not
# split into n full steps plus a roundoff-sized sliver.
_STEP_SLACK = 1e-9


@dataclass(frozen=True)
class OdeSystem:
    """An autonomous or time-dependent system x' = g(t, x, params).

    Attributes:
        dimension: Number of state components.
        rhs: ``rhs(t, state, params) -> derivative``; must be pure.
        rhs_inplace: Optional numba-compiled ``f(t, state, params, out)`` that
            writes the derivative into ``out``. Enables the compiled path.
        nonnegative: Whether the state should stay componentwise nonnegative;
            integration then attaches a warning when it does not.
    """

    dimension: int
    rhs: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    rhs_inplace: Callable | None = None
    nonnegative: bool = False

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise ValueError("dimension must be a positive integer")

    @classmethod
    def compiled(cls, dimension: int, rhs_inplace, nonnegative: bool = False) -> "OdeSystem":
        """Build a system from a numba ``@njit`` in-place right-hand side."""

        def rhs(t, state, params):
            out = np.empty(dimension)
            rhs_inplace(float(t), np.asarray(state, dtype=float),
                        np.asarray(params, dtype=float), out)
            return out

        return cls(dimension, rhs, rhs_inplace, nonnegative)


@dataclass(frozen=True)
class TimeGrid:
    """Integration window, step size and the times at which states are reported."""

    t0: float
    tf: float
    step: float
    output_times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.output_times, dtype=float)
        object.__setattr__(self, "output_times", times)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("output_times must be a non-empty 1-D sequence")
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ValueError(f"step must be positive, got {self.step}")
        if self.tf < self.t0:
            raise ValueError("tf must not precede t0")
        if self.tf > self.t0 and self.step > self.tf - self.t0:
            raise ValueError("step must not exceed tf - t0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("output_times must be strictly ascending")
        if times[0] < self.t0 or times[-1] > self.tf:
            raise ValueError("output_times must lie within [t0, tf]")

    @classmethod
    def covering(cls, output_times, step: float = DEFAULT_STEP, t0: float = 0.0) -> "TimeGrid":
        """Smallest grid starting at ``t0`` that contains every output time."""
        times = np.asarray(output_times, dtype=float)
        tf = float(times[-1]) if times.size else t0
        if tf > t0:
            step = min(step, tf - t0)
        return cls(float(t0), tf, float(step), times)


@dataclass
class Trajectory:
    """States sampled at the grid's output times (one row per time)."""

    times: np.ndarray
    states: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def component(self, index: int) -> np.ndarray:
        return self.states[:, index]


def _substep_count(span: float, h: float) -> int:
    if span <= 0.0:
        return 0
    return max(1, math.ceil(span / h - _STEP_SLACK))


def rk4_step(system: OdeSystem, t: float, state, h: float, params) -> np.ndarray:
    """Advance ``state`` by one classical four-stage Runge-Kutta step.

    Raises:
        IntegrationError: If any stage evaluates to a non-finite value.
    """
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    y = np.asarray(state, dtype=float)
    if y.shape != (system.dimension,):
        raise ValueError(f"state has shape {y.shape}, expected ({system.dimension},)")
    p = np.asarray(params, dtype=float)

    k1 = np.asarray(system.rhs(t, y, p), dtype=float)
    k2 = np.asarray(system.rhs(t + 0.5 * h, y + 0.5 * h * k1, p), dtype=float)
    k3 = np.asarray(system.rhs(t + 0.5 * h, y + 0.5 * h * k2, p), dtype=float)
    k4 = np.asarray(system.rhs(t + h, y + h * k3, p), dtype=float)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise IntegrationError(f"non-finite derivative in step starting at t={t!r}", time=t)
    out = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite state after step starting at t={t!r}", time=t)
    return out


@njit(cache=True)
def _march_compiled(rhs, params, y0, t0, output_times, h):
    d = y0.shape[0]
    n_out = output_times.shape[0]
    result = np.empty((n_out, d))
    y = y0.copy()
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    t = t0
    for j in range(n_out):
        target = output_times[j]
        span = target - t
        n = 0
        if span > 0.0:
            n = max(1, math.ceil(span / h - 1e-9))
        start = t
        for i in range(n):
            ti = start + i * h
            hh = h if i < n - 1 else target - ti
            rhs(ti, y, params, k1)
            for m in range(d):
                tmp[m] = y[m] + 0.5 * hh * k1[m]
            rhs(ti + 0.5 * hh, tmp, params, k2)
            for m in range(d):
                tmp[m] = y[m] + 0.5 * hh * k2[m]
            rhs(ti + 0.5 * hh, tmp, params, k3)
            for m in range(d):
                tmp[m] = y[m] + hh * k3[m]
            rhs(ti + hh, tmp, params, k4)
            ok = True
            for m in range(d):
                y[m] = y[m] + hh / 6.0 * (k1[m] + 2.0 * k2[m] + 2.0 * k3[m] + k4[m])
                if not math.isfinite(y[m]):
                    ok = False
            if not ok:
                return result, ti
        t = target
        result[j, :] = y
    return result, np.nan


def _march_python(system, params, y0, t0, output_times, h):
    states = np.empty((output_times.size, system.dimension))
    y = y0.copy()
    t = t0
    for j, target in enumerate(output_times):
        n = _substep_count(target - t, h)
        start = t
        for i in range(n):
            ti = start + i * h
            hh = h if i < n - 1 else target - ti
            y = rk4_step(system, ti, y, hh, params)
        t = target
        states[j] = y
    return states


def integrate(system: OdeSystem, params, initial_state, grid: TimeGrid) -> Trajectory:
    """Solve the initial value problem and report states at ``grid.output_times``.

    Raises:
        IntegrationError: On a non-finite state; the message names the time.
    """
    y0 = np.asarray(initial_state, dtype=float)
    if y0.shape != (system.dimension,):
        raise ValueError(f"initial_state has shape {y0.shape}, expected ({system.dimension},)")
    p = np.ascontiguousarray(params, dtype=float)
    times = grid.output_times

    if system.rhs_inplace is not None:
        states, fail_time = _march_compiled(system.rhs_inplace, p, y0, float(grid.t0),
                                            times, float(grid.step))
        if not math.isnan(fail_time):
            raise IntegrationError(
                f"non-finite state after step starting at t={fail_time!r}", time=float(fail_time))
    else:
        states = _march_python(system, p, y0, float(grid.t0), times, float(grid.step))

    traj = Trajectory(times.copy(), states)
    if system.nonnegative:
        worst = float(states.min())
        if worst < NEGATIVE_TOLERANCE:
            row, col = np.unravel_index(int(states.argmin()), states.shape)
            traj.warnings.append(
                f"positivity violated: component {col} = {worst:.3e} at t={times[row]!r}; "
                "the step may be too coarse")
    return traj
