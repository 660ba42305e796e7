"""Ordinary least squares fitting with a box-transformed Nelder-Mead simplex and multistart."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, FitError, IntegrationError
from .models import ModelKind, ModelSpec, ParameterVector, basic_reproduction_number, exponential_model
from .ode import DEFAULT_STEP, TimeGrid, integrate

SENTINEL = 1e30

# Nelder-Mead coefficients.
REFLECT = 1.0
EXPAND = 2.0
CONTRACT = 0.5
SHRINK = 0.5

RATE_RANGE = (1e-4, 10.0)
R0_RANGE = (0.5, 20.0)


@dataclass(frozen=True)
class Dataset:
    """Paired observation times (days) and infectious counts (thousands).

    Rows are stored sorted by time; the order they were supplied in is irrelevant.
    """

    times: np.ndarray
    observations: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        y = np.asarray(self.observations, dtype=float).reshape(-1)
        if t.size != y.size:
            raise ValueError(f"{t.size} times but {y.size} observations")
        if t.size == 0:
            raise ValueError("dataset has no observations")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValueError("times and observations must be finite")
        if np.any(y < 0):
            raise ValueError("observations must be nonnegative")
        order = np.argsort(t, kind="stable")
        t, y = t[order], y[order]
        if np.any(np.diff(t) <= 0):
            raise ValueError("observation times must be distinct")
        t.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "observations", y)

    def __len__(self):
        return self.times.size

    def require_for(self, model: ModelSpec) -> None:
        """Check there are more observations than parameters."""
        n, p = len(self), model.n_params
        if n <= p:
            raise DomainError(f"n <= p: {n} observations cannot support {p} parameters")


@dataclass(frozen=True)
class ObservationOperator:
    """Selects the observed state component; for SIR systems that is I."""

    index: int = 1

    def __call__(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states)[:, self.index]


INFECTIOUS = ObservationOperator(1)


def predict(model: ModelSpec, params, times, grid_step: float = DEFAULT_STEP) -> np.ndarray:
    """Model output I(t) at ``times`` (days since t = 0).

    Raises:
        IntegrationError: If the forward solve blows up.
    """
    vec = model.vector(params)
    times = np.asarray(times, dtype=float)
    if model.kind is ModelKind.EXPONENTIAL:
        out = exponential_model(times, vec)
        if not np.all(np.isfinite(out)):
            raise IntegrationError("exponential model overflowed")
        return out
    if times.size and times[0] < 0:
        raise ValueError("observation times must be >= 0; initial conditions are set at t = 0")
    grid = TimeGrid.covering(times, step=grid_step, t0=0.0)
    traj = integrate(model.system, model.rate_values(vec), model.initial_state(vec), grid)
    return INFECTIOUS(traj.states)


def ols_objective(model: ModelSpec, dataset: Dataset, params,
                  grid_step: float = DEFAULT_STEP) -> float:
    """Sum of squared residuals between observations and model output.

    Returns :data:`SENTINEL` when the forward solve fails so that a simplex
    vertex there is always the worst one.

    Raises:
        DomainError: If ``params`` lies outside the model's domain.
    """
    vec = model.check(params)
    try:
        fitted = predict(model, vec, dataset.times, grid_step)
    except IntegrationError:
        return SENTINEL
    value = float(np.sum((dataset.observations - fitted) ** 2))
    return value if math.isfinite(value) else SENTINEL


@dataclass(frozen=True)
class Tolerances:
    function_tol: float = 1e-10
    param_tol: float = 1e-8
    max_evals: int = 100_000

    def __post_init__(self):
        if not (self.function_tol > 0 and self.param_tol > 0 and self.max_evals > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class SimplexResult:
    """Outcome of one Nelder-Mead run.

    ``best_history`` holds the best objective after each iteration and is
    nonincreasing by construction.
    """

    x: np.ndarray
    fun: float
    converged: bool
    n_evaluations: int
    n_iterations: int
    best_history: list[float] = field(default_factory=list, repr=False)

    def __iter__(self):
        # Allows ``x, fun, converged = nelder_mead_minimize(...)``.
        return iter((self.x, self.fun, self.converged))


def nelder_mead_minimize(
    objective: Callable[[np.ndarray], float],
    start,
    domain,
    tolerances: Tolerances = Tolerances(),
    *,
    initial_step: float = 0.1,
    restarts: int = 2,
    log: list | None = None,
) -> SimplexResult:
    """Minimize ``objective`` over the open box ``domain`` with a Nelder-Mead simplex.

    The simplex lives in unconstrained coordinates obtained from
    ``domain.to_unconstrained``; every point handed to ``objective`` is mapped
    back into the box first. A transformed point that saturates onto a bound
    is scored :data:`SENTINEL` without calling ``objective``.

    Convergence is declared when the simplex diameter (max-norm, transformed
    space) drops below ``param_tol`` or the spread of vertex values drops below
    ``function_tol``. After convergence the simplex is rebuilt around the best
    vertex up to ``restarts`` times, stopping early once a restart fails to
    improve the best value by more than ``function_tol``.

    Args:
        objective: Function of a natural-space parameter array.
        start: Starting point, strictly inside ``domain``.
        domain: A :class:`~spreadfit.models.ParameterDomain`.
        tolerances: Stopping thresholds and evaluation budget.
        initial_step: Edge length of the initial simplex, relative to
            ``max(1, |u_k|)`` in transformed coordinates.
        restarts: Maximum number of rebuilds after convergence.
        log: If given, every evaluated natural-space point is appended to it.

    Returns:
        A :class:`SimplexResult`; with ``converged=False`` when ``max_evals``
        ran out, in which case ``x`` is the best point seen.
    """
    x0 = np.asarray(start, dtype=float)
    if not domain.contains(x0):
        raise DomainError(f"start point {x0} is not inside the domain")
    n_evals = 0

    def f(u):
        nonlocal n_evals
        x = domain.from_unconstrained(u)
        if not domain.contains(x):
            return SENTINEL
        n_evals += 1
        if log is not None:
            log.append(x.copy())
        value = float(objective(x))
        return value if math.isfinite(value) else SENTINEL

    u_best = domain.to_unconstrained(x0)
    f_best = f(u_best)
    history = [f_best]
    n_iter = 0
    converged = False
    for attempt in range(restarts + 1):
        u, fu, converged, iters = _simplex_run(f, u_best, f_best, initial_step,
                                               tolerances, lambda: n_evals, history)
        n_iter += iters
        improved = f_best - fu
        if fu <= f_best:
            u_best, f_best = u, fu
        if not converged or improved <= tolerances.function_tol:
            break

    return SimplexResult(domain.from_unconstrained(u_best), f_best, converged,
                         n_evals, n_iter, history)


def _simplex_run(f, u0, f0, initial_step, tol: Tolerances, evals, history):
    p = u0.size
    simplex = np.empty((p + 1, p))
    values = np.empty(p + 1)
    simplex[0], values[0] = u0, f0
    for k in range(p):
        vertex = u0.copy()
        vertex[k] += initial_step * max(1.0, abs(u0[k]))
        simplex[k + 1] = vertex
        values[k + 1] = f(vertex)

    iters = 0
    while True:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        history.append(float(min(history[-1], values[0])))

        diameter = float(np.max(np.abs(simplex[1:] - simplex[0])))
        if diameter < tol.param_tol or values[-1] - values[0] < tol.function_tol:
            return simplex[0].copy(), float(values[0]), True, iters
        if evals() >= tol.max_evals:
            return simplex[0].copy(), float(values[0]), False, iters
        iters += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        reflected = centroid + REFLECT * (centroid - worst)
        f_r = f(reflected)

        if f_r < values[0]:
            expanded = centroid + EXPAND * (reflected - centroid)
            f_e = f(expanded)
            if f_e < f_r:
                simplex[-1], values[-1] = expanded, f_e
            else:
                simplex[-1], values[-1] = reflected, f_r
            continue
        if f_r < values[-2]:
            simplex[-1], values[-1] = reflected, f_r
            continue

        if f_r < values[-1]:
            contracted = centroid + CONTRACT * (reflected - centroid)
            f_c = f(contracted)
            accept = f_c <= f_r
        else:
            contracted = centroid + CONTRACT * (worst - centroid)
            f_c = f(contracted)
            accept = f_c < values[-1]
        if accept:
            simplex[-1], values[-1] = contracted, f_c
            continue

        for i in range(1, p + 1):
            simplex[i] = simplex[0] + SHRINK * (simplex[i] - simplex[0])
            values[i] = f(simplex[i])


@dataclass
class FitResult:
    """Best-fit parameters and the diagnostics of the multistart search."""

    model: ModelSpec
    theta_hat: ParameterVector
    objective: float
    n_evaluations: int
    converged: bool
    local_minima: list[tuple[ParameterVector, float]]
    residuals: np.ndarray
    n_starts: int = 1
    grid_step: float = DEFAULT_STEP


def heuristic_start(model: ModelSpec, dataset: Dataset) -> ParameterVector:
    """Deterministic first start point built from the data's scale.

    SIR kinds use S0 = 10 * max(obs), I0 = first observation, gamma = 0.5 and
    beta = 2 * gamma / S0 (so R0 is about 2). The exponential start is a
    log-linear regression through the positive observations.
    """
    obs = dataset.observations
    peak = float(obs.max()) if obs.max() > 0 else 1.0
    i0 = float(obs[0]) if obs[0] > 0 else 1e-3 * peak
    cap = model.population_cap
    if model.kind is ModelKind.EXPONENTIAL:
        pos = obs > 0
        if pos.sum() >= 2:
            k, log_i0 = np.polyfit(dataset.times[pos], np.log(obs[pos]), 1)
            i0 = float(np.exp(log_i0))
        else:
            k = 0.0
        values = {"I0": min(i0, 0.5 * cap), "k": float(k)}
        return _clip_into(model, model.vector(values))

    s0 = min(10.0 * peak, 0.5 * cap)
    gamma = 0.5
    values = {"beta": 2.0 * gamma / s0, "gamma": gamma, "S0": s0, "I0": min(i0, 0.5 * cap),
              "h": 0.1 / s0, "Gamma": 0.1 * peak}
    return _clip_into(model, model.vector(values))


def _clip_into(model: ModelSpec, vec: ParameterVector) -> ParameterVector:
    # Pull a start strictly inside any user-narrowed box.
    lo, hi = model.domain.lower, model.domain.upper
    x = vec.values.copy()
    for k in range(x.size):
        if not lo[k] < x[k] < hi[k]:
            if np.isfinite(lo[k]) and np.isfinite(hi[k]):
                x[k] = 0.5 * (lo[k] + hi[k])
            elif np.isfinite(lo[k]):
                x[k] = lo[k] + max(1.0, abs(lo[k]))
            else:
                x[k] = hi[k] - max(1.0, abs(hi[k]))
    return model.vector(x)


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def random_start(model: ModelSpec, dataset: Dataset, rng: np.random.Generator) -> ParameterVector:
    """Draw one start point log-uniformly from a plausible sub-box.

    gamma comes from [1e-4, 10] per day, S0 from [max(obs), cap] and I0 from
    [1e-3 * max(obs), max(obs)]. beta is not drawn directly: R0 is drawn from
    [0.5, 20] and beta = R0 * gamma / S0, which keeps the early growth rate
    within reach of the fixed-step integrator. h is drawn so that h*S0 is in
    [1e-3, 1], Gamma from [1e-3, 1] * max(obs) per day and k uniformly from
    [-2, 2] per day.
    """
    peak = float(dataset.observations.max()) or 1.0
    cap = model.population_cap
    draws = {}
    for name in model.parameter_names:
        if name == "beta":
            continue
        if name == "gamma":
            draws[name] = _log_uniform(rng, *RATE_RANGE)
        elif name == "S0":
            draws[name] = _log_uniform(rng, min(peak, 0.5 * cap), 0.999 * cap)
        elif name == "I0":
            draws[name] = _log_uniform(rng, 1e-3 * peak, min(peak, 0.999 * cap))
        elif name == "h":
            draws[name] = _log_uniform(rng, 1e-3, 1.0) / draws["S0"]
        elif name == "Gamma":
            draws[name] = _log_uniform(rng, 1e-3 * peak, peak)
        elif name == "k":
            draws[name] = float(rng.uniform(-2.0, 2.0))
    if "beta" in model.parameter_names:
        draws["beta"] = _log_uniform(rng, *R0_RANGE) * draws["gamma"] / draws["S0"]
    return _clip_into(model, model.vector(draws))


def start_points(model: ModelSpec, dataset: Dataset, n_starts: int, seed: int) -> list[ParameterVector]:
    rng = np.random.default_rng(seed)
    starts = [heuristic_start(model, dataset)]
    while len(starts) < n_starts:
        starts.append(random_start(model, dataset, rng))
    return starts


def _tie_key(model: ModelSpec, vec: ParameterVector) -> float:
    if model.is_sir:
        try:
            return basic_reproduction_number(vec)
        except Exception:
            return math.inf
    return 0.0


def multistart_fit(
    model: ModelSpec,
    dataset: Dataset,
    n_starts: int = 32,
    seed: int = 0,
    tolerances: Tolerances = Tolerances(),
    *,
    grid_step: float = DEFAULT_STEP,
    dedup_tol: float = 1e-3,
    starts: list | None = None,
    extra_starts: list | None = None,
    restarts: int = 2,
) -> FitResult:
    """Run Nelder-Mead from ``n_starts`` points and keep the best minimum.

    The simplex sees the objective divided by the mean squared observation,
    so ``function_tol`` is relative to the data scale and the search behaves
    the same whether counts are given in raw units or thousands. Reported
    objectives are in data units.

    Minima whose transformed coordinates agree to within ``dedup_tol``
    (max-norm) are merged. Among minima whose scaled objectives agree to
    within ``function_tol`` of the best, the one with the smaller R0 wins.

    Args:
        starts: Explicit start points; overrides the heuristic and random draws.
        extra_starts: Points tried in addition to the drawn ones, e.g. from
            :func:`nested_start`.

    Raises:
        FitError: If every start ends on the integration-failure sentinel.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    dataset.require_for(model)
    if starts is None:
        starts = start_points(model, dataset, n_starts, seed)
    else:
        starts = [model.check(s) for s in starts]
    starts = list(starts) + [model.check(s) for s in (extra_starts or [])]
    n_starts = len(starts)

    scale = float(np.mean(dataset.observations**2)) or 1.0

    def objective(x):
        value = ols_objective(model, dataset, x, grid_step)
        return value if value >= SENTINEL else value / scale

    runs = []
    total_evals = 0
    for s in starts:
        res = nelder_mead_minimize(objective, s.values, model.domain, tolerances, restarts=restarts)
        total_evals += res.n_evaluations
        if res.fun < SENTINEL:
            runs.append(res)
    if not runs:
        raise FitError(f"all {n_starts} starts failed to integrate")

    # Stable sort keeps start order among exact ties, making the result seed-deterministic.
    runs.sort(key=lambda r: r.fun)
    kept: list[tuple[SimplexResult, np.ndarray]] = []
    for r in runs:
        u = model.domain.to_unconstrained(r.x)
        if all(np.max(np.abs(u - uk)) >= dedup_tol for _, uk in kept):
            kept.append((r, u))

    f_min = kept[0][0].fun
    tied = [r for r, _ in kept if r.fun - f_min <= tolerances.function_tol]
    best = min(tied, key=lambda r: _tie_key(model, model.vector(r.x)))
    theta = model.vector(best.x)
    others = [(model.vector(r.x), r.fun * scale) for r, _ in kept if r is not best]

    residuals = dataset.observations - predict(model, theta, dataset.times, grid_step)
    return FitResult(
        model=model,
        theta_hat=theta,
        objective=float(np.sum(residuals**2)),
        n_evaluations=total_evals,
        converged=best.converged,
        local_minima=others,
        residuals=residuals,
        n_starts=n_starts,
        grid_step=grid_step,
    )


def nested_start(fit: FitResult, model: ModelSpec, extra_value: float = 1e-15) -> ParameterVector:
    """Embed a mass-action optimum in a model that nests it.

    The Holling and recruitment models reduce to mass action when ``h`` or
    ``Gamma`` is 0, which the open domain excludes; the extra parameter is set
    to ``extra_value`` instead, so the start's objective is within a hair of
    the mass-action optimum and the nested fit cannot end above it.
    """
    values = dict(fit.theta_hat.items())
    for name in model.parameter_names:
        values.setdefault(name, extra_value)
    return model.check(values)


def synthetic_dataset(model: ModelSpec, params, times, noise_sigma: float = 0.0,
                      seed: int | None = None, grid_step: float = DEFAULT_STEP,
                      label: str = "synthetic") -> Dataset:
    """Model output at ``times`` plus i.i.d. Gaussian noise, clipped at zero."""
    clean = predict(model, model.check(params, closed=True), times, grid_step)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        clean = np.maximum(clean + rng.normal(0.0, noise_sigma, clean.size), 0.0)
    return Dataset(np.asarray(times, dtype=float), clean, label)
