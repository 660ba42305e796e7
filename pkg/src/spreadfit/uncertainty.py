"""Asymptotic OLS uncertainty: finite-difference sensitivities, covariance, 2-SE intervals.

The covariance of the estimator is ``sigma^2 * (sum_j D_j^T D_j)^-1`` where
``D_j`` is the row of output sensitivities at observation time ``t_j`` and
``sigma^2`` is the residual variance ``LL(theta_hat) / (n - p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .errors import DomainError, NonIdentifiabilityError
from .estimation import Dataset, FitResult, predict
from .models import (
    ModelKind,
    ModelSpec,
    ParameterDomain,
    ParameterVector,
    basic_reproduction_number,
    mean_infectious_period,
)
from .ode import DEFAULT_STEP

DEFAULT_REL_STEP = 1e-4
MAX_CONDITION = 1e12
COVARIANCE_FORMULA = "sigma2 * inv(sum_j D_j^T D_j)"
INTERVAL_LABEL = "+/-2 SE (~95%)"


class Interval(NamedTuple):
    lower: float
    estimate: float
    upper: float

    def contains(self, value: float) -> bool:
        return bool(self.lower <= value <= self.upper)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper - self.lower)


@dataclass
class SensitivityMatrix:
    """``values[j, k]`` is dI(t_j)/dtheta_k; ``one_sided[k]`` marks fallback columns."""

    values: np.ndarray
    parameter_names: tuple[str, ...]
    one_sided: tuple[bool, ...]

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def exploration_domain(model: ModelSpec) -> ParameterDomain:
    """Domain used when perturbing parameters; admits negative handling time."""
    if model.kind is not ModelKind.SIR_HOLLING2:
        return model.domain
    lower = model.domain.lower.copy()
    lower[model.parameter_names.index("h")] = -math.inf
    return ParameterDomain(lower, model.domain.upper)


def sensitivity_matrix(model: ModelSpec, times, theta_hat, rel_step: float = DEFAULT_REL_STEP,
                       grid_step: float = DEFAULT_STEP) -> SensitivityMatrix:
    """Central-difference sensitivities of the observed output.

    Column k perturbs theta_k by ``delta = rel_step * max(|theta_k|, 1e-6)``; each
    evaluation is a full forward solve. If one of the perturbed points leaves
    the domain a one-sided difference is used and the column is flagged.
    """
    theta = model.vector(theta_hat).values
    times = np.asarray(times, dtype=float)
    domain = exploration_domain(model)
    n, p = times.size, theta.size
    values = np.empty((n, p))
    flags = []
    for k in range(p):
        delta = rel_step * max(abs(theta[k]), 1e-6)
        up, down = theta.copy(), theta.copy()
        up[k] += delta
        down[k] -= delta
        up_ok, down_ok = domain.contains(up), domain.contains(down)
        if up_ok and down_ok:
            column = (predict(model, up, times, grid_step) - predict(model, down, times, grid_step)) / (2 * delta)
            flags.append(False)
        elif up_ok:
            column = (predict(model, up, times, grid_step) - predict(model, theta, times, grid_step)) / delta
            flags.append(True)
        elif down_ok:
            column = (predict(model, theta, times, grid_step) - predict(model, down, times, grid_step)) / delta
            flags.append(True)
        else:
            raise DomainError(f"cannot perturb {model.parameter_names[k]} inside the domain")
        values[:, k] = column
    if not np.all(np.isfinite(values)):
        raise NonIdentifiabilityError("non-finite sensitivities")
    return SensitivityMatrix(values, model.parameter_names, tuple(flags))


def estimate_sigma2(objective_at_min: float, n: int, p: int) -> float:
    """Bias-adjusted residual variance ``LL / (n - p)``."""
    if n <= p:
        raise DomainError(f"n <= p: cannot estimate variance from {n} points and {p} parameters")
    return float(objective_at_min) / (n - p)


def covariance_matrix(D, sigma2: float) -> np.ndarray:
    """``sigma2 * inv(D^T D)`` for a stacked sensitivity matrix ``D`` (n x p).

    Conditioning is judged after scaling every column to unit norm, so that a
    badly scaled but well-posed problem (beta ~ 1e-2 next to S0 ~ 1e2) is not
    rejected.

    Raises:
        NonIdentifiabilityError: If a column vanishes or the scaled normal
            matrix has condition number >= 1e12. ``direction`` holds the
            near-null vector in parameter units.
    """
    names = getattr(D, "parameter_names", None)
    D = np.asarray(D, dtype=float)
    if D.ndim != 2:
        raise ValueError("D must be a 2-D array")
    p = D.shape[1]
    names = names or tuple(f"theta{k}" for k in range(p))

    scale = np.linalg.norm(D, axis=0)
    zero = np.flatnonzero(scale == 0)
    if zero.size:
        direction = np.zeros(p)
        direction[zero[0]] = 1.0
        raise NonIdentifiabilityError(
            f"parameter {names[zero[0]]} has no effect on the observations", direction)

    A = D / scale
    normal = A.T @ A
    eigvals, eigvecs = np.linalg.eigh(normal)
    cond = eigvals[-1] / eigvals[0] if eigvals[0] > 0 else math.inf
    if not cond < MAX_CONDITION:
        direction = eigvecs[:, 0] / scale
        direction /= np.max(np.abs(direction))
        combo = " ".join(f"{c:+.3g}*{n}" for c, n in zip(direction, names) if abs(c) > 1e-3)
        raise NonIdentifiabilityError(
            f"normal matrix is ill-conditioned (cond={cond:.3g}); poorly determined direction: {combo}",
            direction)

    inv_scaled = np.linalg.inv(normal)
    cov = sigma2 * inv_scaled / np.outer(scale, scale)
    return 0.5 * (cov + cov.T)


def confidence_intervals(theta_hat, covariance) -> list[Interval]:
    """``estimate +/- 2*SE`` per parameter with ``SE_k = sqrt(cov[k, k])``."""
    theta = np.asarray(theta_hat, dtype=float)
    diag = np.diag(np.asarray(covariance, dtype=float))
    if np.any(diag < 0):
        raise ValueError("covariance has a negative diagonal entry")
    se = np.sqrt(diag)
    return [Interval(float(t - 2 * s), float(t), float(t + 2 * s)) for t, s in zip(theta, se)]


def _endpoints(iv) -> tuple[float, float]:
    if isinstance(iv, Interval):
        return iv.lower, iv.upper
    lo, hi = iv[0], iv[-1]
    return float(lo), float(hi)


def derived_intervals(param_intervals: Mapping) -> dict[str, tuple[float, float]]:
    """Bounds on R0 and the mean infectious period by endpoint interval arithmetic.

    R0 = beta*S0/gamma is increasing in beta and S0 and decreasing in gamma, so
    its range over the parameter box is attained at opposite corners. With a
    handling time the denominator gains ``1 + h*S0``; rewriting
    R0 = beta / (gamma * (1/S0 + h)) keeps it monotone (decreasing in h).
    The exponential model contributes only the period ``1/|k|``.

    Raises:
        DomainError: If a lower endpoint that must be positive is not.
    """
    out: dict[str, tuple[float, float]] = {}
    if "k" in param_intervals and "gamma" not in param_intervals:
        k_lo, k_hi = _endpoints(param_intervals["k"])
        if not k_hi < 0:
            raise DomainError(f"k interval ({k_lo}, {k_hi}) is not strictly negative")
        out["infectious_period"] = (1.0 / abs(k_lo), 1.0 / abs(k_hi))
        return out

    b_lo, b_hi = _endpoints(param_intervals["beta"])
    g_lo, g_hi = _endpoints(param_intervals["gamma"])
    s_lo, s_hi = _endpoints(param_intervals["S0"])
    for name, lo in (("beta", b_lo), ("gamma", g_lo), ("S0", s_lo)):
        if not lo > 0:
            raise DomainError(f"lower endpoint of {name} must be positive, got {lo!r}")
    if "h" in param_intervals:
        h_lo, h_hi = _endpoints(param_intervals["h"])
        low_denom = 1.0 / s_hi + h_lo
        if not low_denom > 0:
            raise DomainError("1/S0 + h changes sign over the interval box")
        out["R0"] = (b_lo / (g_hi * (1.0 / s_lo + h_hi)), b_hi / (g_lo * low_denom))
    else:
        out["R0"] = (b_lo * s_lo / g_hi, b_hi * s_hi / g_lo)
    out["infectious_period"] = (1.0 / g_hi, 1.0 / g_lo)
    return out


def _derived_functions(model: ModelSpec):
    funcs = {}
    if model.is_sir:
        funcs["R0"] = basic_reproduction_number
    funcs["infectious_period"] = mean_infectious_period
    return funcs


def delta_method_intervals(model: ModelSpec, theta_hat, covariance) -> dict[str, Interval]:
    """Derived-quantity intervals ``g(theta) +/- 2*sqrt(grad^T cov grad)``.

    Unlike :func:`derived_intervals` this accounts for parameter correlations.
    Gradients are central differences with relative step 1e-6.
    """
    vec = model.vector(theta_hat)
    cov = np.asarray(covariance, dtype=float)
    out = {}
    for name, g in _derived_functions(model).items():
        try:
            centre = g(vec)
        except DomainError:
            continue
        grad = np.empty(vec.values.size)
        for k, value in enumerate(vec.values):
            step = 1e-6 * max(abs(value), 1e-8)
            hi = vec.replace(**{vec.names[k]: value + step})
            lo = vec.replace(**{vec.names[k]: value - step})
            grad[k] = (g(hi) - g(lo)) / (2 * step)
        se = math.sqrt(max(float(grad @ cov @ grad), 0.0))
        out[name] = Interval(centre - 2 * se, centre, centre + 2 * se)
    return out


@dataclass
class DerivedQuantity:
    estimate: float
    interval_arithmetic: tuple[float, float] | None
    delta_method: tuple[float, float] | None


@dataclass
class UncertaintyReport:
    """Everything needed to print an interval table for one fit."""

    parameter_names: tuple[str, ...]
    sigma2_hat: float
    covariance: np.ndarray
    standard_errors: np.ndarray
    intervals: dict[str, Interval]
    derived: dict[str, DerivedQuantity]
    sensitivity: SensitivityMatrix
    rel_step: float
    covariance_formula: str = COVARIANCE_FORMULA
    interval_label: str = INTERVAL_LABEL
    notes: list[str] = field(default_factory=list)

    def contains_zero(self) -> dict[str, bool]:
        return {n: iv.contains(0.0) for n, iv in self.intervals.items()}


def analyze(fit: FitResult, dataset: Dataset, rel_step: float = DEFAULT_REL_STEP) -> UncertaintyReport:
    """Run the full uncertainty pipeline at a fitted parameter vector.

    Raises:
        NonIdentifiabilityError: If the sensitivity system is degenerate.
    """
    model = fit.model
    theta: ParameterVector = fit.theta_hat
    n, p = len(dataset), model.n_params
    sens = sensitivity_matrix(model, dataset.times, theta, rel_step, fit.grid_step)
    sigma2 = estimate_sigma2(fit.objective, n, p)
    cov = covariance_matrix(sens, sigma2)
    intervals = dict(zip(model.parameter_names, confidence_intervals(theta.values, cov)))
    se = np.sqrt(np.diag(cov))

    notes = []
    if any(sens.one_sided):
        sided = [nm for nm, f in zip(sens.parameter_names, sens.one_sided) if f]
        notes.append("one-sided differences used for: " + ", ".join(sided))

    try:
        arithmetic = derived_intervals(intervals)
    except DomainError as exc:
        arithmetic = {}
        notes.append(f"interval-arithmetic derived bounds unavailable: {exc}")
    delta = delta_method_intervals(model, theta, cov)

    derived = {}
    for name, g in _derived_functions(model).items():
        try:
            estimate = g(theta)
        except DomainError as exc:
            notes.append(f"{name} undefined: {exc}")
            continue
        d = delta.get(name)
        derived[name] = DerivedQuantity(
            estimate,
            arithmetic.get(name),
            (d.lower, d.upper) if d is not None else None,
        )

    return UncertaintyReport(
        parameter_names=model.parameter_names,
        sigma2_hat=sigma2,
        covariance=cov,
        standard_errors=se,
        intervals=intervals,
        derived=derived,
        sensitivity=sens,
        rel_step=rel_step,
        notes=notes,
    )
