"""Model family: mass-action, Holling type-II and recruitment SIR, plus a closed-form exponential.

State is ``[S, I]`` in thousands of users, time in days. Parameters are held in
a :class:`ParameterVector` whose layout is fixed by the model kind:

=================  ==================================
kind               parameters
=================  ==================================
sir_mass_action    beta, gamma, S0, I0
sir_holling2       beta, gamma, S0, I0, h
sir_recruitment    beta, gamma, S0, I0, Gamma
exponential        I0, k
=================  ==================================
"""

from __future__ import annotations

import enum
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DomainError, SingularityError
from .ode import OdeSystem

# 3.02e8 monthly users, expressed in thousands.
DEFAULT_POPULATION_CAP = 3.02e5
HOLLING_SINGULAR_TOL = 1e-12


class ModelKind(str, enum.Enum):
    SIR_MASS_ACTION = "sir_mass_action"
    SIR_HOLLING2 = "sir_holling2"
    SIR_RECRUITMENT = "sir_recruitment"
    EXPONENTIAL = "exponential"

    @classmethod
    def parse(cls, name: "str | ModelKind") -> "ModelKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "sir": cls.SIR_MASS_ACTION,
            "mass_action": cls.SIR_MASS_ACTION,
            "holling": cls.SIR_HOLLING2,
            "holling2": cls.SIR_HOLLING2,
            "recruitment": cls.SIR_RECRUITMENT,
            "exp": cls.EXPONENTIAL,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown model kind {name!r}; choose one of: {choices}") from None


PARAMETER_NAMES = {
    ModelKind.SIR_MASS_ACTION: ("beta", "gamma", "S0", "I0"),
    ModelKind.SIR_HOLLING2: ("beta", "gamma", "S0", "I0", "h"),
    ModelKind.SIR_RECRUITMENT: ("beta", "gamma", "S0", "I0", "Gamma"),
    ModelKind.EXPONENTIAL: ("I0", "k"),
}

SIR_KINDS = frozenset({ModelKind.SIR_MASS_ACTION, ModelKind.SIR_HOLLING2, ModelKind.SIR_RECRUITMENT})


class ParameterVector(Mapping):
    """Immutable, ordered, named parameter values."""

    __slots__ = ("names", "values")

    def __init__(self, names, values):
        names = tuple(names)
        values = np.array(values, dtype=float).reshape(-1)
        if len(names) != values.size:
            raise ValueError(f"{len(names)} names but {values.size} values")
        values.setflags(write=False)
        self.names = names
        self.values = values

    def __getitem__(self, name):
        try:
            return float(self.values[self.names.index(name)])
        except ValueError:
            raise KeyError(name) from None

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __eq__(self, other):
        if isinstance(other, ParameterVector):
            return self.names == other.names and np.array_equal(self.values, other.values)
        return NotImplemented

    def __hash__(self):
        return hash((self.names, self.values.tobytes()))

    def __repr__(self):
        body = ", ".join(f"{n}={v!r}" for n, v in zip(self.names, self.values))
        return f"ParameterVector({body})"

    def replace(self, **changes) -> "ParameterVector":
        values = self.values.copy()
        for name, value in changes.items():
            values[self.names.index(name)] = value
        return ParameterVector(self.names, values)


@dataclass(frozen=True, eq=False)
class ParameterDomain:
    """Open box ``(lower_k, upper_k)`` per parameter; bounds may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D and of equal length")
        if np.any(lo >= hi):
            raise ValueError("every lower bound must be below its upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def __len__(self):
        return self.lower.size

    def __eq__(self, other):
        if not isinstance(other, ParameterDomain):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    def contains(self, x, closed: bool = False) -> bool:
        """Whether ``x`` is finite and inside the box (or on its edge if ``closed``)."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            return False
        if closed:
            return bool(np.all(x >= self.lower) and np.all(x <= self.upper))
        return bool(np.all(x > self.lower) and np.all(x < self.upper))

    def to_unconstrained(self, x) -> np.ndarray:
        """Map a point of the open box to R^p (log, shifted log, or logit per coordinate)."""
        x = np.asarray(x, dtype=float)
        u = np.empty_like(x)
        for k, (lo, hi, v) in enumerate(zip(self.lower, self.upper, x)):
            lo_inf, hi_inf = np.isinf(lo), np.isinf(hi)
            if lo_inf and hi_inf:
                u[k] = v
            elif hi_inf:
                u[k] = math.log(v - lo)
            elif lo_inf:
                u[k] = -math.log(hi - v)
            else:
                z = (v - lo) / (hi - lo)
                u[k] = math.log(z) - math.log1p(-z)
        return u

    def from_unconstrained(self, u) -> np.ndarray:
        """Inverse of :meth:`to_unconstrained`. Saturation may land on a bound."""
        u = np.asarray(u, dtype=float)
        x = np.empty_like(u)
        for k, (lo, hi, w) in enumerate(zip(self.lower, self.upper, u)):
            lo_inf, hi_inf = np.isinf(lo), np.isinf(hi)
            if lo_inf and hi_inf:
                x[k] = w
            elif hi_inf:
                x[k] = lo + _safe_exp(w)
            elif lo_inf:
                x[k] = hi - _safe_exp(-w)
            else:
                # Numerically stable logistic.
                if w >= 0:
                    z = 1.0 / (1.0 + math.exp(-w))
                else:
                    e = _safe_exp(w)
                    z = e / (1.0 + e)
                x[k] = lo + (hi - lo) * z
        return x


def _safe_exp(w: float) -> float:
    return math.exp(w) if w < 709.0 else math.inf


@dataclass(frozen=True)
class ModelSpec:
    """One member of the model family together with its admissible box."""

    kind: ModelKind
    parameter_names: tuple[str, ...]
    domain: ParameterDomain
    population_cap: float = DEFAULT_POPULATION_CAP
    system: OdeSystem | None = field(default=None, compare=False, repr=False)

    @property
    def n_params(self) -> int:
        return len(self.parameter_names)

    @property
    def is_sir(self) -> bool:
        return self.kind in SIR_KINDS

    def vector(self, values) -> ParameterVector:
        if isinstance(values, Mapping):
            values = [values[n] for n in self.parameter_names]
        return ParameterVector(self.parameter_names, values)

    def check(self, params, closed: bool = False) -> ParameterVector:
        """Coerce to this layout and verify the point lies inside the domain.

        ``closed=True`` also admits the box edges, e.g. ``beta = 0`` for a
        forward solve without transmission.

        Raises:
            DomainError: If a value is outside the box.
        """
        vec = self.vector(params)
        if not self.domain.contains(vec.values, closed):
            brackets = "[]" if closed else "()"
            bad = [
                f"{n}={v!r} not in {brackets[0]}{lo!r}, {hi!r}{brackets[1]}"
                for n, v, lo, hi in zip(self.parameter_names, vec.values,
                                        self.domain.lower, self.domain.upper)
                if not (lo <= v <= hi if closed else lo < v < hi) or not math.isfinite(v)
            ]
            raise DomainError(f"{self.kind.value}: " + "; ".join(bad))
        return vec

    def initial_state(self, params) -> np.ndarray:
        vec = self.vector(params)
        if self.is_sir:
            return np.array([vec["S0"], vec["I0"]])
        return np.array([vec["I0"]])

    def rate_values(self, params) -> np.ndarray:
        """Values passed to the compiled right-hand side (rates only, no initial conditions)."""
        vec = self.vector(params)
        if self.kind is ModelKind.SIR_MASS_ACTION:
            return np.array([vec["beta"], vec["gamma"]])
        if self.kind is ModelKind.SIR_HOLLING2:
            return np.array([vec["beta"], vec["gamma"], vec["h"]])
        if self.kind is ModelKind.SIR_RECRUITMENT:
            return np.array([vec["beta"], vec["gamma"], vec["Gamma"]])
        return np.array([vec["k"]])


# --------------------------------------------------------------------------
# Right-hand sides. Compiled in-place kernels take the rate vector only.


@njit(cache=True)
def _mass_action_inplace(t, y, p, out):
    infection = p[0] * y[0] * y[1]
    out[0] = -infection
    out[1] = infection - p[1] * y[1]


@njit(cache=True)
def _holling2_inplace(t, y, p, out):
    denom = 1.0 + p[2] * y[0]
    if abs(denom) < 1e-12:
        out[0] = np.nan
        out[1] = np.nan
        return
    infection = p[0] * y[0] * y[1] / denom
    out[0] = -infection
    out[1] = infection - p[1] * y[1]


@njit(cache=True)
def _recruitment_inplace(t, y, p, out):
    infection = p[0] * y[0] * y[1]
    out[0] = p[2] - infection
    out[1] = infection - p[1] * y[1]


MASS_ACTION_SYSTEM = OdeSystem.compiled(2, _mass_action_inplace, nonnegative=True)
HOLLING2_SYSTEM = OdeSystem.compiled(2, _holling2_inplace, nonnegative=True)
RECRUITMENT_SYSTEM = OdeSystem.compiled(2, _recruitment_inplace, nonnegative=True)

_SYSTEMS = {
    ModelKind.SIR_MASS_ACTION: MASS_ACTION_SYSTEM,
    ModelKind.SIR_HOLLING2: HOLLING2_SYSTEM,
    ModelKind.SIR_RECRUITMENT: RECRUITMENT_SYSTEM,
    ModelKind.EXPONENTIAL: None,
}


def _get(params, name):
    return float(params[name])


def sir_mass_action_rhs(state, params) -> np.ndarray:
    """Return ``[-beta*S*I, beta*S*I - gamma*I]``."""
    s, i = float(state[0]), float(state[1])
    beta, gamma = _get(params, "beta"), _get(params, "gamma")
    infection = beta * s * i
    return np.array([-infection, infection - gamma * i])


def sir_holling2_rhs(state, params) -> np.ndarray:
    """Saturating incidence ``H = beta*S*I/(1 + h*S)`` in place of mass action.

    Raises:
        SingularityError: If ``|1 + h*S| < 1e-12`` (only reachable with negative h).
    """
    s, i = float(state[0]), float(state[1])
    beta, gamma, h = _get(params, "beta"), _get(params, "gamma"), _get(params, "h")
    denom = 1.0 + h * s
    if abs(denom) < HOLLING_SINGULAR_TOL:
        raise SingularityError(f"1 + h*S = {denom!r} is singular (h={h!r}, S={s!r})")
    infection = beta * s * i / denom
    return np.array([-infection, infection - gamma * i])


def sir_recruitment_rhs(state, params) -> np.ndarray:
    """Mass action with a constant source ``Gamma`` feeding the susceptibles."""
    s, i = float(state[0]), float(state[1])
    beta, gamma, source = _get(params, "beta"), _get(params, "gamma"), _get(params, "Gamma")
    infection = beta * s * i
    return np.array([source - infection, infection - gamma * i])


def exponential_model(t, params):
    """Closed form ``I0 * exp(k*t)``; ``t`` may be scalar or array."""
    i0, k = _get(params, "I0"), _get(params, "k")
    return i0 * np.exp(k * np.asarray(t, dtype=float))


def _growth_rate(params) -> float:
    beta, gamma, s0 = _get(params, "beta"), _get(params, "gamma"), _get(params, "S0")
    if "h" in params:
        return beta * s0 / (1.0 + _get(params, "h") * s0) - gamma
    return beta * s0 - gamma


def basic_reproduction_number(params) -> float:
    """``beta*S0/gamma``; the Holling variant divides by ``1 + h*S0`` as well.

    Raises:
        DomainError: If gamma is not positive.
    """
    gamma = _get(params, "gamma")
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma!r}")
    beta, s0 = _get(params, "beta"), _get(params, "S0")
    r0 = beta * s0 / gamma
    if "h" in params:
        r0 /= 1.0 + _get(params, "h") * s0
    return r0


def mean_infectious_period(params) -> float:
    """Mean time spent infectious, ``1/gamma`` days.

    For the exponential model the decay rate stands in for gamma and the result
    is ``1/|k|``, defined only when ``k < 0``.
    """
    if "gamma" in params:
        rate = _get(params, "gamma")
    else:
        k = _get(params, "k")
        if not k < 0:
            raise DomainError(f"exponential model is not decaying (k={k!r})")
        rate = -k
    if not rate > 0:
        raise DomainError(f"gamma must be positive, got {rate!r}")
    return 1.0 / rate


def linearized_infectious(t, params):
    """Early-time approximation ``I0 * exp((beta*S0 - gamma) * t)`` with S frozen at S0."""
    return _get(params, "I0") * np.exp(_growth_rate(params) * np.asarray(t, dtype=float))


def make_model(
    kind: "str | ModelKind" = ModelKind.SIR_MASS_ACTION,
    population_cap: float = DEFAULT_POPULATION_CAP,
    overrides: Mapping[str, tuple[float, float]] | None = None,
) -> ModelSpec:
    """Build a :class:`ModelSpec` with the default admissible box.

    Rates live on (0, inf), populations on (0, population_cap), ``k`` is free.
    ``overrides`` replaces the interval of named parameters, e.g.
    ``{"h": (-0.01, inf)}`` to admit negative handling times.
    """
    kind = ModelKind.parse(kind)
    if not population_cap > 0:
        raise ValueError("population_cap must be positive")
    names = PARAMETER_NAMES[kind]
    bounds = {
        "beta": (0.0, math.inf),
        "gamma": (0.0, math.inf),
        "S0": (0.0, population_cap),
        "I0": (0.0, population_cap),
        "h": (0.0, math.inf),
        "Gamma": (0.0, math.inf),
        "k": (-math.inf, math.inf),
    }
    for name, interval in (overrides or {}).items():
        if name not in names:
            raise ValueError(f"{kind.value} has no parameter {name!r}")
        bounds[name] = (float(interval[0]), float(interval[1]))
    for name in names:
        lo, hi = bounds[name]
        if name != "h" and name != "k" and lo < 0:
            raise ValueError(f"lower bound of {name} must be nonnegative")
    domain = ParameterDomain([bounds[n][0] for n in names], [bounds[n][1] for n in names])
    return ModelSpec(kind, names, domain, float(population_cap), _SYSTEMS[kind])
