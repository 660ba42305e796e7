"""Dataset and configuration files.

Data files are two-column CSV with header ``day,count``; ``#`` lines are
comments. Configuration files are flat ``key = value`` text, e.g.::

    model = sir_holling2
    starts = 16
    seed = 7
    units = raw
    bounds.h = -0.01, inf
    param.beta = 0.0153
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ParseError
from .estimation import Dataset, Tolerances
from .models import DEFAULT_POPULATION_CAP, ModelKind, make_model
from .ode import DEFAULT_STEP
from .uncertainty import DEFAULT_REL_STEP

UNITS = ("thousands", "raw")


def load_dataset(path, units: str = "thousands", label: str | None = None) -> Dataset:
    """Read a ``day,count`` CSV into a :class:`Dataset` in thousands.

    Raises:
        ParseError: On a bad header, non-numeric cell, negative count, a day
            that is not strictly after the previous one, or an empty file.
            The message carries the 1-based line number.
    """
    if units not in UNITS:
        raise ParseError(f"units must be one of {UNITS}, got {units!r}")
    path = Path(path)
    days, counts = [], []
    header_seen = False
    with path.open("r", encoding="utf-8-sig", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in row]
            if not header_seen:
                if [c.lower() for c in cells] != ["day", "count"]:
                    raise ParseError(f"expected header 'day,count', got {','.join(cells)!r}", lineno)
                header_seen = True
                continue
            if len(cells) != 2:
                raise ParseError(f"expected 2 columns, got {len(cells)}", lineno)
            try:
                day, count = float(cells[0]), float(cells[1])
            except ValueError:
                raise ParseError(f"non-numeric cell in {','.join(cells)!r}", lineno) from None
            if not (math.isfinite(day) and math.isfinite(count)):
                raise ParseError("non-finite value", lineno)
            if count < 0:
                raise ParseError(f"negative count {count!r}", lineno)
            if days and day == days[-1]:
                raise ParseError(f"duplicate day {day!r}", lineno)
            if days and day < days[-1]:
                raise ParseError(f"days out of order: {day!r} after {days[-1]!r}", lineno)
            days.append(day)
            counts.append(count)
    if not header_seen:
        raise ParseError("missing header 'day,count'")
    if not days:
        raise ParseError("no observations")
    obs = np.asarray(counts)
    if units == "raw":
        obs = obs / 1000.0
    return Dataset(np.asarray(days), obs, label if label is not None else path.stem)


def write_dataset(path, dataset: Dataset) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("day,count\n")
        for t, y in zip(dataset.times, dataset.observations):
            fh.write(f"{float(t)!r},{float(y)!r}\n")


def write_trajectory(path, times, columns: dict[str, np.ndarray]) -> None:
    """Write ``times,<col>,...`` rows at full precision."""
    names = list(columns)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["times", *names]) + "\n")
        for j, t in enumerate(times):
            fh.write(",".join([repr(float(t))] + [repr(float(columns[n][j])) for n in names]) + "\n")


@dataclass
class RunConfig:
    """Settings shared by every command. Command-line flags override file values."""

    model: str = ModelKind.SIR_MASS_ACTION.value
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    step: float = DEFAULT_STEP
    function_tol: float = 1e-10
    param_tol: float = 1e-8
    max_evals: int = 100_000
    starts: int = 32
    seed: int = 0
    rel_step: float = DEFAULT_REL_STEP
    units: str = "thousands"
    t0_date: str | None = None
    population_cap: float = DEFAULT_POPULATION_CAP
    params: dict[str, float] = field(default_factory=dict)
    horizon: float = 14.0
    noise: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        self.model = ModelKind.parse(self.model).value
        for name in ("step", "function_tol", "param_tol", "rel_step", "population_cap"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ParseError(f"{name} must be positive, got {value!r}")
        if self.max_evals < 1 or self.starts < 1:
            raise ParseError("max_evals and starts must be positive integers")
        if self.horizon < 0 or self.noise < 0:
            raise ParseError("horizon and noise must be nonnegative")
        if self.units not in UNITS:
            raise ParseError(f"units must be one of {UNITS}, got {self.units!r}")

    @property
    def tolerances(self) -> Tolerances:
        return Tolerances(self.function_tol, self.param_tol, self.max_evals)

    def build_model(self, kind: str | None = None):
        kind = ModelKind.parse(kind or self.model)
        names = set(make_model(kind).parameter_names)
        bounds = {k: v for k, v in self.bounds.items() if k in names}
        return make_model(kind, self.population_cap, bounds)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = {k: [float(v[0]), float(v[1])] for k, v in sorted(self.bounds.items())}
        d["params"] = dict(sorted(self.params.items()))
        return d

    def digest(self) -> str:
        text = json.dumps(self.as_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(text.encode()).hexdigest()

    def updated(self, **overrides) -> "RunConfig":
        """Copy with the non-None overrides applied."""
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in overrides.items():
            if v is not None:
                d[k] = v
        return RunConfig(**d)


_INT_KEYS = {"max_evals", "starts", "seed"}
_FLOAT_KEYS = {"step", "function_tol", "param_tol", "rel_step", "population_cap", "horizon", "noise"}
_STR_KEYS = {"model", "units", "t0_date"}


def _parse_float(text: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", lineno) from None


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines into a :class:`RunConfig`."""
    values: dict = {"bounds": {}, "params": {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError:
                raise ParseError(f"{key} must be an integer, got {value!r}", lineno) from None
        elif key in _FLOAT_KEYS:
            values[key] = _parse_float(value, lineno)
        elif key in _STR_KEYS:
            values[key] = value
        elif key.startswith("bounds."):
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 2:
                raise ParseError(f"{key} needs 'lower, upper'", lineno)
            values["bounds"][key[7:]] = (_parse_float(parts[0], lineno), _parse_float(parts[1], lineno))
        elif key.startswith("param."):
            values["params"][key[6:]] = _parse_float(value, lineno)
        else:
            raise ParseError(f"unknown key {key!r}", lineno)
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
