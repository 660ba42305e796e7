"""Report assembly and rendering: machine-readable JSON and a lower / estimate / upper text table."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .estimation import Dataset, FitResult
from .uncertainty import UncertaintyReport

TOOL_NAME = "spreadfit"


def _num(x):
    x = float(x)
    if math.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


def format_value(x: float) -> str:
    """Four decimals, switching to scientific notation for tiny magnitudes."""
    if not math.isfinite(x):
        return str(x)
    if x != 0 and abs(x) < 1e-3:
        return f"{x:.4e}"
    return f"{x:.4f}"


@dataclass
class ReportBundle:
    config: dict
    config_hash: str
    dataset: Dataset
    fit: FitResult | None = None
    uncertainty: UncertaintyReport | None = None
    errors: list[str] = field(default_factory=list)
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    @property
    def ok(self) -> bool:
        return (not self.errors and self.fit is not None and self.fit.converged
                and self.uncertainty is not None)

    def to_dict(self) -> dict:
        d = {
            "tool": {"name": TOOL_NAME, "version": __version__},
            "provenance": {
                "config_hash": self.config_hash,
                "dataset_label": self.dataset.label,
                "timestamp": self.timestamp,
            },
            "config": self.config,
            "dataset": {
                "label": self.dataset.label,
                "n": len(self.dataset),
                "times": [_num(t) for t in self.dataset.times],
                "observations": [_num(y) for y in self.dataset.observations],
            },
            "status": "ok" if self.ok else "failed",
            "errors": list(self.errors),
        }
        if self.fit is not None:
            d["fit"] = fit_to_dict(self.fit)
        if self.uncertainty is not None:
            d["uncertainty"] = uncertainty_to_dict(self.uncertainty)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def render_table(self) -> str:
        lines = [f"# {self.dataset.label}"]
        if self.fit is not None:
            lines.append(f"model: {self.fit.model.kind.value}")
            lines.append(f"least-squares objective: {self.fit.objective:.6g}"
                         f"  (converged: {'yes' if self.fit.converged else 'no'})")
        if self.uncertainty is not None:
            lines.append("")
            lines.append(render_parameter_table(self.uncertainty))
            lines.append("")
            lines.append(render_derived(self.uncertainty))
        elif self.fit is not None:
            lines.append("")
            lines.extend(f"{n:<10}{format_value(v):>14}" for n, v in self.fit.theta_hat.items())
        for err in self.errors:
            lines.append(f"error: {err}")
        return "\n".join(lines) + "\n"


def render_parameter_table(unc: UncertaintyReport) -> str:
    head = f"{'Parameter':<10}{'lower bound':>14}{'estimate':>14}{'upper bound':>14}"
    rule = "-" * len(head)
    rows = [head, rule]
    for name, iv in unc.intervals.items():
        rows.append(f"{name:<10}{format_value(iv.lower):>14}{format_value(iv.estimate):>14}"
                    f"{format_value(iv.upper):>14}")
    rows.append(rule)
    rows.append(f"intervals: {unc.interval_label}; sigma^2 = {unc.sigma2_hat:.6g}")
    return "\n".join(rows)


def render_derived(unc: UncertaintyReport) -> str:
    labels = {"R0": "R0", "infectious_period": "1/gamma (days)"}
    head = f"{'Quantity':<16}{'estimate':>12}{'interval arithmetic':>26}{'delta method':>26}"
    rows = [head, "-" * len(head)]

    def pair(p):
        return "n/a" if p is None else f"({format_value(p[0])}, {format_value(p[1])})"

    for name, dq in unc.derived.items():
        rows.append(f"{labels.get(name, name):<16}{format_value(dq.estimate):>12}"
                    f"{pair(dq.interval_arithmetic):>26}{pair(dq.delta_method):>26}")
    for note in unc.notes:
        rows.append(f"note: {note}")
    return "\n".join(rows)


def fit_to_dict(fit: FitResult) -> dict:
    return {
        "model": fit.model.kind.value,
        "parameter_names": list(fit.model.parameter_names),
        "theta_hat": {n: _num(v) for n, v in fit.theta_hat.items()},
        "objective": _num(fit.objective),
        "converged": bool(fit.converged),
        "n_evaluations": int(fit.n_evaluations),
        "n_starts": int(fit.n_starts),
        "grid_step": _num(fit.grid_step),
        "domain": {
            n: [_num(lo), _num(hi)]
            for n, lo, hi in zip(fit.model.parameter_names, fit.model.domain.lower, fit.model.domain.upper)
        },
        "residuals": [_num(r) for r in fit.residuals],
        "local_minima": [
            {"theta": {n: _num(v) for n, v in vec.items()}, "objective": _num(obj)}
            for vec, obj in fit.local_minima
        ],
    }


def uncertainty_to_dict(unc: UncertaintyReport) -> dict:
    return {
        "sigma2_hat": _num(unc.sigma2_hat),
        "covariance_formula": unc.covariance_formula,
        "interval_label": unc.interval_label,
        "rel_step": _num(unc.rel_step),
        "covariance": [[_num(c) for c in row] for row in np.asarray(unc.covariance)],
        "standard_errors": {n: _num(s) for n, s in zip(unc.parameter_names, unc.standard_errors)},
        "intervals": {
            n: {"lower": _num(iv.lower), "estimate": _num(iv.estimate), "upper": _num(iv.upper),
                "contains_zero": iv.contains(0.0)}
            for n, iv in unc.intervals.items()
        },
        "derived": {
            name: {
                "estimate": _num(dq.estimate),
                "interval_arithmetic": None if dq.interval_arithmetic is None
                else [_num(v) for v in dq.interval_arithmetic],
                "delta_method": None if dq.delta_method is None else [_num(v) for v in dq.delta_method],
            }
            for name, dq in unc.derived.items()
        },
        "one_sided_sensitivities": {
            n: bool(f) for n, f in zip(unc.sensitivity.parameter_names, unc.sensitivity.one_sided)
        },
        "notes": list(unc.notes),
    }
