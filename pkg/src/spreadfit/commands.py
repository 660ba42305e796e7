"""The simulate / fit / compare workflows behind the command line."""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FitError, IntegrationError, NonIdentifiabilityError
from .estimation import Dataset, multistart_fit, nested_start, predict, synthetic_dataset
from .io import RunConfig, load_dataset, write_dataset, write_trajectory
from .models import ModelKind, ModelSpec
from .ode import TimeGrid, integrate
from .plots import line_chart
from .report import ReportBundle, format_value
from .uncertainty import analyze

log = logging.getLogger(__name__)


def _time_label(config: RunConfig) -> str:
    return f"days since {config.t0_date}" if config.t0_date else "days"


def trajectory(model: ModelSpec, params, times, grid_step: float) -> dict[str, np.ndarray]:
    """Named state columns at ``times``: ``S`` and ``I`` for SIR kinds, ``I`` otherwise.

    Parameters on the edge of the domain are accepted.
    """
    vec = model.check(params, closed=True)
    times = np.asarray(times, dtype=float)
    if not model.is_sir:
        return {"I": predict(model, vec, times, grid_step)}
    grid = TimeGrid.covering(times, step=grid_step, t0=0.0)
    traj = integrate(model.system, model.rate_values(vec), model.initial_state(vec), grid)
    for w in traj.warnings:
        log.warning(w)
    return {"S": traj.states[:, 0], "I": traj.states[:, 1]}


def _dense_times(t_end: float, per_day: int = 10) -> np.ndarray:
    if t_end <= 0:
        return np.array([0.0])
    n = max(int(np.ceil(t_end * per_day)), 1)
    return np.linspace(0.0, t_end, n + 1)


def simulate_command(config: RunConfig, params=None, horizon: float | None = None,
                     out_dir=".") -> dict[str, np.ndarray]:
    """Solve the forward problem and write ``trajectory.csv``, ``simulate.svg`` and
    ``observations.csv`` (the I column in ``day,count`` form, noise added if
    ``config.noise > 0``).

    Raises:
        IntegrationError: If the forward solve fails.
    """
    model = config.build_model()
    params = config.params if params is None else params
    if isinstance(params, Mapping):
        missing = [n for n in model.parameter_names if n not in params]
        if missing:
            raise ValueError(f"{model.kind.value} needs values for: {', '.join(missing)}")
    params = model.check(params, closed=True)
    horizon = config.horizon if horizon is None else float(horizon)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    days = np.arange(0.0, np.floor(horizon) + 1.0)
    if horizon > days[-1]:
        days = np.append(days, horizon)
    columns = trajectory(model, params, days, config.step)
    write_trajectory(out / "trajectory.csv", days, columns)

    observed = synthetic_dataset(model, params, days, config.noise, config.seed, config.step,
                                 label=f"simulated {model.kind.value}")
    write_dataset(out / "observations.csv", observed)

    dense = _dense_times(horizon)
    curves = {name: (dense, col) for name, col in trajectory(model, params, dense, config.step).items()}
    scatter = (observed.times, observed.observations) if config.noise > 0 else None
    (out / "simulate.svg").write_text(
        line_chart(curves, scatter, title=f"{model.kind.value} forward solution",
                   xlabel=_time_label(config)),
        encoding="utf-8")
    return {"times": days, **columns}


def _fit_one(config: RunConfig, model: ModelSpec, dataset: Dataset,
             extra_starts=None) -> ReportBundle:
    bundle = ReportBundle(config=config.as_dict() | {"model": model.kind.value},
                          config_hash=config.digest(), dataset=dataset)
    try:
        bundle.fit = multistart_fit(model, dataset, config.starts, config.seed, config.tolerances,
                                    grid_step=config.step, extra_starts=extra_starts)
    except (FitError, IntegrationError) as exc:
        bundle.errors.append(f"fit failed: {exc}")
        return bundle
    if not bundle.fit.converged:
        bundle.errors.append("optimizer did not converge within max_evals")
    try:
        bundle.uncertainty = analyze(bundle.fit, dataset, config.rel_step)
    except (NonIdentifiabilityError, DomainError, IntegrationError) as exc:
        bundle.errors.append(f"uncertainty analysis failed: {exc}")
    return bundle


def fit_command(config: RunConfig, dataset_path, out_dir=".") -> ReportBundle:
    """Fit, quantify uncertainty and write ``report.json``, ``table.txt``,
    ``fit.svg`` and ``trajectory.csv`` into ``out_dir``.

    Files are written even when the fit or the uncertainty step fails; check
    ``bundle.ok``.

    Raises:
        DomainError: If the dataset has no more points than the model has parameters.
    """
    model = config.build_model()
    dataset = load_dataset(dataset_path, config.units)
    dataset.require_for(model)
    bundle = _fit_one(config, model, dataset)
    write_bundle(bundle, out_dir, config)
    return bundle


def write_bundle(bundle: ReportBundle, out_dir, config: RunConfig) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(bundle.to_json(), encoding="utf-8")
    (out / "table.txt").write_text(bundle.render_table(), encoding="utf-8")
    ds = bundle.dataset
    scatter = (ds.times, ds.observations)
    curves = {}
    if bundle.fit is not None:
        model, theta = bundle.fit.model, bundle.fit.theta_hat
        t_end = float(ds.times[-1])
        days = np.arange(0.0, np.floor(t_end) + 1.0)
        try:
            write_trajectory(out / "trajectory.csv", days, trajectory(model, theta, days, config.step))
            dense = _dense_times(t_end)
            curves = {f"{n}(t)": (dense, c) for n, c in trajectory(model, theta, dense, config.step).items()}
        except IntegrationError as exc:
            log.warning("could not draw fitted curve: %s", exc)
    (out / "fit.svg").write_text(
        line_chart(curves, scatter, title=ds.label, xlabel=_time_label(config)), encoding="utf-8")


@dataclass
class Comparison:
    bundles: dict[str, ReportBundle]

    def rows(self) -> list[dict]:
        out = []
        for kind, b in self.bundles.items():
            row = {"model": kind, "status": "ok" if b.ok else "failed", "errors": list(b.errors)}
            if b.fit is not None:
                row["objective"] = b.fit.objective
                row["n_params"] = b.fit.model.n_params
                row["theta_hat"] = dict(b.fit.theta_hat.items())
            if b.uncertainty is not None:
                row["intervals"] = {n: list(iv) for n, iv in b.uncertainty.intervals.items()}
                row["contains_zero"] = [n for n, z in b.uncertainty.contains_zero().items() if z]
            out.append(row)
        return out

    def render(self) -> str:
        lines = [f"{'model':<18}{'params':>7}{'objective':>16}  interval contains 0"]
        lines.append("-" * len(lines[0]))
        for row in self.rows():
            if "objective" not in row:
                lines.append(f"{row['model']:<18}{'':>7}{'failed':>16}  {'; '.join(row['errors'])}")
                continue
            zeros = ", ".join(row.get("contains_zero", [])) or "-"
            lines.append(f"{row['model']:<18}{row['n_params']:>7}{row['objective']:>16.6g}  {zeros}")
        for kind, b in self.bundles.items():
            if b.uncertainty is not None:
                lines.append("")
                lines.append(f"[{kind}]")
                for name, iv in b.uncertainty.intervals.items():
                    lines.append(f"  {name:<8}{format_value(iv.lower):>14}{format_value(iv.estimate):>14}"
                                 f"{format_value(iv.upper):>14}")
        return "\n".join(lines) + "\n"


def compare_models_command(config: RunConfig, dataset_path, kinds, out_dir=".") -> Comparison:
    """Fit several model kinds to one dataset and tabulate objectives and zero-crossing intervals.

    A failure in one kind is recorded in its row and does not stop the others.
    When mass action is among the kinds it is fitted first and its optimum
    seeds the Holling and recruitment fits, so a nested model never reports
    a worse objective than the model it contains.
    Writes ``compare.txt`` and ``compare.json``.
    """
    kinds = [ModelKind.parse(k).value for k in kinds]
    if len(set(kinds)) < 2:
        raise ValueError("compare needs at least two distinct model kinds")
    dataset = load_dataset(dataset_path, config.units)
    base = ModelKind.SIR_MASS_ACTION.value
    nesting = {ModelKind.SIR_HOLLING2.value, ModelKind.SIR_RECRUITMENT.value}
    bundles = {}
    for kind in sorted(kinds, key=lambda k: k != base):
        model = config.build_model(kind)
        try:
            dataset.require_for(model)
        except DomainError as exc:
            b = ReportBundle(config=config.as_dict() | {"model": kind}, config_hash=config.digest(),
                             dataset=dataset)
            b.errors.append(str(exc))
            bundles[kind] = b
            continue
        extra = None
        base_fit = bundles[base].fit if base in bundles else None
        if kind in nesting and base_fit is not None:
            extra = [nested_start(base_fit, model)]
        bundles[kind] = _fit_one(config, model, dataset, extra)
    result = Comparison({k: bundles[k] for k in kinds})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.txt").write_text(result.render(), encoding="utf-8")
    (out / "compare.json").write_text(json.dumps(result.rows(), indent=2, default=float) + "\n",
                                      encoding="utf-8")
    return result
