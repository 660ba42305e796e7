"""Command line entry point: ``spreadfit {simulate,fit,compare}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .commands import compare_models_command, fit_command, simulate_command
from .errors import IntegrationError, SpreadFitError
from .io import RunConfig, load_config


def _param(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--model", help="sir_mass_action | sir_holling2 | sir_recruitment | exponential")
    common.add_argument("--seed", type=int)
    common.add_argument("--starts", type=int, help="number of optimizer start points")
    common.add_argument("--step", type=float, help="RK4 step in days")
    common.add_argument("--units", choices=("thousands", "raw"), help="units of the count column")
    common.add_argument("--out-dir", default=".", help="directory for output files")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="spreadfit",
        description="Fit SIR-type spread models to daily counts by ordinary least squares.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="solve the forward problem")
    sim.add_argument("--param", type=_param, action="append", default=[],
                     metavar="NAME=VALUE", help="parameter value (repeatable)")
    sim.add_argument("--horizon", type=float, help="days to simulate")
    sim.add_argument("--noise", type=float, help="Gaussian noise sd added to observations.csv")

    fit = sub.add_parser("fit", parents=[common], help="fit one model and report intervals")
    fit.add_argument("--data", required=True, help="CSV with header day,count")

    cmp_ = sub.add_parser("compare", parents=[common], help="fit several models to one dataset")
    cmp_.add_argument("--data", required=True, help="CSV with header day,count")
    cmp_.add_argument("--models", required=True, help="comma-separated model kinds")
    return parser


def resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = dict(model=args.model, seed=args.seed, starts=args.starts, step=args.step,
                     units=args.units)
    for name in ("horizon", "noise"):
        overrides[name] = getattr(args, name, None)
    config = config.updated(**overrides)
    if getattr(args, "param", None):
        config.params = {**config.params, **dict(args.param)}
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        if args.command == "simulate":
            simulate_command(config, out_dir=args.out_dir)
            return 0
        if args.command == "fit":
            bundle = fit_command(config, args.data, args.out_dir)
            sys.stdout.write(bundle.render_table())
            return 0 if bundle.ok else 1
        result = compare_models_command(config, args.data, args.models.split(","), args.out_dir)
        sys.stdout.write(result.render())
        return 0 if all(b.ok for b in result.bundles.values()) else 1
    except IntegrationError as exc:
        print(f"spreadfit: integration failed: {exc}", file=sys.stderr)
        return 1
    except (SpreadFitError, ValueError, KeyError, OSError) as exc:
        print(f"spreadfit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
