"""Command-line entry point: ``epiroute {analytic,simulate,sweep,xi,validate}``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure
(including a failed acceptance criterion under ``validate``).
"""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import replace

from . import experiments
from .config import ConfigError, ScenarioConfig, SweepSpec, load, BACKENDS, SWEEP_AXES

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (INI sections scenario/timeout/antipacket/mobility/sweep)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--runs", type=int, help="number of simulation runs")
    common.add_argument("--backend", choices=BACKENDS, help="computation backend")
    common.add_argument("--workers", type=int, default=1, help="worker processes for batches")
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument(
        "--relative-speed",
        help="mobility relative speed: 'published', 'estimated' or a value in km/h",
    )

    parser = _Parser(prog="epiroute", description="Epidemic routing buffer/reliability experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analytic", parents=[common], help="closed-form values and trajectories")
    p.add_argument("--epsilon", type=float, help="reliability target (timeout scheme)")

    sub.add_parser("simulate", parents=[common], help="Monte-Carlo batch, one summary row")

    p = sub.add_parser("sweep", parents=[common], help="one row per value of a parameter")
    p.add_argument("--axis", choices=SWEEP_AXES, help="swept parameter (overrides [sweep])")
    p.add_argument("--values", type=_floats, help="comma-separated values (overrides [sweep])")

    p = sub.add_parser("xi", parents=[common], help="relative improvement of full over null antipackets")
    p.add_argument("--t-d", dest="t_d", type=_floats, help="comma-separated delivery times")

    p = sub.add_parser("validate", help="run the acceptance criteria")
    p.add_argument("--only", type=lambda s: [int(v) for v in s.split(",")], help="criterion numbers, e.g. 1,2,8")
    return parser


def _scenario(args) -> tuple[ScenarioConfig, dict]:
    if args.config:
        config, sweep = load(args.config)
    else:
        config, sweep = ScenarioConfig(), {}
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.runs is not None:
        changes["runs"] = args.runs
    if args.backend is not None:
        changes["backend"] = args.backend
    if args.relative_speed is not None:
        changes["relative_speed"] = args.relative_speed
    if getattr(args, "epsilon", None) is not None:
        changes["epsilon"] = args.epsilon
    if changes:
        try:
            config = replace(config, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return config, sweep


def _emit(text: str, path: str | None):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _run(args) -> int:
    if args.command == "validate":
        from . import acceptance

        results = acceptance.run_all(args.only, stream=sys.stdout)
        return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME

    config, sweep_section = _scenario(args)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")

    if args.command == "analytic":
        if config.backend not in ("analytic", "ode"):
            config = replace(config, backend="analytic")
        tables = experiments.cmd_analytic(config)
    elif args.command == "simulate":
        if config.backend not in ("meeting", "spatial"):
            raise ConfigError("simulate needs --backend meeting or spatial")
        tables = experiments.cmd_simulate(config, workers=args.workers)
    elif args.command == "sweep":
        axis = args.axis or sweep_section.get("axis")
        values = args.values
        if values is None and sweep_section.get("values"):
            try:
                values = _floats(",".join(sweep_section["values"]))
            except argparse.ArgumentTypeError as exc:
                raise ConfigError(f"[sweep] values: {exc}") from None
        if not axis or not values:
            raise ConfigError("sweep needs an axis and values (--axis/--values or a [sweep] section)")
        tables = experiments.cmd_sweep(SweepSpec(config, axis, tuple(values)), workers=args.workers)
    else:
        tables = experiments.cmd_xi(config, args.t_d)
    _emit(experiments.render(args.command, config, tables), args.out)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code
    with warnings.catch_warnings():
        warnings.simplefilter("always", experiments.UnderpoweredWarning)
        warnings.showwarning = _show_warning
        try:
            return _run(args)
        except ConfigError as exc:
            print(f"epiroute: config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
            print(f"epiroute: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"epiroute: warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
