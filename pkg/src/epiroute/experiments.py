"""Experiment drivers behind the CLI: analytic reports, simulation batches,
parameter sweeps and the relative-improvement table.

Every command writes comma-separated tables.  Each table is preceded by a
``#`` comment block naming the time unit and the full resolved config, so
no default is silent.  A command may emit several tables separated by a
blank line.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import analytic, ode
from .config import (
    AntipacketScheme,
    ConfigError,
    ScenarioConfig,
    SweepSpec,
    TimeoutScheme,
    apply_axis,
    dumps,
    resolved_summary,
)
from .simulator import AggregateStats, batch

TRAJECTORY_POINTS = 101

# Full-scale loss calibration at epsilon = 1e-3: about 10^6 runs, so it is
# provided for opt-in long runs only.
LONG_RUN_CONFIG = """\
[scenario]
n_relays = 100
meeting_rate = 0.37043
horizon = 20000.0
epsilon = 0.001
runs = 1000000
master_seed = 2024
backend = meeting

[timeout]
t_g = optimal
"""


class UnderpoweredWarning(UserWarning):
    """Too few runs to resolve the target loss rate."""


@dataclass
class Table:
    columns: list[str]
    rows: list[list]
    title: str = ""


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render(command: str, config: ScenarioConfig, tables: Sequence[Table]) -> str:
    """Tables as text with the units and resolved-config comment block."""
    buf = io.StringIO()
    unit = config.time_unit_label
    buf.write(f"# epiroute {command}\n")
    buf.write(f"# units: time in {unit}; rates per {unit}; buffer occupancy in node*{unit}\n")
    buf.write("# config:\n")
    for line in dumps(config).splitlines():
        buf.write(f"#   {line}\n" if line else "#\n")
    buf.write("# resolved:\n")
    for line in resolved_summary(config):
        buf.write(f"#   {line}\n")
    for k, table in enumerate(tables):
        if k:
            buf.write("\n")
        if table.title:
            buf.write(f"# table: {table.title}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


# -- analytic ----------------------------------------------------------------------


def default_delivery_time(params: analytic.EpidemicParams) -> float:
    """Fluid median delivery time, where P reaches one half."""
    return analytic.optimal_global_timeout(params, 0.5)


def _timeout_trajectory(params, t_g, t_max, points):
    i_g = analytic.infected_fraction(params, t_g)
    p_g = analytic.delivery_probability(params, analytic.infected_integral_pre_timeout(params, t_g))
    rows = []
    for k in range(points):
        t = t_max * k / (points - 1)
        if t <= t_g:
            i = analytic.infected_fraction(params, t)
            p = analytic.delivery_probability(params, analytic.infected_integral_pre_timeout(params, t))
            rows.append([t, 1.0 - i, i, 0.0, p])
        else:
            rows.append([t, 1.0 - i_g, 0.0, i_g, p_g])
    return rows


def _antipacket_trajectory(params, policy, t_d, t_max, points):
    rows = []
    for k in range(points):
        t = t_max * k / (points - 1)
        if t <= t_d:
            i = analytic.infected_fraction(params, t)
            rows.append([t, 1.0 - i, i, 0.0])
        else:
            s = analytic.susceptible_fraction_anti(params, t)
            r = analytic.recovered_fraction_anti(params, policy, t_d, t)
            rows.append([t, s, 1.0 - s - r, r])
    return rows


def _ode_rows(traj: ode.Trajectory, t_max: float, points: int, with_p: bool):
    grid = np.linspace(0.0, t_max, points)
    # right-continuous sampling: past a jump, the post-jump value is used
    idx = np.searchsorted(traj.times, grid, side="right") - 1
    rows = []
    for t, k in zip(grid.tolist(), idx.tolist()):
        k = min(max(k, 0), len(traj.times) - 1)
        row = [t, float(traj.s[k]), float(traj.i[k]), float(traj.r[k])]
        if with_p:
            row.append(float(traj.delivery_p[k]))
        rows.append(row)
    return rows


def cmd_analytic(config: ScenarioConfig, points: int = TRAJECTORY_POINTS) -> list[Table]:
    """Headline closed-form values plus I/S/R sampled on a uniform grid.

    With ``backend = ode`` the trajectory comes from numerical integration
    and the ODE buffer integral is reported next to the closed form.
    """
    params = config.params()
    lam = params.meeting_rate
    use_ode = config.backend == "ode"
    if isinstance(config.scheme, TimeoutScheme):
        if config.scheme.t_g is None and config.epsilon is None:
            raise ConfigError("the timeout scheme needs epsilon for the optimal timer")
        if config.epsilon is not None:
            target = config.target()
            t_star = analytic.optimal_global_timeout(params, target)
            b_star = analytic.pareto_buffer(params, target)
        else:
            t_star = b_star = None
        t_g = config.timeout_policy().t_g
        b_tg = analytic.buffer_before_delivery(params, t_g)
        loss = 1.0 - analytic.delivery_probability(params, analytic.infected_integral_pre_timeout(params, t_g))
        cols = ["epsilon", "t_g_star", "b_star", "t_g", "buffer_at_t_g", "loss_at_t_g"]
        row = [config.epsilon, t_star, b_star, t_g, b_tg, loss]
        t_max = min(config.horizon, max(2.0 * t_g, 1.0 / lam))
        if use_ode:
            traj = ode.integrate(ode.RhsSpec(ode.GlobalTimeout(t_g), params), t_max)
            cols.append("ode_buffer_at_t_g")
            row.append(ode.buffer_integral(traj, params.n_relays, min(t_g, t_max)))
            traj_rows = _ode_rows(traj, t_max, points, with_p=True)
        else:
            traj_rows = _timeout_trajectory(params, t_g, t_max, points)
        return [
            Table(cols, [row], "optimal timeout"),
            Table(["t", "S", "I", "R", "P"], traj_rows, "trajectory"),
        ]

    policy = config.antipacket_policy()
    t_d = config.scheme.t_d if config.scheme.t_d is not None else min(default_delivery_time(params), policy.t_f)
    n = params.n_relays
    g = analytic.buffer_before_delivery(params, t_d)
    h = analytic.susceptible_mass_after_delivery(params, t_d, policy.t_f)
    if policy.kappa == 0.0:
        f = analytic.unreached_mass_null(params, t_d, policy.t_f)
    else:
        f = analytic.recovered_mass_cooperative(params, policy.kappa, t_d, policy.t_f)
    b = analytic.antipacket_buffer(params, policy, t_d)
    cols = ["kappa", "t_d", "t_f", "g", "h", "f", "buffer"]
    row = [policy.kappa, t_d, policy.t_f, g, h, f, b]
    spread = lam * max(policy.kappa, 1.0 / n)
    t_max = min(config.horizon, t_d + 3.0 * math.log(max(n, 2)) / spread)
    if use_ode:
        traj = ode.integrate(ode.RhsSpec(ode.Antipacket(policy.kappa, t_d), params), config.horizon)
        cols.append("ode_buffer")
        row.append(ode.buffer_integral(traj, n))
        traj_rows = _ode_rows(traj, t_max, points, with_p=False)
    else:
        traj_rows = _antipacket_trajectory(params, policy, t_d, t_max, points)
    return [
        Table(cols, [row], "antipacket buffer occupancy"),
        Table(["t", "S", "I", "R"], traj_rows, "trajectory"),
    ]


# -- simulation -------------------------------------------------------------------------

SIM_COLUMNS = [
    "runs",
    "loss_rate",
    "loss_ci_low",
    "loss_ci_high",
    "delivered",
    "mean_t_d",
    "t_d_ci_low",
    "t_d_ci_high",
    "mean_buffer",
    "buffer_ci_low",
    "buffer_ci_high",
    "mean_t_extinct",
    "t_extinct_ci_low",
    "t_extinct_ci_high",
]


def _stats_cells(st: AggregateStats) -> list:
    out = [st.runs]
    for s in (st.loss_rate,):
        out += [s.mean, s.ci_low, s.ci_high]
    out.append(st.delivered)
    for s in (st.delivery_delay, st.buffer_integral, st.extinction_time):
        out += [s.mean, s.ci_low, s.ci_high]
    return [float(v) if hasattr(v, "dtype") else v for v in out]


def _scheme_cells(config: ScenarioConfig) -> list:
    if isinstance(config.scheme, TimeoutScheme):
        return ["timeout", config.timeout_policy().t_g, None]
    return ["antipacket", None, config.scheme.kappa]


def simulate(config: ScenarioConfig, runs: int | None = None, seed: int | None = None, workers: int = 1):
    """Run a batch; warns when the loss-rate estimate is underpowered."""
    if config.backend not in ("meeting", "spatial"):
        raise ConfigError(f"simulate needs backend meeting or spatial, got {config.backend!r}")
    runs = config.runs if runs is None else runs
    seed = config.master_seed if seed is None else seed
    if isinstance(config.scheme, TimeoutScheme) and config.epsilon and runs * config.epsilon < 100:
        warnings.warn(
            f"runs * epsilon = {runs * config.epsilon:g} < 100: the loss-rate estimate is underpowered",
            UnderpoweredWarning,
            stacklevel=2,
        )
    return batch(config, runs, seed, workers)


def cmd_simulate(config: ScenarioConfig, runs: int | None = None, seed: int | None = None, workers: int = 1) -> list[Table]:
    st = simulate(config, runs, seed, workers)
    cols = ["backend", "n_relays", "lambda", "scheme", "t_g", "kappa", "epsilon"] + SIM_COLUMNS
    row = [config.backend, config.n_relays, config.model_rate()] + _scheme_cells(config)
    row.append(config.epsilon)
    row += _stats_cells(st)
    return [Table(cols, [row], "simulation")]


def _analytic_cells(config: ScenarioConfig) -> list:
    """Closed-form loss and buffer for the point (blank where undefined)."""
    params = config.params()
    if isinstance(config.scheme, TimeoutScheme):
        t_g = config.timeout_policy().t_g
        loss = 1.0 - analytic.delivery_probability(params, analytic.infected_integral_pre_timeout(params, t_g))
        b_star = analytic.pareto_buffer(params, config.target()) if config.epsilon else None
        return [t_g, loss, analytic.buffer_before_delivery(params, t_g), b_star]
    t_d = config.scheme.t_d
    b = None if t_d is None else analytic.antipacket_buffer(params, config.antipacket_policy(), t_d)
    return [None, None, b, None]


def cmd_sweep(sweep: SweepSpec, runs: int | None = None, seed: int | None = None, workers: int = 1) -> list[Table]:
    """One row per axis value with paired closed-form and simulated columns.

    A failing point records its error in the ``error`` column and the sweep
    carries on.
    """
    simulate_points = sweep.base.backend in ("meeting", "spatial")
    cols = ["axis", "value", "t_g", "analytic_loss", "analytic_buffer", "pareto_buffer"]
    if simulate_points:
        cols += SIM_COLUMNS
    cols.append("error")
    rows = []
    width = len(cols) - 3
    for value in sweep.values:
        row = [sweep.axis, value]
        try:
            point = apply_axis(sweep.base, sweep.axis, value)
            cells = _analytic_cells(point)
            if simulate_points:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", UnderpoweredWarning)
                    cells += _stats_cells(simulate(point, runs, seed, workers))
            rows.append(row + cells + [""])
        except Exception as exc:  # noqa: BLE001 - recorded in-row by design
            rows.append(row + [None] * width + [f"{type(exc).__name__}: {exc}"])
    return [Table(cols, rows, f"sweep over {sweep.axis}")]


def cmd_xi(config: ScenarioConfig, t_d_values: Sequence[float] | None = None, points: int = 11) -> list[Table]:
    """``B_null``, ``B_fully`` and their relative improvement for each delivery time."""
    if not isinstance(config.scheme, AntipacketScheme):
        raise ConfigError("xi needs the antipacket scheme")
    params = config.params()
    t_f = config.horizon
    if t_d_values is None:
        upper = 2.0 * default_delivery_time(params)
        t_d_values = [min(t_f, upper * k / (points - 1)) for k in range(points)]
    use_ode = config.backend == "ode"
    cols = ["t_d", "b_null", "b_fully", "xi"]
    if use_ode:
        cols += ["ode_b_null", "ode_b_fully", "ode_xi"]
    rows = []
    for t_d in t_d_values:
        t_d = float(t_d)
        b0 = analytic.antipacket_buffer(params, analytic.AntipacketPolicy(0.0, t_f), t_d)
        b1 = analytic.antipacket_buffer(params, analytic.AntipacketPolicy(1.0, t_f), t_d)
        row = [t_d, b0, b1, analytic.relative_improvement(b0, b1)]
        if use_ode:
            o = [
                ode.buffer_integral(ode.integrate(ode.RhsSpec(ode.Antipacket(k, t_d), params), t_f), params.n_relays)
                for k in (0.0, 1.0)
            ]
            row += [o[0], o[1], analytic.relative_improvement(o[0], o[1])]
        rows.append(row)
    return [Table(cols, rows, "relative improvement")]


def with_overrides(config: ScenarioConfig, *, runs=None, seed=None, backend=None) -> ScenarioConfig:
    changes = {}
    if runs is not None:
        changes["runs"] = runs
    if seed is not None:
        changes["master_seed"] = seed
    if backend is not None:
        changes["backend"] = backend
    return replace(config, **changes) if changes else config
