"""Acceptance criteria as executable checks.

Each ``criterion_N`` returns a :class:`CriterionResult`; tolerances and run
counts are fixed here, and seeds are fixed up front so that outcomes are
reproducible.  ``epiroute validate`` and ``tests/test_acceptance.py`` both
run these functions.
"""

from __future__ import annotations

import functools
import math
import os
import time
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import analytic, ode
from .analytic import AntipacketPolicy, EpidemicParams
from .config import AntipacketScheme, ScenarioConfig, TimeoutScheme, loads
from .experiments import LONG_RUN_CONFIG, UnderpoweredWarning, cmd_simulate, render
from .mobility import MobilitySpec, Model, inter_meeting_times, pairwise_meeting_rate
from .simulator import MemoryEventLog, batch, binomial_interval, run_meeting_process, run_seed

LAMBDA_DENSE = 0.37043  # L = 2.5352 km
LAMBDA_SPARSE = 0.14817  # L = 4 km


@dataclass(frozen=True)
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"AC{self.number} {status} {self.title}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number: int, title: str, budget: float | None = None):
    def wrap(fn):
        @functools.wraps(fn)
        def run() -> CriterionResult:
            start = time.perf_counter()
            passed, detail = fn()
            elapsed = time.perf_counter() - start
            if budget is not None and elapsed >= budget:
                passed = False
                detail += f"; over the {budget:g}s budget"
            return CriterionResult(number, title, bool(passed), detail, elapsed)

        run.number = number
        return run

    return wrap


@_timed(1, "closed-form vs ODE infected fraction", budget=5.0)
def criterion_1():
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 1001))
        i0 = int(rng.integers(1, max(2, n // 10) + 1)) / n
        lam = float(10 ** rng.uniform(-2, 0.7))
        params = EpidemicParams(n, min(i0, 1.0), lam)
        t_g = analytic.optimal_global_timeout(params, 1e-3)
        if t_g == 0.0:
            continue
        traj = ode.integrate(ode.RhsSpec(ode.GlobalTimeout(t_g), params), t_g)
        exact = np.array([analytic.infected_fraction(params, t) for t in traj.times])
        worst = max(worst, float(np.max(np.abs(exact - traj.i))))
    return worst <= 1e-6, f"max |I_closed - I_ode| = {worst:.2e} (tol 1e-6)"


@_timed(2, "optimal-timeout fixed point")
def criterion_2():
    params = EpidemicParams.single_source(100, LAMBDA_DENSE)
    worst = 0.0
    for eps in (0.5, 0.1, 1e-2, 1e-3):
        t = analytic.optimal_global_timeout(params, eps)
        p = analytic.delivery_probability(params, analytic.infected_integral_pre_timeout(params, t))
        worst = max(worst, abs(p - (1.0 - eps)))
    return worst <= 1e-10, f"max |P(T_g*) - (1 - eps)| = {worst:.2e} (tol 1e-10)"


@_timed(3, "Pareto contour from ODE buffer integral", budget=10.0)
def criterion_3():
    worst = 0.0
    for n in (10, 100):
        for lam in (LAMBDA_DENSE, LAMBDA_SPARSE):
            params = EpidemicParams.single_source(n, lam)
            for eps in (0.1, 0.05, 1e-3):
                t_g = analytic.optimal_global_timeout(params, eps)
                traj = ode.integrate(ode.RhsSpec(ode.GlobalTimeout(t_g), params), t_g)
                b = ode.buffer_integral(traj, n)
                worst = max(worst, abs(b / analytic.pareto_buffer(params, eps) - 1.0))
    return worst <= 5e-3, f"max relative error = {worst:.2e} (tol 5e-3)"


_CALIBRATION = ScenarioConfig(
    n_relays=100,
    meeting_rate=LAMBDA_DENSE,
    epsilon=0.05,
    scheme=TimeoutScheme(None),
    backend="meeting",
    runs=20_000,
    master_seed=4,
)


@functools.lru_cache(maxsize=1)
def _calibration_batch():
    start = time.perf_counter()
    st = batch(_CALIBRATION, _CALIBRATION.runs, _CALIBRATION.master_seed)
    return st, time.perf_counter() - start


@_timed(4, "loss-rate calibration at the optimal timer")
def criterion_4():
    st, secs = _calibration_batch()
    runs = st.runs
    losses = int(round(st.loss_rate.mean * runs))
    lo, hi = binomial_interval(runs, 0.05, 0.99)
    ok = lo <= losses <= hi and secs < 120
    return ok, (
        f"loss rate {losses / runs:.4f} ({losses}/{runs}); exact binomial 99% interval "
        f"[{lo / runs:.4f}, {hi / runs:.4f}]; batch {secs:.1f}s (budget 120s)"
    )


@_timed(5, "buffer calibration at the optimal timer")
def criterion_5():
    st, secs = _calibration_batch()
    target = analytic.pareto_buffer(_CALIBRATION.params(), 0.05)
    rel = st.buffer_integral.mean / target - 1.0
    return abs(rel) <= 0.05 and secs < 120, (
        f"mean B = {st.buffer_integral.mean:.1f} vs (N/lambda) ln(1/eps) = {target:.1f}; "
        f"relative error {rel:+.3f} (tol 0.05)"
    )


def mobility_check(model: Model, seed: int):
    """Two-node inter-meeting protocol: 64 pairs for 120 h at dt = 2e-3 h after a 2 h warm-up."""
    spec = MobilitySpec(model=model)
    gaps = inter_meeting_times(spec, pairs=64, duration=120.0, dt=0.002, seed=seed, warmup=2.0)
    expected = pairwise_meeting_rate(spec)
    rate = 1.0 / gaps.mean()
    ks = stats.kstest(gaps, "expon", args=(0.0, gaps.mean()))
    return gaps.size, rate, expected, ks.statistic, ks.pvalue


@_timed(6, "mobility meeting rates (RWP, RD)", budget=300.0)
def criterion_6():
    ok = True
    parts = []
    for model, seed in ((Model.RWP, 61), (Model.RD, 62)):
        n, rate, expected, d, p = mobility_check(model, seed)
        rel = rate / expected - 1.0
        good = n >= 2000 and abs(rel) <= 0.10 and p >= 0.05
        ok &= good
        parts.append(
            f"{model.value}: {n} gaps, rate {rate:.4f}/h vs {expected:.5f} ({rel:+.3f}), "
            f"KS D={d:.4f} p={p:.3f}"
        )
    return ok, "; ".join(parts)


def antipacket_bins(runs: int = 4000, bins: int = 8, seed: int = 7):
    """Per-bin mean simulated and closed-form B for kappa in {0, 1}.

    Bin edges are quantiles of the pooled delivery times; the closed form is
    averaged over the delivery times of the runs falling in each bin.
    """
    params = EpidemicParams.single_source(100, LAMBDA_SPARSE)
    out = {}
    for kappa in (0.0, 1.0):
        config = ScenarioConfig(
            meeting_rate=LAMBDA_SPARSE, scheme=AntipacketScheme(kappa), backend="meeting"
        )
        st = batch(config, runs, seed)
        td = np.array([m.t_d for m in st.metrics if m.delivered])
        b = np.array([m.buffer_integral for m in st.metrics if m.delivered])
        policy = AntipacketPolicy(kappa, config.horizon)
        closed = np.array([analytic.antipacket_buffer(params, policy, t) for t in td])
        out[kappa] = (td, b, closed)
    pooled = np.concatenate([out[k][0] for k in out])
    edges = np.quantile(pooled, np.linspace(0.0, 1.0, bins + 1))
    table = []
    for k in range(bins):
        row = {"lo": edges[k], "hi": edges[k + 1]}
        for kappa, (td, b, closed) in out.items():
            mask = (td >= edges[k]) & ((td < edges[k + 1]) if k < bins - 1 else (td <= edges[k + 1]))
            row[kappa] = (int(mask.sum()), float(b[mask].mean()), float(closed[mask].mean()))
        table.append(row)
    return table


@_timed(7, "antipacket buffer per delivery-time bin", budget=300.0)
def criterion_7():
    table = antipacket_bins()
    ok = True
    worst = {0.0: 0.0, 1.0: 0.0}
    ordered = True
    for row in table:
        for kappa in (0.0, 1.0):
            n, sim, cf = row[kappa]
            rel = sim / cf - 1.0
            if abs(rel) > abs(worst[kappa]):
                worst[kappa] = rel
            ok &= n > 0 and abs(rel) <= 0.10
        ordered &= row[1.0][1] < row[0.0][1]
    ok &= ordered
    return ok, (
        f"worst bin error kappa=0 {worst[0.0]:+.3f}, kappa=1 {worst[1.0]:+.3f} (tol 0.10); "
        f"B(kappa=1) < B(kappa=0) in every bin: {ordered}"
    )


@_timed(8, "relative-improvement trends")
def criterion_8():
    t_f = 20000.0
    # t_d = 0 is excluded: B_fully vanishes there, so xi = 1 for every lambda
    grid = np.linspace(2.0, 80.0, 40)
    xi = {}
    for lam in (LAMBDA_DENSE, LAMBDA_SPARSE):
        params = EpidemicParams.single_source(100, lam)
        b0 = [analytic.antipacket_buffer(params, AntipacketPolicy(0.0, t_f), t) for t in grid]
        b1 = [analytic.antipacket_buffer(params, AntipacketPolicy(1.0, t_f), t) for t in grid]
        xi[lam] = np.array([analytic.relative_improvement(a, b) for a, b in zip(b0, b1)])
    nonincreasing = all(bool(np.all(np.diff(v) <= 1e-12)) for v in xi.values())
    smaller_larger = bool(np.all(xi[LAMBDA_SPARSE] > xi[LAMBDA_DENSE]))
    return nonincreasing and smaller_larger, (
        f"nonincreasing in t_d: {nonincreasing}; larger for smaller lambda at all "
        f"{grid.size} t_d: {smaller_larger}"
    )


def _ode_conservation(seed: int = 91, count: int = 100) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(count):
        n = int(rng.integers(1, 501))
        params = EpidemicParams.single_source(n, float(10 ** rng.uniform(-2, 0.5)))
        scale = math.log(max(n, 2)) / params.meeting_rate
        if k % 2:
            scheme = ode.GlobalTimeout(float(rng.uniform(0, 3 * scale)))
        else:
            scheme = ode.Antipacket(float(rng.choice([0.0, rng.uniform(), 1.0])), float(rng.uniform(0, 2 * scale)))
        traj = ode.integrate(ode.RhsSpec(scheme, params), 4 * scale)
        total = traj.s + traj.i + traj.r
        worst = max(worst, float(np.max(np.abs(total - 1.0))), float(-min(0.0, traj.s.min(), traj.i.min(), traj.r.min())))
    return worst


def _count_conservation(seed: int = 92, count: int = 1000) -> int:
    rng = np.random.default_rng(seed)
    bad = 0
    for k in range(count):
        n = int(rng.integers(1, 41))
        scheme = TimeoutScheme(float(rng.uniform(0, 40))) if k % 2 else AntipacketScheme(float(rng.choice([0.0, 0.5, 1.0])))
        config = ScenarioConfig(n_relays=n, meeting_rate=float(rng.uniform(0.1, 2.0)), scheme=scheme, horizon=2000.0, backend="meeting")
        log = MemoryEventLog()
        run_meeting_process(config, run_seed(seed, k), log=log)
        if any(sum(c) != n + 1 or min(c) < 0 for *_, c in log.records):
            bad += 1
    return bad


def _coupled_monotonicity(seed: int = 93, pairs: int = 100) -> int:
    rng = np.random.default_rng(seed)
    bad = 0
    base = ScenarioConfig(n_relays=50, meeting_rate=LAMBDA_DENSE, backend="meeting")
    for k in range(pairs):
        t1 = float(rng.uniform(0, 30))
        t2 = t1 + float(rng.uniform(0, 15))
        a = run_meeting_process(replace(base, scheme=TimeoutScheme(t1)), run_seed(seed, k))
        b = run_meeting_process(replace(base, scheme=TimeoutScheme(t2)), run_seed(seed, k))
        if b.lost > a.lost or b.buffer_integral < a.buffer_integral:
            bad += 1
    return bad


def _determinism(seed: int = 94) -> bool:
    config = ScenarioConfig(n_relays=30, meeting_rate=LAMBDA_DENSE, backend="meeting", runs=300, master_seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderpoweredWarning)
        outputs = {
            render("simulate", config, cmd_simulate(config, workers=w))
            for w in sorted({1, 2, max(1, os.cpu_count() or 1)})
        }
    return len(outputs) == 1


@_timed(9, "property suites")
def criterion_9():
    ode_err = _ode_conservation()
    count_bad = _count_conservation()
    mono_bad = _coupled_monotonicity()
    same = _determinism()
    ok = ode_err <= 1e-9 and count_bad == 0 and mono_bad == 0 and same
    return ok, (
        f"ODE conservation/nonnegativity worst {ode_err:.1e} on 100 runs; "
        f"count violations {count_bad}/1000 runs; monotonicity violations {mono_bad}/100 pairs; "
        f"identical bytes across worker counts: {same}"
    )


@_timed(10, "full-scale epsilon = 1e-3 documented as opt-in long run")
def criterion_10():
    config, _ = loads(LONG_RUN_CONFIG)
    runs_needed = 100 / config.epsilon
    ok = config.epsilon == 1e-3 and config.runs >= 10 * runs_needed and config.backend == "meeting"
    return ok, f"long-run config: epsilon={config.epsilon}, runs={config.runs} (not run in CI)"


CRITERIA = [
    criterion_1,
    criterion_2,
    criterion_3,
    criterion_4,
    criterion_5,
    criterion_6,
    criterion_7,
    criterion_8,
    criterion_9,
    criterion_10,
]


def run_all(only=None, stream=None) -> list[CriterionResult]:
    results = []
    for check in CRITERIA:
        if only and check.number not in only:
            continue
        result = check()
        results.append(result)
        if stream is not None:
            stream.write(result.line() + "\n")
            stream.flush()
    return results
