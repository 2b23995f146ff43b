import io
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.linalg import expm
from scipy.special import exp1

from epiroute import analytic as an
from epiroute import simulator as sim
from epiroute.config import AntipacketScheme, ScenarioConfig, TimeoutScheme
from epiroute.mobility import Fleet, MobilitySpec, Model
from epiroute.simulator import (
    INFECTED,
    RECOVERED,
    SUSCEPTIBLE,
    CsvEventLog,
    MemoryEventLog,
    batch,
    run_meeting_process,
    run_seed,
    run_spatial,
)

LAM = 0.37043


def meeting(n=1, lam=LAM, scheme=None, horizon=20000.0, **kw):
    return ScenarioConfig(
        n_relays=n,
        meeting_rate=lam,
        scheme=scheme if scheme is not None else AntipacketScheme(1.0),
        horizon=horizon,
        backend="meeting",
        **kw,
    )


def replay_buffer(log: MemoryEventLog, n_initial: int, end: float) -> float:
    """Piecewise-constant integral of the infected count rebuilt from the log."""
    total, t_prev, ni = 0.0, 0.0, n_initial
    for t, _, _, _, counts in log.records:
        total += ni * (t - t_prev)
        t_prev, ni = t, counts[1]
    return total + ni * (end - t_prev)


# -- single-pair laws -------------------------------------------------------------


def test_single_pair_delivery_delay_is_exponential():
    st_ = batch(meeting(1), 10_000, master_seed=1)
    assert st_.delivered == 10_000
    delays = np.array([m.t_d for m in st_.metrics])
    se = delays.std(ddof=1) / math.sqrt(delays.size)
    assert abs(delays.mean() - 1 / LAM) <= 3 * se
    assert stats.kstest(delays, "expon", args=(0, 1 / LAM)).pvalue > 0.01


def test_single_pair_timeout_loss_and_buffer():
    t_g = 3.0
    st_ = batch(meeting(1, scheme=TimeoutScheme(t_g)), 10_000, master_seed=2)
    p = math.exp(-LAM * t_g)
    sigma = math.sqrt(p * (1 - p) / 10_000)
    assert abs(st_.loss_rate.mean - p) <= 3 * sigma
    assert all(m.buffer_integral == t_g for m in st_.metrics)
    assert all(m.t_extinct == t_g for m in st_.metrics)


def test_rejects_bad_inputs():
    with pytest.raises(sim.SimulationError):
        sim.EpidemicProcess(0, 1, TimeoutScheme(1.0), 10.0)
    with pytest.raises(sim.SimulationError):
        sim.EpidemicProcess(5, 1, TimeoutScheme(1.0), 0.0)
    with pytest.raises(ValueError):
        sim.ContactEvent(1.0, 3, 3)


# -- exact oracle --------------------------------------------------------------------


def markov_timeout(n, lam, t_g):
    """Exact loss probability and mean buffer of the timeout scheme.

    The number of carriers k is a pure-birth chain with rate mu k (N - k);
    delivery is an independent hazard mu k.  Both follow from matrix
    exponentials of the (augmented) generator.
    """
    mu = lam / n
    k = np.arange(1, n + 1)
    birth = mu * k * (n - k)
    up = (np.arange(n - 1), np.arange(1, n))
    q = np.diag(-(birth + mu * k))
    q[up] = birth[:-1]
    loss = expm(q * t_g)[0].sum()
    g = np.zeros((n + 1, n + 1))
    g[:n, :n] = np.diag(-birth)
    g[up] = birth[:-1]
    g[:n, n] = k
    return float(loss), float(expm(g * t_g)[0, n])


@pytest.mark.parametrize("n,eps,runs", [(10, 0.1, 20_000), (100, 0.05, 10_000)])
def test_timeout_matches_exact_markov_chain(n, eps, runs):
    config = meeting(n, scheme=TimeoutScheme(None), epsilon=eps)
    t_g = config.timeout_policy().t_g
    loss, buffer = markov_timeout(n, LAM, t_g)
    st_ = batch(config, runs, master_seed=11)
    lo, hi = sim.binomial_interval(runs, loss, 0.999)
    assert lo <= round(st_.loss_rate.mean * runs) <= hi
    b = st_.buffer_integral
    assert abs(b.mean - buffer) <= 4 * math.sqrt(b.variance / runs)


@pytest.mark.parametrize("eps", [0.05, 0.1])
def test_markov_chain_converges_to_random_shift_limit(eps):
    # A single source grows like a Yule process, so the bulk of the epidemic is
    # the fluid curve started from I0 * W with W ~ Exp(1).  Averaging the fluid
    # loss and buffer over W gives the large-N limits, a E1(a) e^a and
    # (N / lambda) E1(a) e^a with a = eps / (1 - eps), not eps and ln(1/eps).
    n = 300
    a = eps / (1 - eps)
    p = an.EpidemicParams.single_source(n, LAM)
    loss, buffer = markov_timeout(n, LAM, an.optimal_global_timeout(p, eps))
    assert loss == pytest.approx(a * math.exp(a) * exp1(a), abs=3e-3)
    assert buffer * LAM / n == pytest.approx(math.exp(a) * exp1(a), rel=3e-3)
    assert loss > 2 * eps


# -- invariants ----------------------------------------------------------------------


@st.composite
def scenario(draw):
    n = draw(st.integers(1, 40))
    lam = draw(st.floats(0.1, 2.0))
    if draw(st.booleans()):
        scheme = TimeoutScheme(draw(st.floats(0.0, 40.0)))
    else:
        scheme = AntipacketScheme(draw(st.sampled_from([0.0, 0.3, 1.0])))
    k = draw(st.integers(1, n))
    return meeting(n, lam, scheme, horizon=draw(st.floats(1.0, 400.0)), initial_infected_fraction=k / n)


@settings(deadline=None, max_examples=150)
@given(scenario(), st.integers(0, 2**32 - 1))
def test_event_log_invariants(config, seed):
    log = MemoryEventLog()
    m = run_meeting_process(config, seed, log=log)
    n = config.n_relays
    times = [r[0] for r in log.records]
    assert times == sorted(times)
    for t, kind, a, b, counts in log.records:
        assert sum(counts) == n + 1 and min(counts) >= 0
        assert kind in sim.EVENT_KINDS
        if kind == "infect":
            assert b != n
    n_initial = round(config.i0 * n)
    timeout = isinstance(config.scheme, TimeoutScheme)
    end = min(config.scheme.t_g, config.horizon) if timeout else m.t_extinct
    assert m.buffer_integral == pytest.approx(replay_buffer(log, n_initial, end), rel=1e-12, abs=1e-9)
    assert m.buffer_integral >= 0
    assert m.lost == (timeout and not m.delivered)
    if m.delivered:
        assert m.t_d <= config.horizon
        assert [r[1] for r in log.records].count("deliver") == 1
    if timeout and config.scheme.t_g <= config.horizon:
        assert all(r[0] <= config.scheme.t_g for r in log.records)
        assert log.records[-1][4][1] == 0


@settings(deadline=None, max_examples=60)
@given(scenario(), st.integers(0, 2**32 - 1))
def test_node_state_transitions(config, seed):
    n = config.n_relays
    proc_log = MemoryEventLog()
    run_meeting_process(config, seed, log=proc_log)
    state = [INFECTED if k < round(config.i0 * n) else SUSCEPTIBLE for k in range(n + 1)]
    allowed = {(SUSCEPTIBLE, INFECTED), (SUSCEPTIBLE, RECOVERED), (INFECTED, RECOVERED)}
    for _, kind, a, b, _ in proc_log.records:
        if kind == "infect":
            assert (state[b], INFECTED) in allowed
            state[b] = INFECTED
        elif kind in ("recover", "timeout"):
            assert (state[a], RECOVERED) in allowed
            state[a] = RECOVERED
        elif kind == "deliver":
            state[n] = RECOVERED
        assert state[n] != INFECTED


def test_no_carrier_after_timeout():
    config = meeting(30, scheme=TimeoutScheme(6.0))
    for i in range(50):
        log = MemoryEventLog()
        run_meeting_process(config, run_seed(5, i), log=log)
        assert log.records[-1][4][1] == 0
        assert all(r[0] <= 6.0 for r in log.records)


def test_full_antipacket_extinction():
    n = 100
    horizon = 20 * math.log(n) / LAM
    st_ = batch(meeting(n, scheme=AntipacketScheme(1.0), horizon=horizon), 1000, master_seed=8)
    extinct = sum(m.t_extinct < horizon for m in st_.metrics)
    assert extinct / 1000 > 0.99


def test_coupled_monotonicity_in_timeout():
    base = meeting(40, lam=1.0)
    for i in range(100):
        seed = run_seed(17, i)
        a = run_meeting_process(replace(base, scheme=TimeoutScheme(4.0)), seed)
        b = run_meeting_process(replace(base, scheme=TimeoutScheme(7.5)), seed)
        assert b.lost <= a.lost
        assert b.buffer_integral >= a.buffer_integral


def test_buffer_decreases_with_kappa_on_average():
    means = []
    for kappa in (0.0, 0.5, 1.0):
        config = meeting(50, lam=1.0, scheme=AntipacketScheme(kappa), horizon=200.0)
        means.append(batch(config, 400, master_seed=4).buffer_integral.mean)
    assert means[0] > means[1] > means[2]


def test_csv_log_format():
    out = io.StringIO()
    run_meeting_process(meeting(3, scheme=TimeoutScheme(2.0)), 3, log=CsvEventLog(out))
    lines = out.getvalue().splitlines()
    assert lines[0] == "t,event,node_a,node_b"
    kinds = {line.split(",")[1] for line in lines[1:]}
    assert kinds <= set(sim.EVENT_KINDS) and "timeout" in kinds


# -- batches -------------------------------------------------------------------------


def test_single_run_batch_is_degenerate():
    config = meeting(10, scheme=TimeoutScheme(5.0))
    st_ = batch(config, 1, master_seed=3)
    m = run_meeting_process(config, run_seed(3, 0))
    assert st_.buffer_integral.mean == m.buffer_integral
    assert st_.buffer_integral.ci_low == st_.buffer_integral.ci_high == m.buffer_integral
    assert st_.loss_rate.variance == 0.0


def test_batch_deterministic_and_worker_independent():
    config = meeting(20, scheme=TimeoutScheme(None))
    a = batch(config, 200, master_seed=12)
    assert a == batch(config, 200, master_seed=12)
    assert a == batch(config, 200, master_seed=12, workers=2)
    assert a != batch(config, 200, master_seed=13)


def test_batch_errors_carry_run_index(monkeypatch):
    real = sim.run_meeting_process
    calls = []

    def flaky(config, seed, **kw):
        calls.append(seed)
        if len(calls) == 4:
            raise ValueError("boom")
        return real(config, seed, **kw)

    monkeypatch.setattr(sim, "run_meeting_process", flaky)
    with pytest.raises(sim.SimulationError) as info:
        batch(meeting(5), 10, master_seed=0)
    assert info.value.run_index == 3
    assert "run 3" in str(info.value)
    with pytest.raises(ValueError):
        batch(meeting(5), 0, master_seed=0)


def test_binomial_interval_contains_mean():
    lo, hi = sim.binomial_interval(20_000, 0.05)
    assert lo < 1000 < hi
    with pytest.raises(ValueError):
        sim.binomial_interval(0, 0.5)


# -- spatial backend -----------------------------------------------------------------


def spatial(n, spec, scheme, horizon, **kw):
    return ScenarioConfig(
        n_relays=n,
        meeting_rate=None,
        mobility=spec,
        time_unit_label="h",
        scheme=scheme,
        horizon=horizon,
        backend="spatial",
        **kw,
    )


def test_static_nodes_never_meet():
    spec = MobilitySpec(model=Model.RD, v_min=0.0, v_max=0.0)
    n = 4
    positions = np.array([[0.2, 0.2], [0.8, 0.2], [0.2, 0.8], [0.8, 0.8], [1.5, 1.5]])
    fleet = Fleet(spec, positions, np.zeros((5, 2)), np.full(5, 1.0))
    for scheme in (AntipacketScheme(1.0), TimeoutScheme(1e6)):
        config = spatial(n, spec, scheme, 50.0, initial_infected_fraction=0.5)
        m = run_spatial(config, 0, fleet=fleet)
        assert not m.delivered
        assert m.buffer_integral == pytest.approx(0.5 * n * 50.0)


def test_collision_course_gives_one_contact():
    spec = MobilitySpec(model=Model.RD)
    positions = np.array([[0.5, 1.0], [1.5, 1.0]])
    velocities = np.array([[5.0, 0.0], [-5.0, 0.0]])
    fleet = Fleet(spec, positions, velocities, np.full(2, 100.0))
    log = MemoryEventLog()
    config = spatial(1, spec, TimeoutScheme(10.0), 0.2)
    m = run_spatial(config, 0, fleet=fleet, log=log)
    contacts = log.contacts()
    assert len(contacts) == 1
    dt = config.spatial_dt()
    # the gap closes at relative speed 10 until it reaches r
    first_in_range = math.ceil((0.9 / 10.0) / dt - 1e-9) * dt
    assert contacts[0].t == pytest.approx(first_in_range)
    assert m.delivered and m.t_d == contacts[0].t


def test_spatial_rejects_large_step():
    spec = MobilitySpec(model=Model.RD)
    with pytest.raises(sim.SimulationError):
        sim.check_step(spec, spec.tx_range / (4 * spec.v_max))
    sim.check_step(spec, 0.99 * spec.tx_range / (4 * spec.v_max))
    with pytest.raises(sim.SimulationError):
        run_spatial(spatial(2, spec, AntipacketScheme(1.0), 1.0, dt=0.01), 0)


def test_spatial_fleet_size_checked():
    spec = MobilitySpec(model=Model.RD)
    fleet = Fleet.spawn(spec, 3, np.random.default_rng(0))
    with pytest.raises(sim.SimulationError):
        run_spatial(spatial(5, spec, AntipacketScheme(1.0), 1.0), 0, fleet=fleet)


def test_spatial_single_pair_delay_matches_meeting_rate():
    config = spatial(1, MobilitySpec(model=Model.RD), AntipacketScheme(1.0), 200.0)
    st_ = batch(config, 200, master_seed=6)
    d = st_.delivery_delay
    expected = 1 / config.model_rate()
    assert abs(d.mean - expected) <= 3 * math.sqrt(d.variance / d.count)


@pytest.mark.slow
def test_spatial_delay_matches_meeting_backend_at_full_scale():
    # cross-validation at N = 100 on the default geometry; see the README for
    # why the spatial epidemic runs slower than the Poisson contact model here
    config = spatial(100, MobilitySpec(model=Model.RWP), AntipacketScheme(1.0), 50.0)
    spatial_delay = batch(config, 100, master_seed=5).delivery_delay.mean
    poisson = replace(config, meeting_rate=config.model_rate(), mobility=None, backend="meeting")
    meeting_delay = batch(poisson, 4000, master_seed=5).delivery_delay.mean
    assert spatial_delay == pytest.approx(meeting_delay, rel=0.15)
