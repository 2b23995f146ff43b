"""Monte-Carlo simulation of one packet spreading among ``N`` relays and a destination.

Node ids ``0 .. N-1`` are relays (id 0 is the source) and id ``N`` is the
destination.  Every pair of nodes meets at per-pair rate ``mu = lambda / N``,
which is the rate under which the fluid equations ``dI/dt = lambda I S`` and
the destination hazard ``lambda I`` hold; with mobility, ``mu`` is the
physical pairwise rate and ``lambda = N mu``.

Two contact backends drive the same routing core:

* ``run_meeting_process`` is event driven.  Meetings are memoryless, so only
  meetings that can change something are simulated: the process jumps between
  them with the aggregate rate of each productive contact class.
* ``run_spatial`` steps the mobility model and fires a contact when a pair
  enters range (edge triggered).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .config import AntipacketScheme, ScenarioConfig, TimeoutScheme
from .mobility import Fleet, MobilitySpec

SUSCEPTIBLE, INFECTED, RECOVERED = 0, 1, 2
COMPARTMENT_NAMES = ("S", "I", "R")
EVENT_KINDS = ("contact", "infect", "recover", "deliver", "timeout")
NO_NODE = -1


class SimulationError(RuntimeError):
    """A run failed; ``run_index`` is set when raised from a batch."""

    def __init__(self, message: str, run_index: int | None = None):
        super().__init__(message if run_index is None else f"run {run_index}: {message}")
        self.run_index = run_index


@dataclass(frozen=True)
class NodeState:
    id: int
    compartment: int
    infection_time: float | None = None
    recovery_time: float | None = None


@dataclass(frozen=True)
class ContactEvent:
    t: float
    a: int
    b: int

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("a contact needs two distinct nodes")


@dataclass(frozen=True)
class RunMetrics:
    delivered: bool
    t_d: float | None
    lost: bool
    buffer_integral: float
    t_extinct: float


# -- event logs -----------------------------------------------------------------


class CsvEventLog:
    """Writes ``t,event,node_a,node_b`` lines; ``-1`` marks an absent node."""

    def __init__(self, stream, header: bool = True):
        self.stream = stream
        if header:
            stream.write("t,event,node_a,node_b\n")

    def record(self, t, kind, a, b, counts):
        self.stream.write(f"{t!r},{kind},{a},{b}\n")


class MemoryEventLog:
    """Keeps ``(t, kind, a, b, (nS, nI, nR))`` tuples; counts are taken after the event."""

    def __init__(self):
        self.records: list[tuple] = []

    def record(self, t, kind, a, b, counts):
        self.records.append((t, kind, a, b, counts))

    def contacts(self) -> list[ContactEvent]:
        return [ContactEvent(t, a, b) for t, kind, a, b, _ in self.records if kind == "contact"]


# -- routing core -----------------------------------------------------------------


class _Bag:
    """Unordered set of ints with O(1) insert, remove and indexed access."""

    __slots__ = ("items", "where")

    def __init__(self, capacity):
        self.items: list[int] = []
        self.where = [-1] * capacity

    def __len__(self):
        return len(self.items)

    def add(self, x):
        self.where[x] = len(self.items)
        self.items.append(x)

    def remove(self, x):
        k = self.where[x]
        last = self.items.pop()
        if last != x:
            self.items[k] = last
            self.where[last] = k
        self.where[x] = -1

    def pick(self, u):
        n = len(self.items)
        return self.items[min(int(u * n), n - 1)]


class _Uniforms:
    """Uniform [0, 1) draws handed out from blocks of a numpy generator."""

    __slots__ = ("rng", "buf", "k")
    BLOCK = 512

    def __init__(self, rng):
        self.rng = rng
        self.buf = rng.random(self.BLOCK).tolist()
        self.k = 0

    def __call__(self):
        if self.k == self.BLOCK:
            self.buf = self.rng.random(self.BLOCK).tolist()
            self.k = 0
        u = self.buf[self.k]
        self.k += 1
        return u


class EpidemicProcess:
    """Routing state and rules shared by both backends.

    Time only moves forward through :meth:`advance_to`, which accumulates the
    buffer integral exactly as ``(#infected) * elapsed``.
    """

    def __init__(self, n: int, n_initial: int, scheme, horizon: float, log=None):
        if n < 1:
            raise SimulationError("N must be >= 1")
        if not 1 <= n_initial <= n:
            raise SimulationError("initial infected count must lie in [1, N]")
        if horizon <= 0:
            raise SimulationError("horizon must be positive")
        self.n = n
        self.dest = n
        self.scheme = scheme
        self.antipacket = isinstance(scheme, AntipacketScheme)
        self.kappa = scheme.kappa if self.antipacket else 0.0
        self.horizon = horizon
        self.log = log
        self.now = 0.0
        self.buffer = 0.0
        self.t_d: float | None = None
        self.comp = [SUSCEPTIBLE] * (n + 1)
        self.t_inf: list[float | None] = [None] * (n + 1)
        self.t_rec: list[float | None] = [None] * (n + 1)
        self.s_bag = _Bag(n)
        self.i_bag = _Bag(n)
        self.r_bag = _Bag(n)  # recovered relays; the destination is tracked apart
        for k in range(n):
            if k < n_initial:
                self.comp[k] = INFECTED
                self.t_inf[k] = 0.0
                self.i_bag.add(k)
            else:
                self.s_bag.add(k)

    @property
    def delivered(self) -> bool:
        return self.t_d is not None

    def counts(self) -> tuple[int, int, int]:
        dest_r = 1 if self.comp[self.dest] == RECOVERED else 0
        return (len(self.s_bag) + 1 - dest_r, len(self.i_bag), len(self.r_bag) + dest_r)

    def node_states(self) -> list[NodeState]:
        return [NodeState(k, self.comp[k], self.t_inf[k], self.t_rec[k]) for k in range(self.n + 1)]

    def _emit(self, kind, a, b=NO_NODE):
        if self.log is not None:
            self.log.record(self.now, kind, a, b, self.counts())

    def advance_to(self, t: float):
        if t < self.now:
            raise SimulationError(f"time went backwards: {t} < {self.now}")
        self.buffer += len(self.i_bag) * (t - self.now)
        self.now = t

    def _recover(self, node):
        state = self.comp[node]
        if state == SUSCEPTIBLE:
            self.s_bag.remove(node)
        elif state == INFECTED:
            self.i_bag.remove(node)
        else:
            return
        self.comp[node] = RECOVERED
        self.t_rec[node] = self.now
        self.r_bag.add(node)
        self._emit("recover", node)

    def contact(self, a: int, b: int, u) -> None:
        """Apply the routing rules to a meeting of ``a`` and ``b`` at the current time.

        ``u`` supplies uniforms for the antipacket forwarding trial.
        """
        self._emit("contact", min(a, b), max(a, b))
        if b == self.dest:
            a, b = b, a
        if a == self.dest:
            self._destination_contact(b)
            return
        ca, cb = self.comp[a], self.comp[b]
        if ca == cb:
            return
        if {ca, cb} == {INFECTED, SUSCEPTIBLE}:
            src, dst = (a, b) if ca == INFECTED else (b, a)
            self.s_bag.remove(dst)
            self.i_bag.add(dst)
            self.comp[dst] = INFECTED
            self.t_inf[dst] = self.now
            self._emit("infect", src, dst)
            return
        # one side recovered: antipacket forwarding, never data
        if self.antipacket and self.delivered:
            target = b if ca == RECOVERED else a
            if self.kappa >= 1.0 or u() < self.kappa:
                self._recover(target)

    def _destination_contact(self, node):
        state = self.comp[node]
        if not self.delivered:
            if state != INFECTED:
                return
            self.t_d = self.now
            self.comp[self.dest] = RECOVERED
            self.t_rec[self.dest] = self.now
            self._emit("deliver", node, self.dest)
            if self.antipacket:
                # the delivering meeting also hands over the antipacket
                self._recover(node)
            return
        if self.antipacket:
            self._recover(node)

    def fire_timeout(self):
        """Every carrier drops the packet at once."""
        for node in list(self.i_bag.items):
            self.i_bag.remove(node)
            self.comp[node] = RECOVERED
            self.t_rec[node] = self.now
            self.r_bag.add(node)
            self._emit("timeout", node)

    def metrics(self, t_extinct: float) -> RunMetrics:
        lost = (not self.antipacket) and not self.delivered
        return RunMetrics(self.delivered, self.t_d, lost, self.buffer, t_extinct)


def _initial_count(config: ScenarioConfig) -> int:
    return max(1, math.ceil(config.n_relays * config.i0 - 1e-9))


def _deadline(config: ScenarioConfig) -> tuple[float, float | None]:
    """Run end and, for the timeout scheme, the timer instant (None when past the horizon)."""
    if isinstance(config.scheme, TimeoutScheme):
        t_g = config.timeout_policy().t_g
        if t_g <= config.horizon:
            return t_g, t_g
    return config.horizon, None


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(int(seed))


# -- meeting-process backend -----------------------------------------------------------


def run_meeting_process(config: ScenarioConfig, seed, *, log=None) -> RunMetrics:
    """One run with exponential pairwise meetings at rate ``lambda / N``.

    Productive contact classes and their aggregate rates:
    infected-susceptible ``mu nI nS``; destination-infected ``mu nI`` (before
    delivery, and after it under antipackets); destination-susceptible
    ``mu nS`` and recovered-relay to susceptible/infected ``mu nR (nS + nI)``
    (antipacket phase only; the latter is thinned by ``kappa``).  Meetings
    outside these classes leave the state unchanged and are not logged.
    """
    n = config.n_relays
    lam = config.model_rate()
    if lam <= 0:
        raise SimulationError("meeting rate must be positive")
    mu = lam / n
    proc = EpidemicProcess(n, _initial_count(config), config.scheme, config.horizon, log)
    end, t_g = _deadline(config)
    u = _Uniforms(_rng(seed))
    anti = proc.antipacket
    kappa = proc.kappa
    s_bag, i_bag, r_bag = proc.s_bag, proc.i_bag, proc.r_bag
    dest = proc.dest
    t_extinct = None

    while True:
        ns, ni, nr = len(s_bag), len(i_bag), len(r_bag)
        if anti and ni == 0:
            t_extinct = proc.now
            break
        delivered = proc.t_d is not None
        r_inf = ni * ns
        r_dest_i = ni if (not delivered or anti) else 0
        r_dest_s = ns if (anti and delivered) else 0
        r_anti = nr * (ns + ni) if (anti and delivered and kappa > 0.0) else 0
        total = mu * (r_inf + r_dest_i + r_dest_s + r_anti)
        if total <= 0.0:
            proc.advance_to(end)
            break
        t_next = proc.now - math.log(1.0 - u()) / total
        if t_next >= end:
            proc.advance_to(end)
            break
        proc.advance_to(t_next)
        x = u() * (r_inf + r_dest_i + r_dest_s + r_anti)
        if x < r_inf:
            proc.contact(i_bag.pick(u()), s_bag.pick(u()), u)
        elif x < r_inf + r_dest_i:
            proc.contact(i_bag.pick(u()), dest, u)
        elif x < r_inf + r_dest_i + r_dest_s:
            proc.contact(s_bag.pick(u()), dest, u)
        else:
            src = r_bag.pick(u())
            y = u() * (ns + ni)
            target = s_bag.pick(y / ns) if y < ns else i_bag.pick((y - ns) / ni)
            proc.contact(src, target, u)

    if t_g is not None:
        proc.fire_timeout()
        t_extinct = t_g
    if t_extinct is None:
        t_extinct = proc.now
    return proc.metrics(t_extinct)


# -- spatial backend ---------------------------------------------------------------------


def check_step(spec: MobilitySpec, dt: float) -> None:
    """Reject steps whose worst-case displacement reaches a quarter of the range."""
    if dt <= 0:
        raise SimulationError("dt must be positive")
    if spec.v_max * dt >= spec.tx_range / 4:
        raise SimulationError(
            f"dt = {dt!r} moves a node up to {spec.v_max * dt:.4g}, "
            f"which is not below r/4 = {spec.tx_range / 4:.4g}"
        )


def run_spatial(config: ScenarioConfig, seed, *, fleet: Fleet | None = None, log=None) -> RunMetrics:
    """One run driven by the mobility model.

    ``fleet`` overrides the initial placement of the ``N + 1`` nodes (no
    warm-up is applied to it).  A contact fires at the first step on which a
    pair is in range after having been out of range on the previous step;
    simultaneous contacts are processed in ascending ``(min id, max id)``
    order.
    """
    if config.mobility is None:
        raise SimulationError("the spatial backend needs a mobility spec")
    spec = config.sim_mobility()
    dt = config.spatial_dt()
    check_step(spec, dt)
    n = config.n_relays
    rng = _rng(seed)
    if fleet is None:
        fleet = Fleet.spawn(spec, n + 1, rng)
        for _ in range(int(round(config.spatial_warmup() / dt))):
            fleet.advance(dt, rng)
    elif len(fleet) != n + 1:
        raise SimulationError(f"fleet has {len(fleet)} nodes, expected N + 1 = {n + 1}")
    proc = EpidemicProcess(n, _initial_count(config), config.scheme, config.horizon, log)
    end, t_g = _deadline(config)
    u = _Uniforms(rng)
    static = not np.any(fleet.velocities)
    inside = fleet.contact_matrix()
    t_extinct = None
    k = 0
    while True:
        if proc.antipacket and len(proc.i_bag) == 0:
            t_extinct = proc.now
            break
        t_next = (k + 1) * dt
        if t_next > end:
            proc.advance_to(end)
            break
        if static:
            # nothing moves, so no pair can ever enter range
            proc.advance_to(end)
            break
        fleet.advance(dt, rng)
        k += 1
        proc.advance_to(t_next)
        now = fleet.contact_matrix()
        a_idx, b_idx = np.nonzero(now & ~inside)
        inside = now
        for a, b in zip(a_idx.tolist(), b_idx.tolist()):
            proc.contact(a, b, u)

    if t_g is not None:
        proc.fire_timeout()
        t_extinct = t_g
    if t_extinct is None:
        t_extinct = proc.now
    return proc.metrics(t_extinct)


# -- batches -------------------------------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    count: int
    mean: float
    variance: float
    ci_low: float
    ci_high: float

    @classmethod
    def of(cls, values: Sequence[float], level: float = 0.95) -> "Summary":
        x = np.asarray(values, dtype=float)
        if x.size == 0:
            return cls(0, math.nan, math.nan, math.nan, math.nan)
        mean = float(x.mean())
        if x.size == 1:
            return cls(1, mean, 0.0, mean, mean)
        var = float(x.var(ddof=1))
        half = stats.norm.ppf(0.5 + level / 2) * math.sqrt(var / x.size)
        return cls(int(x.size), mean, var, mean - half, mean + half)


@dataclass(frozen=True)
class AggregateStats:
    runs: int
    loss_rate: Summary
    delivery_delay: Summary  # delivered runs only
    buffer_integral: Summary
    extinction_time: Summary
    delivered: int
    metrics: tuple[RunMetrics, ...] = field(repr=False)


def binomial_interval(runs: int, p: float, level: float = 0.99) -> tuple[int, int]:
    """Central interval of loss counts for a Binomial(runs, p) at the given level."""
    if runs < 1 or not 0 <= p <= 1:
        raise ValueError("need runs >= 1 and p in [0, 1]")
    tail = (1.0 - level) / 2
    return int(stats.binom.ppf(tail, runs, p)), int(stats.binom.isf(tail, runs, p))


def aggregate(metrics: Sequence[RunMetrics]) -> AggregateStats:
    if not metrics:
        raise ValueError("no runs to aggregate")
    return AggregateStats(
        runs=len(metrics),
        loss_rate=Summary.of([float(m.lost) for m in metrics]),
        delivery_delay=Summary.of([m.t_d for m in metrics if m.delivered]),
        buffer_integral=Summary.of([m.buffer_integral for m in metrics]),
        extinction_time=Summary.of([m.t_extinct for m in metrics]),
        delivered=sum(m.delivered for m in metrics),
        metrics=tuple(metrics),
    )


def run_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Seed of run ``index``; depends only on the pair, never on scheduling."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))


def run_once(config: ScenarioConfig, seed) -> RunMetrics:
    if config.backend == "spatial":
        return run_spatial(config, seed)
    return run_meeting_process(config, seed)


def _run_chunk(config: ScenarioConfig, master_seed: int, start: int, stop: int) -> list[RunMetrics]:
    out = []
    for i in range(start, stop):
        try:
            out.append(run_once(config, run_seed(master_seed, i)))
        except Exception as exc:
            raise SimulationError(f"{type(exc).__name__}: {exc}", run_index=i) from exc
    return out


def max_workers() -> int:
    return os.cpu_count() or 1


def batch(config: ScenarioConfig, runs: int, master_seed: int, workers: int = 1) -> AggregateStats:
    """``runs`` independent runs aggregated in run-index order.

    The result is identical for any ``workers``: per-run seeds come from
    ``(master_seed, run_index)`` and results are reassembled by index.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if config.backend not in ("meeting", "spatial"):
        raise ValueError(f"batch needs a simulation backend, got {config.backend!r}")
    workers = max(1, min(int(workers), runs))
    if workers == 1:
        return aggregate(_run_chunk(config, master_seed, 0, runs))
    bounds = np.linspace(0, runs, 4 * workers + 1).astype(int)
    chunks = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    results: list[RunMetrics] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, config, master_seed, int(a), int(b)) for a, b in chunks]
        for fut in futures:
            results.extend(fut.result())
    return aggregate(results)

