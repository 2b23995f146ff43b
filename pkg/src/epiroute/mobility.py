"""Random waypoint and random direction mobility on a square area.

Distances are in km, speeds in km/h and rates in 1/h unless a spec has been
rescaled with :meth:`MobilitySpec.in_time_unit`.

Random direction (RD) always lives on the wrap-around square (a torus).
Random waypoint (RWP) defaults to the bounded square with straight-line
legs: that is the geometry whose non-uniform stationary density produces
the waypoint constant ``omega`` in the RWP meeting rate.  On the torus
(``boundary="torus"``) RWP moves along the minimum-image geodesic and its
stationary density is uniform, so its meeting rate carries no ``omega``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

PUBLISHED_RELATIVE_SPEED = {"RWP": 8.7, "RD": 9.2}
RWP_WAYPOINT_CONSTANT = 1.3683

_MAX_LEGS_PER_STEP = 10_000


class Model(str, enum.Enum):
    RWP = "RWP"
    RD = "RD"


@dataclass(frozen=True)
class MobilitySpec:
    model: Model = Model.RWP
    side_length: float = 2.5352
    tx_range: float = 0.1
    v_min: float = 4.0
    v_max: float = 10.0
    leg_duration: float | None = None
    waypoint_constant: float = RWP_WAYPOINT_CONSTANT
    boundary: str = "square"

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        if self.side_length <= 0:
            raise ValueError("side_length must be positive")
        if not 0 < self.tx_range < self.side_length / 2:
            raise ValueError("tx_range must lie in (0, side_length / 2)")
        if not 0 <= self.v_min <= self.v_max:
            raise ValueError("speeds must satisfy 0 <= v_min <= v_max")
        if self.leg_duration is not None and self.leg_duration <= 0:
            raise ValueError("leg_duration must be positive")
        if self.waypoint_constant <= 0:
            raise ValueError("waypoint_constant must be positive")
        if self.boundary not in ("square", "torus"):
            raise ValueError(f"boundary must be 'square' or 'torus', got {self.boundary!r}")

    @property
    def wraps(self) -> bool:
        return self.model is Model.RD or self.boundary == "torus"

    @property
    def rd_leg(self) -> float:
        """RD leg duration; defaults to crossing the area once at mean speed."""
        if self.leg_duration is not None:
            return self.leg_duration
        mean_speed = 0.5 * (self.v_min + self.v_max)
        return self.side_length / mean_speed if mean_speed > 0 else math.inf

    def in_time_unit(self, hours_per_unit: float) -> "MobilitySpec":
        """Same geometry with speeds expressed per ``hours_per_unit`` hours."""
        if hours_per_unit <= 0:
            raise ValueError("hours_per_unit must be positive")
        leg = None if self.leg_duration is None else self.leg_duration / hours_per_unit
        return replace(
            self,
            v_min=self.v_min * hours_per_unit,
            v_max=self.v_max * hours_per_unit,
            leg_duration=leg,
        )


@dataclass(frozen=True)
class NodeKinematics:
    position: tuple[float, float]
    velocity: tuple[float, float]
    leg_remaining: float


def meeting_rate_rwp(spec: MobilitySpec, e_vrel: float) -> float:
    if spec.model is not Model.RWP:
        raise ValueError("meeting_rate_rwp needs an RWP spec")
    if e_vrel <= 0:
        raise ValueError("e_vrel must be positive")
    return 2.0 * spec.waypoint_constant * spec.tx_range * e_vrel / spec.side_length**2


def meeting_rate_rd(spec: MobilitySpec, e_vrel: float) -> float:
    if spec.model is not Model.RD:
        raise ValueError("meeting_rate_rd needs an RD spec")
    if e_vrel <= 0:
        raise ValueError("e_vrel must be positive")
    return 2.0 * spec.tx_range * e_vrel / spec.side_length**2


def pairwise_meeting_rate(spec: MobilitySpec, e_vrel: float | None = None) -> float:
    """Pairwise meeting rate for either model; ``e_vrel`` defaults to the
    published relative speed (8.7 km/h RWP, 9.2 km/h RD)."""
    if e_vrel is None:
        e_vrel = PUBLISHED_RELATIVE_SPEED[spec.model.value]
    if spec.model is Model.RWP:
        return meeting_rate_rwp(spec, e_vrel)
    return meeting_rate_rd(spec, e_vrel)


def estimate_relative_speed(spec: MobilitySpec, samples: int = 200_000, seed: int = 0) -> float:
    """Monte-Carlo mean of ``|v1 - v2|`` for two independent nodes in steady state.

    RD velocities are uniform in direction with speed uniform on
    ``[v_min, v_max]``.  RWP velocities are taken from the time-stationary
    law: legs are sampled per the model and weighted by their duration, which
    biases the speed toward slow legs.
    """
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    if spec.v_max == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    if spec.model is Model.RD:
        speed = rng.uniform(spec.v_min, spec.v_max, size=(samples, 2))
        theta = rng.uniform(0.0, 2.0 * np.pi, size=(samples, 2))
        vel = np.stack([speed * np.cos(theta), speed * np.sin(theta)], axis=-1)
        return float(np.linalg.norm(vel[:, 0] - vel[:, 1], axis=-1).mean())

    L = spec.side_length
    start = rng.uniform(0.0, L, size=(samples, 2, 2))
    end = rng.uniform(0.0, L, size=(samples, 2, 2))
    d = end - start
    if spec.wraps:
        d = d - L * np.round(d / L)
    dist = np.linalg.norm(d, axis=-1)
    speed = rng.uniform(spec.v_min, spec.v_max, size=(samples, 2))
    ok = (dist > 0) & (speed > 0)
    dist = np.where(ok, dist, 1.0)
    speed = np.where(ok, speed, 1.0)
    vel = d / dist[..., None] * speed[..., None]
    weight = np.where(ok, dist / speed, 0.0)
    w = weight[:, 0] * weight[:, 1]
    rel = np.linalg.norm(vel[:, 0] - vel[:, 1], axis=-1)
    return float((rel * w).sum() / w.sum())


def torus_delta(a: np.ndarray, b: np.ndarray, side: float) -> np.ndarray:
    """Minimum-image displacement ``b - a`` on a torus of the given side."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    # subtracting whole periods leaves in-range components bit-exact
    return d - side * np.round(d / side)


def in_contact(a: NodeKinematics, b: NodeKinematics, spec: MobilitySpec) -> bool:
    """True when the nodes are within ``tx_range`` (boundary inclusive)."""
    if spec.wraps:
        d = torus_delta(a.position, b.position, spec.side_length)
    else:
        d = np.subtract(b.position, a.position)
    return bool(math.hypot(d[0], d[1]) <= spec.tx_range)


class Fleet:
    """Vectorized kinematic state of a group of nodes sharing one spec."""

    def __init__(self, spec: MobilitySpec, positions, velocities, remaining):
        self.spec = spec
        self.positions = np.array(positions, dtype=float).reshape(-1, 2)
        self.velocities = np.array(velocities, dtype=float).reshape(-1, 2)
        self.remaining = np.array(remaining, dtype=float).reshape(-1)
        n = len(self.positions)
        if self.velocities.shape != (n, 2) or self.remaining.shape != (n,):
            raise ValueError("positions, velocities and remaining must describe the same nodes")

    @classmethod
    def spawn(cls, spec: MobilitySpec, n: int, rng: np.random.Generator) -> "Fleet":
        """``n`` nodes uniformly placed, each starting a fresh leg."""
        pos = rng.uniform(0.0, spec.side_length, size=(n, 2))
        fleet = cls(spec, pos, np.zeros((n, 2)), np.zeros(n))
        fleet._new_legs(np.ones(n, dtype=bool), rng)
        return fleet

    def __len__(self):
        return len(self.positions)

    def node(self, k: int) -> NodeKinematics:
        return NodeKinematics(
            tuple(self.positions[k]), tuple(self.velocities[k]), float(self.remaining[k])
        )

    def _wrap(self):
        L = self.spec.side_length
        if self.spec.wraps:
            np.mod(self.positions, L, out=self.positions)
            # fmod of a tiny negative can round up to exactly L
            self.positions[self.positions >= L] = 0.0
        else:
            np.clip(self.positions, 0.0, np.nextafter(L, 0.0), out=self.positions)

    def _new_legs(self, mask: np.ndarray, rng: np.random.Generator):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return
        spec = self.spec
        speed = rng.uniform(spec.v_min, spec.v_max, size=idx.size)
        if spec.model is Model.RD:
            theta = rng.uniform(0.0, 2.0 * np.pi, size=idx.size)
            self.velocities[idx, 0] = speed * np.cos(theta)
            self.velocities[idx, 1] = speed * np.sin(theta)
            self.remaining[idx] = np.where(speed > 0, spec.rd_leg, np.inf)
            return
        L = spec.side_length
        waypoint = rng.uniform(0.0, L, size=(idx.size, 2))
        d = waypoint - self.positions[idx]
        if spec.wraps:
            d = d - L * np.round(d / L)
        dist = np.hypot(d[:, 0], d[:, 1])
        moving = (speed > 0) & (dist > 0)
        safe_dist = np.where(moving, dist, 1.0)
        safe_speed = np.where(moving, speed, 1.0)
        self.velocities[idx] = np.where(
            moving[:, None], d / safe_dist[:, None] * safe_speed[:, None], 0.0
        )
        # a zero-length leg ends immediately; a zero-speed node never arrives
        self.remaining[idx] = np.where(
            moving, dist / safe_speed, np.where(speed > 0, 0.0, np.inf)
        )

    def advance(self, dt: float, rng: np.random.Generator) -> None:
        """Move every node forward by ``dt``, redrawing legs that complete.

        Leftover time after a leg ends is spent on the next leg, so position
        is continuous across leg boundaries.
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        left = np.full(len(self), float(dt))
        for _ in range(_MAX_LEGS_PER_STEP):
            step = np.minimum(left, self.remaining)
            self.positions += self.velocities * step[:, None]
            self.remaining -= step
            left -= step
            ended = self.remaining <= 0.0
            self._wrap()
            if not ended.any():
                return
            self._new_legs(ended, rng)
        raise RuntimeError("too many zero-length legs in one step")

    def contact_matrix(self) -> np.ndarray:
        """Upper-triangular boolean matrix of pairs within range."""
        d = self.positions[None, :, :] - self.positions[:, None, :]
        if self.spec.wraps:
            L = self.spec.side_length
            d = d - L * np.round(d / L)
        dist2 = d[..., 0] ** 2 + d[..., 1] ** 2
        return np.triu(dist2 <= self.spec.tx_range**2, k=1)


def advance(
    node: NodeKinematics, spec: MobilitySpec, dt: float, rng: np.random.Generator
) -> NodeKinematics:
    """Single-node version of :meth:`Fleet.advance`."""
    fleet = Fleet(spec, [node.position], [node.velocity], [node.leg_remaining])
    fleet.advance(dt, rng)
    return fleet.node(0)


def inter_meeting_times(
    spec: MobilitySpec,
    pairs: int,
    duration: float,
    dt: float,
    seed: int = 0,
    warmup: float = 0.0,
) -> np.ndarray:
    """Intervals between successive range entries of isolated node pairs.

    ``pairs`` independent two-node systems are stepped together; each pair
    only ever checks its own two nodes.  Intervals still open at the end of
    the run are discarded.
    """
    rng = np.random.default_rng(seed)
    fleet = Fleet.spawn(spec, 2 * pairs, rng)
    L = spec.side_length
    r2 = spec.tx_range**2

    def pair_in_range():
        d = fleet.positions[1::2] - fleet.positions[0::2]
        if spec.wraps:
            d = d - L * np.round(d / L)
        return d[:, 0] ** 2 + d[:, 1] ** 2 <= r2

    for _ in range(int(round(warmup / dt))):
        fleet.advance(dt, rng)
    inside = pair_in_range()
    last = np.full(pairs, np.nan)
    intervals = []
    for k in range(1, int(round(duration / dt)) + 1):
        fleet.advance(dt, rng)
        now = pair_in_range()
        entered = np.flatnonzero(now & ~inside)
        inside = now
        if entered.size:
            t = k * dt
            seen = entered[~np.isnan(last[entered])]
            intervals.extend(t - last[seen])
            last[entered] = t
    return np.asarray(intervals)
