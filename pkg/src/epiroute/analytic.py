"""Closed-form fluid expressions for epidemic routing of a single packet.

Time is measured in an abstract time unit and ``meeting_rate`` carries
units of 1/time-unit.  The fluid compartments are fractions of the ``N``
relays; the destination is not counted among them.

Every logistic expression is evaluated in a form that factors out the
dominant exponential, so arguments with ``lambda * t`` far beyond 700 do
not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "EpidemicParams",
    "TimeoutPolicy",
    "AntipacketPolicy",
    "ReliabilityTarget",
    "infected_fraction",
    "delivery_probability",
    "infected_integral_pre_timeout",
    "optimal_global_timeout",
    "pareto_buffer",
    "recovered_fraction_anti",
    "susceptible_fraction_anti",
    "buffer_before_delivery",
    "susceptible_mass_after_delivery",
    "unreached_mass_null",
    "recovered_mass_cooperative",
    "antipacket_buffer",
    "relative_improvement",
]


@dataclass(frozen=True)
class EpidemicParams:
    n_relays: int
    initial_infected_fraction: float
    meeting_rate: float

    def __post_init__(self):
        if self.n_relays < 1:
            raise ValueError(f"n_relays must be >= 1, got {self.n_relays}")
        if not 0.0 < self.initial_infected_fraction <= 1.0:
            raise ValueError(
                f"initial_infected_fraction must lie in (0, 1], got {self.initial_infected_fraction}"
            )
        if self.meeting_rate <= 0.0:
            raise ValueError(f"meeting_rate must be positive, got {self.meeting_rate}")
        # at least the source must carry the packet
        if self.n_relays * self.initial_infected_fraction < 1.0 - 1e-9:
            raise ValueError("n_relays * initial_infected_fraction must be >= 1")

    @classmethod
    def single_source(cls, n_relays: int, meeting_rate: float) -> "EpidemicParams":
        """Parameters with only the source infected, ``I0 = 1/N``."""
        return cls(n_relays, 1.0 / n_relays, meeting_rate)


@dataclass(frozen=True)
class TimeoutPolicy:
    t_g: float

    def __post_init__(self):
        if self.t_g < 0.0:
            raise ValueError(f"t_g must be >= 0, got {self.t_g}")


@dataclass(frozen=True)
class AntipacketPolicy:
    kappa: float
    t_f: float

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.t_f < 0.0:
            raise ValueError(f"t_f must be >= 0, got {self.t_f}")


@dataclass(frozen=True)
class ReliabilityTarget:
    epsilon: float

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(
                f"epsilon must lie in (0, 1], got {self.epsilon}; epsilon = 0 (lossless "
                "delivery) needs an infinite timeout and infinite buffer occupancy under "
                "the global timeout scheme"
            )


def _target(target: ReliabilityTarget | float) -> ReliabilityTarget:
    if isinstance(target, ReliabilityTarget):
        return target
    return ReliabilityTarget(float(target))


def _log_mix(i0: float, x: float) -> float:
    """``ln(i0 * exp(x) + 1 - i0)`` without overflow."""
    if x >= 0.0:
        return x + math.log(i0 + (1.0 - i0) * math.exp(-x))
    return math.log1p(i0 * math.expm1(x))


def infected_fraction(params: EpidemicParams, t: float) -> float:
    """Logistic infected fraction ``I0 / (I0 + (1 - I0) exp(-lambda t))``."""
    if t < 0.0:
        raise ValueError("t must be >= 0")
    i0 = params.initial_infected_fraction
    return i0 / (i0 + (1.0 - i0) * math.exp(-params.meeting_rate * t))


def delivery_probability(params: EpidemicParams, infected_integral: float) -> float:
    """Probability that the destination has the packet, given the accumulated
    infected fraction ``int_0^t I``."""
    if infected_integral < 0.0:
        raise ValueError("infected_integral must be >= 0")
    return -math.expm1(-params.meeting_rate * infected_integral)


def infected_integral_pre_timeout(params: EpidemicParams, t: float) -> float:
    """``int_0^t I(tau) dtau`` for the logistic ``I``."""
    if t < 0.0:
        raise ValueError("t must be >= 0")
    lam = params.meeting_rate
    return _log_mix(params.initial_infected_fraction, lam * t) / lam


def optimal_global_timeout(params: EpidemicParams, target: ReliabilityTarget | float) -> float:
    """Smallest timer value whose fluid delivery probability reaches ``1 - epsilon``.

    Raises ValueError for ``epsilon = 0``: no finite timer gives lossless delivery.
    """
    eps = _target(target).epsilon
    i0 = params.initial_infected_fraction
    # ln[(1 + b)/eps - b] with b = (1 - I0)/I0 equals ln[1 + (1 - eps)/(I0 eps)]
    return math.log1p((1.0 - eps) / (i0 * eps)) / params.meeting_rate


def pareto_buffer(params: EpidemicParams, target: ReliabilityTarget | float) -> float:
    """Minimum system-wide buffer occupancy ``(N / lambda) ln(1/epsilon)``."""
    eps = _target(target).epsilon
    return params.n_relays / params.meeting_rate * math.log(1.0 / eps)


def recovered_fraction_anti(
    params: EpidemicParams, policy: AntipacketPolicy, t_d: float, t: float
) -> float:
    """Recovered fraction after delivery with the destination-contact term dropped.

    ``kappa > 0`` gives logistic growth from ``1/N``; ``kappa = 0`` leaves only the
    destination issuing antipackets, an exponential approach to 1.
    """
    if t < t_d:
        raise ValueError("t must be >= t_d")
    n = params.n_relays
    lam = params.meeting_rate
    if policy.kappa > 0.0:
        return 1.0 / (1.0 + (n - 1) * math.exp(-lam * policy.kappa * (t - t_d)))
    return 1.0 - (n - 1) / n * math.exp(-lam / n * (t - t_d))


def susceptible_fraction_anti(params: EpidemicParams, t: float) -> float:
    """Susceptible fraction ``(1 - I0) / (I0 exp(lambda t) + 1 - I0)``.

    Before delivery this is ``1 - I(t)``.  After delivery it stays exact for
    ``kappa = 1`` (infected and recovered contacts both remove susceptibles)
    and is an approximation for ``kappa = 0``.  Intermediate ``kappa`` goes
    through :func:`epiroute.ode.integrate`.
    """
    if t < 0.0:
        raise ValueError("t must be >= 0")
    i0 = params.initial_infected_fraction
    decay = math.exp(-params.meeting_rate * t)
    return (1.0 - i0) * decay / (i0 + (1.0 - i0) * decay)


def buffer_before_delivery(params: EpidemicParams, t_d: float) -> float:
    """Node-time held before delivery: ``N int_0^{t_d} I``."""
    return params.n_relays * infected_integral_pre_timeout(params, t_d)


def susceptible_mass_after_delivery(params: EpidemicParams, t_d: float, t_f: float) -> float:
    """``N int_{t_d}^{t_f} S`` for :func:`susceptible_fraction_anti`."""
    if t_f < t_d:
        raise ValueError("t_f must be >= t_d")
    i0 = params.initial_infected_fraction
    lam = params.meeting_rate
    # ln(I0 + (1 - I0) e^{-lam t}) stays bounded for any t
    upper = math.log1p((1.0 - i0) * math.expm1(-lam * t_d))
    lower = math.log1p((1.0 - i0) * math.expm1(-lam * t_f))
    return params.n_relays / lam * (upper - lower)


def unreached_mass_null(params: EpidemicParams, t_d: float, t_f: float) -> float:
    """``N int_{t_d}^{t_f} (1 - R)`` when only the destination spreads antipackets."""
    if t_f < t_d:
        raise ValueError("t_f must be >= t_d")
    n = params.n_relays
    lam = params.meeting_rate
    return n * (n - 1) / lam * -math.expm1(-lam / n * (t_f - t_d))


def recovered_mass_cooperative(
    params: EpidemicParams, kappa: float, t_d: float, t_f: float
) -> float:
    """``N int_{t_d}^{t_f} R`` for logistic antipacket spread with ``kappa > 0``."""
    if t_f < t_d:
        raise ValueError("t_f must be >= t_d")
    if kappa <= 0.0:
        raise ValueError("kappa must be > 0")
    n = params.n_relays
    rate = params.meeting_rate * kappa
    x = rate * (t_f - t_d)
    if x == 0.0:
        # R stays at 1/N
        return t_f - t_d
    if x < 1.0:
        # n / rate = n (t_f - t_d) / x, which stays finite for subnormal rates
        return n * (t_f - t_d) * (math.log1p(math.expm1(x) / n) / x)
    # ln[(e^x + N - 1) / N] = x + ln(1 + (N - 1) e^{-x}) - ln N
    return n / rate * (x + math.log1p((n - 1) * math.exp(-x)) - math.log(n))


def antipacket_buffer(params: EpidemicParams, policy: AntipacketPolicy, t_d: float) -> float:
    """System-wide buffer occupancy when the destination receives the packet at ``t_d``.

    For ``kappa`` strictly between 0 and 1 the susceptible fraction is still the
    extreme-case expression, so the result is an approximation; the ODE route
    is authoritative there.
    """
    t_f = policy.t_f
    if t_d < 0.0:
        raise ValueError("t_d must be >= 0")
    if t_d > t_f:
        raise ValueError(f"t_d ({t_d}) must not exceed t_f ({t_f})")
    g = buffer_before_delivery(params, t_d)
    h = susceptible_mass_after_delivery(params, t_d, t_f)
    if policy.kappa == 0.0:
        b = g - h + unreached_mass_null(params, t_d, t_f)
    else:
        n = params.n_relays
        b = g - h + n * (t_f - t_d) - recovered_mass_cooperative(params, policy.kappa, t_d, t_f)
    return b


def relative_improvement(b_null: float, b_fully: float) -> float:
    """Fractional buffer saving of full over null antipacket dissemination."""
    if b_null <= 0.0:
        raise ValueError("b_null must be positive")
    return (b_null - b_fully) / b_null
