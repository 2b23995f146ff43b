"""Fixed-step RK4 integration of the SIR fluid models with scheme breakpoints.

The state vector is ``(S, I, R, P)`` where ``P`` is the delivery probability,
driven by ``dP/dt = lambda I (1 - P)``.  The stepper never straddles a scheme
switch: the timeout instant ``t_g`` (where all infected mass jumps to R) and
the delivery instant ``t_d`` (where the antipacket dynamics take over) are
phase boundaries.  Each phase is resampled onto at least 512 points by cubic
Hermite interpolation between accepted steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicHermiteSpline

from .analytic import EpidemicParams

MIN_SAMPLES_PER_PHASE = 512
STATE_SLACK = 1e-6


class IntegrationError(RuntimeError):
    """The integrated state left the unit interval."""


@dataclass(frozen=True)
class SirState:
    s: float
    i: float
    r: float


@dataclass(frozen=True)
class GlobalTimeout:
    t_g: float

    def __post_init__(self):
        if self.t_g < 0:
            raise ValueError("t_g must be >= 0")


@dataclass(frozen=True)
class Antipacket:
    kappa: float
    t_d: float

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.t_d < 0:
            raise ValueError("t_d must be >= 0")


Scheme = Union[GlobalTimeout, Antipacket]


@dataclass(frozen=True)
class RhsSpec:
    scheme: Scheme
    params: EpidemicParams


@dataclass
class Trajectory:
    """Sampled fluid path.

    Times are increasing; the one exception is the timeout instant, which is
    stored twice (left and right limit) so that the jump of ``I`` to zero is
    represented exactly and trapezoidal integrals need no special casing.
    """

    times: np.ndarray
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    delivery_p: np.ndarray
    params: EpidemicParams

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def states(self) -> list[SirState]:
        return [SirState(*x) for x in zip(self.s.tolist(), self.i.tolist(), self.r.tolist())]


def _infection_rhs(lam):
    def f(s, i, r, p):
        flow = lam * i * s
        return -flow, flow, 0.0, lam * i * (1.0 - p)

    return f


def _antipacket_rhs(lam, kappa, n):
    dest = lam / n

    def f(s, i, r, p):
        immunize = lam * kappa * r + dest
        flow = lam * i * s
        return (
            -flow - immunize * s,
            flow - immunize * i,
            immunize * (i + s),
            lam * i * (1.0 - p),
        )

    return f


def _rk4_phase(f, y0, t0, t1, step):
    """Integrate ``f`` over ``[t0, t1]``; returns step times, states, derivatives."""
    n = max(1, math.ceil((t1 - t0) / step - 1e-12))
    h = (t1 - t0) / n
    ys = np.empty((n + 1, 4))
    ds = np.empty((n + 1, 4))
    s, i, r, p = y0
    ys[0] = y0
    for k in range(n):
        k1 = f(s, i, r, p)
        ds[k] = k1
        a = 0.5 * h
        k2 = f(s + a * k1[0], i + a * k1[1], r + a * k1[2], p + a * k1[3])
        k3 = f(s + a * k2[0], i + a * k2[1], r + a * k2[2], p + a * k2[3])
        k4 = f(s + h * k3[0], i + h * k3[1], r + h * k3[2], p + h * k3[3])
        b = h / 6.0
        s += b * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        i += b * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        r += b * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        p += b * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        ys[k + 1] = (s, i, r, p)
    ds[n] = f(s, i, r, p)
    if not np.all(np.isfinite(ys)):
        raise IntegrationError(f"state diverged on [{t0}, {t1}]; reduce the step")
    times = t0 + h * np.arange(n + 1)
    times[-1] = t1
    return times, ys, ds


def _resample(times, ys, ds):
    span = times[-1] - times[0]
    if len(times) >= MIN_SAMPLES_PER_PHASE + 1:
        return times, ys
    if span <= 4 * MIN_SAMPLES_PER_PHASE * np.spacing(max(abs(times[-1]), 1.0)):
        # a phase below float resolution cannot be subdivided meaningfully
        return times, ys
    grid = np.linspace(times[0], times[-1], MIN_SAMPLES_PER_PHASE + 1)
    return grid, CubicHermiteSpline(times, ys, ds, axis=0)(grid)


def default_step(params: EpidemicParams) -> float:
    """Step giving ``lambda * h = 0.02``; comfortably below 1e-6 global error."""
    return 0.02 / params.meeting_rate


def integrate(rhs: RhsSpec, t_end: float, step: float | None = None) -> Trajectory:
    """Integrate from ``(1 - I0, I0, 0)`` with ``P(0) = 0`` up to ``t_end``.

    ``step`` is the RK4 step size (the local error per step scales as
    ``step**5``); it defaults to :func:`default_step`.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if step is None:
        step = default_step(rhs.params)
    if not step > 0:
        raise ValueError("step must be positive")
    params = rhs.params
    lam = params.meeting_rate
    i0 = params.initial_infected_fraction
    y = (1.0 - i0, i0, 0.0, 0.0)
    scheme = rhs.scheme

    pieces = []
    if isinstance(scheme, GlobalTimeout):
        t_break = min(scheme.t_g, t_end)
        if t_break > 0:
            pieces.append(_resample(*_rk4_phase(_infection_rhs(lam), y, 0.0, t_break, step)))
            y = tuple(pieces[-1][1][-1])
        else:
            pieces.append((np.array([0.0]), np.array([y])))
        if scheme.t_g < t_end:
            s, i, r, p = y
            # every carrier drops the packet at once; nothing moves afterwards
            grid = np.linspace(scheme.t_g, t_end, MIN_SAMPLES_PER_PHASE + 1)
            pieces.append((grid, np.tile([s, 0.0, r + i, p], (len(grid), 1))))
    elif isinstance(scheme, Antipacket):
        t_break = min(scheme.t_d, t_end)
        if t_break > 0:
            pieces.append(_resample(*_rk4_phase(_infection_rhs(lam), y, 0.0, t_break, step)))
            y = tuple(pieces[-1][1][-1])
        if scheme.t_d < t_end:
            f = _antipacket_rhs(lam, scheme.kappa, params.n_relays)
            times, ys = _resample(*_rk4_phase(f, y, scheme.t_d, t_end, step))
            if pieces:
                # continuous switch: drop the duplicated boundary sample
                times, ys = times[1:], ys[1:]
            pieces.append((times, ys))
    else:
        raise TypeError(f"unknown scheme {scheme!r}")

    times = np.concatenate([p[0] for p in pieces])
    ys = np.concatenate([p[1] for p in pieces])
    if not np.all(np.isfinite(ys)) or ys.min() < -STATE_SLACK or ys.max() > 1.0 + STATE_SLACK:
        raise IntegrationError(
            f"state left [0, 1]: min {ys.min():.3g}, max {ys.max():.3g}; reduce the step"
        )
    return Trajectory(times, ys[:, 0], ys[:, 1], ys[:, 2], ys[:, 3], params)


def extinction_time(traj: Trajectory, threshold: float | None = None) -> float:
    """First sample time with ``I <= threshold`` (default ``1/(2N)``), else the final time."""
    if threshold is None:
        threshold = 0.5 / traj.params.n_relays
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    hit = np.flatnonzero(traj.i <= threshold)
    return float(traj.times[hit[0]]) if hit.size else traj.final_time


def buffer_integral(traj: Trajectory, n: int, t_end: float | None = None) -> float:
    """``N int_0^{t_end} I dt`` by the trapezoidal rule over the samples."""
    t = traj.times
    if t_end is None:
        t_end = traj.final_time
    if t_end > traj.final_time + 1e-12:
        raise ValueError("t_end is beyond the trajectory")
    k = int(np.searchsorted(t, t_end, side="right"))
    total = float(trapezoid(traj.i[:k], t[:k])) if k > 1 else 0.0
    if k < len(t) and t_end > t[k - 1]:
        # partial last interval, linear in the same spirit as the trapezoid
        frac = (t_end - t[k - 1]) / (t[k] - t[k - 1])
        i_end = traj.i[k - 1] + frac * (traj.i[k] - traj.i[k - 1])
        total += 0.5 * (traj.i[k - 1] + i_end) * (t_end - t[k - 1])
    return n * total
