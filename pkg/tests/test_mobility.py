import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from epiroute import mobility as mb
from epiroute.mobility import Fleet, MobilitySpec, Model, NodeKinematics

RWP = MobilitySpec(model=Model.RWP)
RD = MobilitySpec(model=Model.RD)
L = RWP.side_length


# -- meeting rates ----------------------------------------------------------------


def test_rwp_rate_examples():
    assert mb.meeting_rate_rwp(RWP, 8.7) == pytest.approx(0.37043, abs=1e-4)
    double = MobilitySpec(model=Model.RWP, side_length=2 * L)
    assert mb.meeting_rate_rwp(double, 8.7) == pytest.approx(mb.meeting_rate_rwp(RWP, 8.7) / 4)
    four = MobilitySpec(model=Model.RWP, side_length=4.0)
    assert mb.meeting_rate_rwp(four, 8.7) == pytest.approx(0.14880, abs=1e-5)


def test_rd_rate_examples():
    assert mb.meeting_rate_rd(RD, 9.2) == pytest.approx(0.28628, abs=1e-5)
    four = MobilitySpec(model=Model.RD, side_length=4.0)
    assert mb.meeting_rate_rd(four, 9.2) == pytest.approx(0.11500, abs=1e-5)
    wide = MobilitySpec(model=Model.RD, tx_range=0.2)
    assert mb.meeting_rate_rd(wide, 9.2) == pytest.approx(2 * mb.meeting_rate_rd(RD, 9.2))


def test_rate_errors():
    with pytest.raises(ValueError):
        mb.meeting_rate_rwp(RD, 8.7)
    with pytest.raises(ValueError):
        mb.meeting_rate_rd(RWP, 9.2)
    with pytest.raises(ValueError):
        mb.meeting_rate_rwp(RWP, 0.0)
    with pytest.raises(ValueError):
        mb.meeting_rate_rd(RD, -1.0)


def test_pairwise_rate_defaults_to_published_speed():
    assert mb.pairwise_meeting_rate(RWP) == mb.meeting_rate_rwp(RWP, 8.7)
    assert mb.pairwise_meeting_rate(RD) == mb.meeting_rate_rd(RD, 9.2)


@given(
    st.floats(0.5, 20.0),
    st.floats(0.01, 0.2),
    st.floats(0.5, 30.0),
    st.floats(1.1, 4.0),
)
def test_rates_homogeneous(side, r, v, c):
    for model, fn in ((Model.RWP, mb.meeting_rate_rwp), (Model.RD, mb.meeting_rate_rd)):
        base = MobilitySpec(model=model, side_length=side, tx_range=r)
        rate = fn(base, v)
        assert fn(base, c * v) == pytest.approx(c * rate)
        if c * r < side / 2:
            assert fn(MobilitySpec(model=model, side_length=side, tx_range=c * r), v) == pytest.approx(c * rate)
        assert fn(MobilitySpec(model=model, side_length=c * side, tx_range=r), v) == pytest.approx(rate / c**2)
        unit_omega = MobilitySpec(model=Model.RWP, side_length=side, tx_range=r, waypoint_constant=1.0)
        rd = MobilitySpec(model=Model.RD, side_length=side, tx_range=r)
        assert mb.meeting_rate_rwp(unit_omega, v) == pytest.approx(mb.meeting_rate_rd(rd, v))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(side_length=0.0),
        dict(tx_range=0.0),
        dict(tx_range=2.0),
        dict(v_min=5.0, v_max=4.0),
        dict(v_min=-1.0),
        dict(leg_duration=0.0),
        dict(waypoint_constant=0.0),
        dict(boundary="sphere"),
    ],
)
def test_spec_invariants(kwargs):
    with pytest.raises(ValueError):
        MobilitySpec(**kwargs)


def test_spec_time_unit_conversion():
    minutes = RD.in_time_unit(1 / 60)
    assert minutes.v_max == pytest.approx(10 / 60)
    assert minutes.rd_leg == pytest.approx(RD.rd_leg * 60)


# -- relative speed ---------------------------------------------------------------


def test_relative_speed_constant_speed_rd():
    spec = MobilitySpec(model=Model.RD, v_min=5.0, v_max=5.0)
    # quadrature oracle: |v1 - v2| = 2 v |sin(phi / 2)| averaged over phi
    oracle = integrate.quad(lambda phi: 2 * 5.0 * abs(math.sin(phi / 2)), 0, 2 * np.pi)[0] / (2 * np.pi)
    assert oracle == pytest.approx(4 / np.pi * 5.0, rel=1e-6)
    assert mb.estimate_relative_speed(spec, seed=3) == pytest.approx(oracle, rel=0.01)


def test_relative_speed_static_nodes():
    for model in Model:
        assert mb.estimate_relative_speed(MobilitySpec(model=model, v_min=0.0, v_max=0.0)) == 0.0


def test_relative_speed_rd_matches_published():
    assert mb.estimate_relative_speed(RD, seed=1) == pytest.approx(9.2, rel=0.05)


def test_relative_speed_rwp_near_published():
    assert mb.estimate_relative_speed(RWP, seed=1) == pytest.approx(8.7, rel=0.05)


def test_relative_speed_deterministic_and_validated():
    assert mb.estimate_relative_speed(RD, 5000, seed=9) == mb.estimate_relative_speed(RD, 5000, seed=9)
    with pytest.raises(ValueError):
        mb.estimate_relative_speed(RD, samples=999)


# -- kinematics ------------------------------------------------------------------


def test_advance_wraps_on_torus():
    dt = 0.01
    node = NodeKinematics((L - 0.5 * dt, 1.0), (1.0, 0.0), 10.0)
    out = mb.advance(node, RD, dt, np.random.default_rng(0))
    assert out.position[0] == pytest.approx((L - 0.5 * dt + dt) % L)
    assert out.position[1] == pytest.approx(1.0)
    assert out.velocity == (1.0, 0.0)


def test_advance_leg_end_is_continuous():
    node = NodeKinematics((1.0, 1.0), (3.0, 4.0), 0.1)
    out = mb.advance(node, RD, 0.1, np.random.default_rng(0))
    assert out.position == pytest.approx((1.3, 1.4))
    assert out.velocity != (3.0, 4.0)
    assert RD.v_min <= math.hypot(*out.velocity) <= RD.v_max
    assert out.leg_remaining == pytest.approx(RD.rd_leg)


def test_advance_consumes_residual_time():
    # leg ends halfway through the step; the rest is spent on the new leg
    node = NodeKinematics((1.0, 1.0), (4.0, 0.0), 0.05)
    rng = np.random.default_rng(5)
    out = mb.advance(node, RD, 0.1, rng)
    assert out.leg_remaining == pytest.approx(RD.rd_leg - 0.05)
    moved = np.array(out.position) - np.array((1.2, 1.0))
    assert math.hypot(*mb.torus_delta((0, 0), moved, L)) == pytest.approx(0.05 * math.hypot(*out.velocity))


@pytest.mark.parametrize("spec", [RWP, RD, MobilitySpec(model=Model.RWP, boundary="torus")])
def test_fleet_speed_bounds_and_positions(spec):
    rng = np.random.default_rng(11)
    fleet = Fleet.spawn(spec, 50, rng)
    for _ in range(400):
        before = fleet.velocities.copy()
        rem = fleet.remaining.copy()
        fleet.advance(0.01, rng)
        assert np.all((fleet.positions >= 0) & (fleet.positions < spec.side_length))
        speed = np.hypot(fleet.velocities[:, 0], fleet.velocities[:, 1])
        assert np.all((speed >= spec.v_min - 1e-9) & (speed <= spec.v_max + 1e-9))
        same_leg = rem > 0.01
        assert np.array_equal(before[same_leg], fleet.velocities[same_leg])


def _position_chi2(spec, seed=21):
    rng = np.random.default_rng(seed)
    fleet = Fleet.spawn(spec, 100, rng)
    for _ in range(200):
        fleet.advance(0.01, rng)
    samples = []
    for _ in range(100):
        for _ in range(50):
            fleet.advance(0.01, rng)
        samples.append(fleet.positions.copy())
    pos = np.concatenate(samples)
    counts, _, _ = np.histogram2d(pos[:, 0], pos[:, 1], bins=8, range=[[0, spec.side_length]] * 2)
    return stats.chisquare(counts.ravel()).pvalue


def test_rwp_torus_positions_uniform():
    assert _position_chi2(MobilitySpec(model=Model.RWP, boundary="torus")) > 0.05


def test_rwp_square_positions_concentrate_in_centre():
    # the non-uniform stationary density behind the waypoint constant
    assert _position_chi2(RWP) < 1e-6


def test_in_contact_examples():
    a = NodeKinematics((1.0, 1.0), (0.0, 0.0), 1.0)
    assert mb.in_contact(a, a, RD)
    near_edge = NodeKinematics((0.01, 0.0), (0.0, 0.0), 1.0)
    other_side = NodeKinematics((L - 0.01, 0.0), (0.0, 0.0), 1.0)
    assert mb.in_contact(near_edge, other_side, RD)
    assert not mb.in_contact(near_edge, other_side, RWP)  # bounded square does not wrap
    exact = NodeKinematics((0.0, 0.0), (0.0, 0.0), 1.0), NodeKinematics((0.1, 0.0), (0.0, 0.0), 1.0)
    assert mb.in_contact(*exact, RD)


coord = st.floats(0.0, L, exclude_max=True)


@given(coord, coord, coord, coord, st.sampled_from([(1, 0), (0, 1), (-1, 0), (1, 1)]))
def test_in_contact_symmetric_and_periodic(x1, y1, x2, y2, shift):
    a = NodeKinematics((x1, y1), (0, 0), 1.0)
    b = NodeKinematics((x2, y2), (0, 0), 1.0)
    moved = NodeKinematics((x2 + shift[0] * L, y2 + shift[1] * L), (0, 0), 1.0)
    assert mb.in_contact(a, b, RD) == mb.in_contact(b, a, RD)
    d = float(np.hypot(*mb.torus_delta((x1, y1), (x2, y2), L)))
    if abs(d - RD.tx_range) > 1e-9:
        assert mb.in_contact(a, b, RD) == mb.in_contact(a, moved, RD)


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_contact_matrix_matches_pairwise(seed):
    rng = np.random.default_rng(seed)
    spec = MobilitySpec(model=Model.RD, tx_range=0.6)
    fleet = Fleet.spawn(spec, 12, rng)
    m = fleet.contact_matrix()
    for i in range(12):
        for j in range(12):
            expected = i < j and mb.in_contact(fleet.node(i), fleet.node(j), spec)
            assert m[i, j] == expected


def test_inter_meeting_times_rd_rate():
    gaps = mb.inter_meeting_times(RD, pairs=32, duration=40.0, dt=0.002, seed=3, warmup=1.0)
    assert gaps.size > 250
    assert 1 / gaps.mean() == pytest.approx(mb.pairwise_meeting_rate(RD), rel=0.15)
