from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from optseq.env import Action, InitRegion, States, WorldState
from optseq.errors import ConfigurationError, ContractError
from optseq.geometry import Pose
from optseq.options import (OPTION_NAMES, OptionConfig, adaptation_reward, canonical_sequence, connected,
                            option_by_name, option_step_reward, shaped_reward)


def world(ee, cup=(0.0, 0.0, 0.0), aperture=1.0, attached=False, target=(0.2, 0.15, 0.0)):
    return WorldState(Pose(ee), aperture, attached, Pose(cup), np.array(target))


def test_sequence_order_and_shared_conditions(seq):
    assert [o.name for o in seq] == list(OPTION_NAMES)
    for a, b in zip(seq, seq[1:]):
        assert a.term is b.init
        assert connected(a, b)
    assert not connected(seq[0], seq[2])


def test_term_equals_next_init_on_random_states(seq, env):
    rng = np.random.default_rng(0)
    wide = InitRegion(cup_xy_low=(-0.4, -0.4), cup_xy_high=(0.4, 0.4), cup_z_high=0.3,
                      ee_low=(-0.05, -0.05, -0.05), ee_high=(0.05, 0.05, 0.05), aperture_low=0.0)
    states = env.reset_batch(wide, rng, 1000)
    states.attached[::2] = True
    for a, b in zip(seq, seq[1:]):
        assert np.array_equal(a.term.batch(states), b.init.batch(states))


def test_reach_term_at_grasp_point(seq):
    s = world((0.0, 0.0, 0.06))
    assert seq[0].term(s)
    assert not seq[0].term(world((0.0, 0.0, 0.06), aperture=0.5))


def test_place_term_needs_open_upright_cup_near_target(seq):
    place = seq[-1]
    assert place.term(world((0.2, 0.15, 0.06), cup=(0.2, 0.15, 0.0)))
    assert not place.term(world((0.2, 0.15, 0.06), cup=(0.2, 0.15, 0.0), aperture=0.0, attached=True))
    assert not place.term(world((0.2, 0.15, 0.1), cup=(0.2, 0.15, 0.05)))
    assert not place.term(world((0.3, 0.15, 0.06), cup=(0.3, 0.15, 0.0)))


def test_option_by_name():
    assert option_by_name("carry").name == "carry"
    with pytest.raises(ConfigurationError):
        option_by_name("pour")
    with pytest.raises(ConfigurationError):
        OptionConfig(reach_tolerance=0)


# -- rewards ---------------------------------------------------------------
def test_shaped_reward_examples():
    assert shaped_reward(0.0) == 0.0
    assert shaped_reward(10.0) == pytest.approx(-1.0, abs=1e-8)
    assert shaped_reward(0.5) == pytest.approx(-0.213553, abs=1e-6)
    for bad in (-0.1, math.inf, math.nan):
        with pytest.raises(ContractError):
            shaped_reward(bad)


def test_adaptation_reward_examples():
    g = Pose([0.1, 0.2, 0.3])
    assert adaptation_reward(g, g) == 0.0
    assert adaptation_reward(Pose([0.2, 0.2, 0.3]), g) == pytest.approx(-0.099336, abs=1e-5)
    flipped = Pose([0.1, 0.2, 0.3], [0, 1, 0, 0])
    assert adaptation_reward(flipped, g, 1.0) == pytest.approx(-5.80026, abs=1e-4)


@given(st.lists(st.floats(0, 50, allow_nan=False), min_size=2, max_size=30, unique=True))
def test_rewards_bounded_and_strictly_decreasing(ds):
    ds = sorted(ds)
    r = [shaped_reward(d) for d in ds]
    assert all(-1 <= x <= 0 for x in r)
    # tanh saturates in double precision, so strictness is checked where it is representable
    for (d0, r0), (d1, r1) in zip(zip(ds, r), zip(ds[1:], r[1:])):
        assert r1 <= r0
        if d1 < 5 and d1 - d0 > 1e-6:
            assert r1 < r0
    a = [adaptation_reward(Pose([d, 0, 0]), Pose([0, 0, 0])) for d in ds]
    assert all(-10 <= x <= 0 for x in a) and all(x1 <= x0 for x0, x1 in zip(a, a[1:]))


def test_step_reward_bonus_on_termination(seq, env):
    reach = seq[0]
    s = world((0.0, 0.0, 0.08))
    a = Action(delta_position=np.array([0, 0, -0.02]))
    s2, _ = env.step(s, a)
    out = option_step_reward(reach, s, a, s2)
    assert out.bonus == 1000.0 and out.shaped == pytest.approx(0.0, abs=1e-12) and not out.violated


def test_step_reward_zero_distance_without_term(seq, env):
    # ee exactly at the grasp point but the gripper is half closed
    s = world((0.0, 0.0, 0.06), aperture=0.5)
    a = Action(gripper_command=0.5)
    out = option_step_reward(seq[0], s, a, env.step(s, a)[0])
    assert out.shaped == 0.0 and out.bonus == 0.0


def test_step_reward_flags_violation(seq, env):
    s = world((0.0, 0.0, 0.01))
    a = Action(delta_position=np.array([0, 0, -0.05]))
    s2, v = env.step(s, a)
    assert v is not None and option_step_reward(seq[0], s, a, s2).violated


@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(0.0, 0.3), st.booleans())
def test_bonus_only_when_term_holds(x, y, z, attached):
    for spec in canonical_sequence():
        s = world((x, y, z + 0.06), cup=(x, y, z), aperture=0.0 if attached else 1.0, attached=attached)
        out = option_step_reward(spec, s, Action(), s)
        assert (out.bonus > 0) == spec.term(s)


def test_shaping_targets(seq):
    b = States.from_worlds([world((0.0, 0.0, 0.46), cup=(0.0, 0.0, 0.2), aperture=0.0)])
    assert seq[0].shaping_distance(b)[0] == pytest.approx(0.2)
    assert seq[2].shaping_distance(b)[0] == pytest.approx(0.05)
    assert seq[3].shaping_distance(b)[0] == pytest.approx(math.hypot(0.2, 0.15, 0.05))
    assert seq[4].shaping_distance(b)[0] == pytest.approx(math.hypot(0.2, 0.15, 0.2))
