from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from optseq.env import (OBS_DIM, Action, EnvConfig, InitRegion, States, SurrogateEnv, ViolationKind,
                        WorldState)
from optseq.errors import ConfigurationError, ContractError
from optseq.geometry import Pose, quat_from_axis_angle


def world(ee=(0.0, 0.0, 0.3), cup=(0.0, 0.0, 0.0), aperture=1.0, attached=False, context=0, cup_q=None):
    return WorldState(ee=Pose(ee), gripper_aperture=aperture, attached=attached,
                      cup=Pose(cup, [1, 0, 0, 0] if cup_q is None else cup_q),
                      target_position=np.array([0.2, 0.15, 0.0]), table_z=0.0, context=context)


POINT = InitRegion(cup_xy_low=(0.1, -0.1), cup_xy_high=(0.1, -0.1), ee_anchor="world",
                   ee_low=(0.0, 0.1, 0.3), ee_high=(0.0, 0.1, 0.3), contexts=(1,))


# -- reset -----------------------------------------------------------------
def test_reset_point_region_is_exact(env):
    s = env.reset(POINT, 7)
    assert np.array_equal(s.ee.position, [0.0, 0.1, 0.3])
    assert np.array_equal(s.cup.position, [0.1, -0.1, 0.0])
    assert s.gripper_aperture == 1.0 and not s.attached and s.context == 1


def test_reset_is_deterministic(env):
    region = InitRegion(cup_xy_low=(-0.2, -0.2), cup_xy_high=(0.2, 0.2), ee_low=(-0.1, -0.1, 0.1),
                        ee_high=(0.1, 0.1, 0.2), yaw_low=-30, yaw_high=30)
    assert env.reset(region, 123) == env.reset(region, 123)
    assert not env.reset(region, 123) == env.reset(region, 124)


def test_reset_samples_uniformly(env):
    region = InitRegion(cup_xy_low=(-0.2, 0.0), cup_xy_high=(0.2, 0.0))
    xs = env.reset_batch(region, np.random.default_rng(0), 1000).cup_pos[:, 0]
    assert abs(xs.mean()) <= 0.02
    assert xs.min() >= -0.2 and xs.max() <= 0.2


@pytest.mark.parametrize("region", [
    InitRegion(cup_xy_low=(0.1, 0.0), cup_xy_high=(0.0, 0.0)),
    InitRegion(ee_anchor="world", ee_low=(0, 0, 2.0), ee_high=(0, 0, 2.0)),
    InitRegion(contexts=()),
])
def test_reset_rejects_bad_regions(env, region):
    with pytest.raises(ConfigurationError):
        env.reset(region, 0)


# -- step ------------------------------------------------------------------
def test_zero_action_is_identity(env):
    s = world()
    nxt, v = env.step(s, Action(gripper_command=1.0))
    assert nxt == s and v is None


def test_open_gripper_sweep_tips_cup(env):
    s = world(ee=(-0.08, 0.0, 0.05))
    kinds = []
    for _ in range(3):
        s, v = env.step(s, Action(delta_position=np.array([0.05, 0.0, 0.0])))
        kinds.append(v)
    assert ViolationKind.CUP_HORIZONTAL in kinds


def test_open_gripper_above_rim_does_not_tip(env):
    s = world(ee=(-0.08, 0.0, 0.15))
    for _ in range(4):
        s, v = env.step(s, Action(delta_position=np.array([0.05, 0.0, 0.0])))
        assert v is None


def test_carrying_past_table_edge_is_off_table(env):
    s = world(ee=(0.0, 0.0, 0.26), cup=(0.0, 0.0, 0.2), aperture=0.0, attached=True)
    seen = None
    for _ in range(25):
        s, v = env.step(s, Action(delta_position=np.array([0.05, 0, 0]), gripper_command=0.0))
        if v is not None:
            seen = v
            break
    assert seen is ViolationKind.CUP_OFF_TABLE
    assert s.cup.position[0] - 0.4 > 0.4


def test_gripper_moves_at_most_a_quarter_per_step(env):
    s, _ = env.step(world(), Action(gripper_command=0.0))
    assert s.gripper_aperture == pytest.approx(0.75)


def test_grasp_attaches_and_cup_follows(env):
    s = world(ee=(0.0, 0.0, 0.06))
    for _ in range(3):
        s, _ = env.step(s, Action(gripper_command=0.0))
    assert s.attached
    s, _ = env.step(s, Action(delta_position=np.array([0, 0, 0.05]), gripper_command=0.0))
    assert s.cup.position[2] == pytest.approx(0.05)


def test_release_from_height_tips_cup(env):
    s = world(ee=(0.0, 0.0, 0.36), cup=(0.0, 0.0, 0.3), aperture=0.0, attached=True)
    s, v = env.step(s, Action(gripper_command=1.0))
    assert s.attached and v is None  # 0.25 open is still a grip
    s, v = env.step(s, Action(gripper_command=1.0))
    assert not s.attached and s.cup.position[2] == 0.0
    assert v is ViolationKind.CUP_HORIZONTAL


# -- violations ------------------------------------------------------------
def test_violation_examples(env):
    assert env.check_violations(world()) == []
    tipped = quat_from_axis_angle([math.pi / 2, 0, 0])
    assert env.check_violations(world(cup_q=tipped)) == [ViolationKind.CUP_HORIZONTAL]
    assert env.check_violations(world(ee=(0, 0, -0.01))) == [ViolationKind.COLLISION]


# -- observation -----------------------------------------------------------
def test_observation_layout(env):
    s = world(ee=(0.1, 0.2, 0.3), cup=(0.4, 0.5, 0.0), aperture=0.5, context=-1)
    expected = [0.1, 0.2, 0.3, 1, 0, 0, 0, 0.5, 0.4, 0.5, 0.0, 0.2, 0.15, 0.0, 0.0, -1]
    assert env.observe(s).shape == (OBS_DIM,)
    assert np.array_equal(env.observe(s), expected)


def test_context_only_changes_last_entry(env):
    diff = env.observe(world(context=1)) != env.observe(world(context=-1))
    assert np.flatnonzero(diff).tolist() == [15]


def test_observe_point_reset_round_trip(env):
    o = env.observe(env.reset(POINT, 0))
    assert np.array_equal(o[:3], [0.0, 0.1, 0.3]) and np.array_equal(o[8:11], [0.1, -0.1, 0.0])


def test_world_state_validation():
    with pytest.raises(ContractError):
        world(aperture=1.5)
    with pytest.raises(ContractError):
        world(context=2)


# -- properties ------------------------------------------------------------
coord = st.floats(-0.3, 0.3, allow_nan=False)
actions = st.lists(st.floats(-1, 1, allow_nan=False), min_size=7, max_size=7).map(np.array)


@st.composite
def states(draw):
    cup = (draw(coord), draw(coord), 0.0)
    near = draw(st.booleans())
    off = np.array([draw(st.floats(-0.05, 0.05)) for _ in range(3)])
    ee = np.array(cup) + [0, 0, 0.06] + off if near else np.array([draw(coord), draw(coord),
                                                                    draw(st.floats(0.0, 0.5))])
    return world(ee=tuple(ee), cup=cup, aperture=draw(st.floats(0, 1)), context=draw(st.sampled_from([-1, 0, 1])))


@given(states(), actions)
def test_step_is_pure_and_clamp_idempotent(s, a):
    env = SurrogateEnv()
    act = Action.from_array(a * 0.3)
    first = env.step(s, act)
    assert first[0] == env.step(s, act)[0] and first[1] == env.step(s, act)[1]
    clamped = env.clamp(act)
    assert env.step(s, clamped)[0] == first[0]
    assert np.array_equal(env.clamp(clamped).as_array(), clamped.as_array())


@given(states(), actions)
def test_quaternions_stay_unit(s, a):
    nxt, _ = SurrogateEnv().step(s, Action.from_array(a))
    assert abs(np.linalg.norm(nxt.ee.orientation) - 1) < 1e-9
    assert abs(np.linalg.norm(nxt.cup.orientation) - 1) < 1e-9


@given(states(), actions)
def test_attachment_needs_closed_gripper_within_radius(s, a):
    env = SurrogateEnv()
    nxt, _ = env.step(s, Action.from_array(a))
    if nxt.attached and not s.attached:
        b = States.from_worlds([nxt])
        assert nxt.gripper_aperture < env.config.grasp_threshold
        assert np.linalg.norm(b.ee_pos[0] - env.grasp_points(b)[0]) <= env.config.grasp_radius


@given(states(), actions)
def test_returned_violation_matches_check(s, a):
    env = SurrogateEnv()
    nxt, v = env.step(s, Action.from_array(a))
    kinds = env.check_violations(nxt)
    assert v == (kinds[0] if kinds else None)


def test_batch_and_scalar_steps_agree(env):
    rng = np.random.default_rng(1)
    region = InitRegion(cup_xy_low=(-0.2, -0.2), cup_xy_high=(0.2, 0.2), ee_low=(-0.05, -0.05, -0.02),
                        ee_high=(0.05, 0.05, 0.1), aperture_low=0.0)
    batch = env.reset_batch(region, rng, 40)
    acts = rng.uniform(-0.1, 1, size=(40, 7))
    nxt, _ = env.step_batch(batch, acts)
    for i, w in enumerate(batch.worlds()):
        assert env.step(w, Action.from_array(acts[i]))[0] == nxt.world(i)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        EnvConfig(workspace_low=(0, 0, 1), workspace_high=(1, 1, 0.5))
    with pytest.raises(ConfigurationError):
        EnvConfig(grasp_threshold=1.5)
