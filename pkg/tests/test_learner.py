from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from conftest import scripted, scripted_option
from optseq.env import InitRegion, SurrogateEnv, ViolationKind, WorldState
from optseq.errors import ConfigurationError, PreconditionError
from optseq.geometry import Pose
from optseq.harness import EvalProtocol, measure_success
from optseq.learner import (FEATURE_DIM, GOAL_FEATURES, HandoffSource, Objective, Policy, RegionSource,
                            StatesSource, TrainConfig, evaluate_policy, raw_features, rollout, train_option)
from optseq.scenario import Scenario, offset_regions
from optseq.sets import sample_result_set

REGIONS = offset_regions()
SMALL = TrainConfig(population=8, episodes_per_member=2, eval_episodes=4, max_env_steps=3000)


class CountingEnv(SurrogateEnv):
    """Counts every simulated environment step."""

    steps = 0

    def step_batch(self, s, actions):
        self.steps += len(s)
        return super().step_batch(s, actions)


# -- policy ----------------------------------------------------------------
def test_zero_policy_holds_still(env):
    p = Policy.zeros(env, gripper_hold=1.0)
    obs = env.observe(env.reset(REGIONS["reach"], 0))
    assert np.array_equal(p.act(obs), [0, 0, 0, 0, 0, 0, 1.0])


def test_params_round_trip(env):
    p = Policy.zeros(env)
    theta = np.random.default_rng(0).normal(size=p.params.size)
    assert np.array_equal(p.with_params(theta).params, theta)


def test_goal_features(env):
    obs = env.observe_batch(env.reset_batch(REGIONS["reach"], np.random.default_rng(0), 5))
    assert np.all(raw_features(obs)[:, GOAL_FEATURES] == 0)
    goal = np.concatenate([obs[0, :3], obs[0, 3:7]])
    f = raw_features(obs, goal)
    assert f.shape == (5, FEATURE_DIM)
    assert np.allclose(f[0, GOAL_FEATURES], 0.0)
    assert np.allclose(f[1:, 22:25], obs[0, :3] - obs[1:, :3])


def test_goal_conditioning_sets_scale(env):
    g = Policy.zeros(env).with_goal(Pose([0.1, 0.0, 0.2]))
    assert np.array_equal(g.obs_std[GOAL_FEATURES], g.action_scale[:6])
    assert np.all(g.obs_mean[GOAL_FEATURES] == 0) and g.goal is not None
    assert not g.equals(Policy.zeros(env))


def test_actions_are_clamped_before_use(env, seq):
    wild = Policy.zeros(env).with_params(np.full(Policy.zeros(env).params.size, 50.0))
    s = env.reset(REGIONS["reach"], 1)
    traj = rollout(env, seq[0], wild, s, 3)
    for a in traj.actions:
        assert np.all(np.abs(a[:3]) <= env.config.max_delta_position + 1e-15)
        assert 0.0 <= a[6] <= 1.0


# -- rollout ---------------------------------------------------------------
def test_rollout_from_terminal_state_is_empty(env, seq):
    s = WorldState(Pose([0, 0, 0.06]), 1.0, False, Pose([0, 0, 0]), np.array([0.2, 0.15, 0]))
    traj = rollout(env, seq[0], Policy.zeros(env), s)
    assert len(traj) == 0 and traj.terminal_flag


def test_rollout_truncates_at_violation(env, seq):
    s = WorldState(Pose([0, 0, 0.3]), 1.0, False, Pose([0.3, 0.3, 0]), np.array([0.2, 0.15, 0]))
    down = Policy.zeros(env, gripper_hold=1.0)
    down.bias[2] = -1.0  # straight down at full speed
    traj = rollout(env, seq[0], down, s)
    assert traj.violation is ViolationKind.COLLISION and not traj.terminal_flag
    assert len(traj) == 7 and traj.rewards[-1] == 0.0


def test_rollout_checks_init(env, seq):
    s = WorldState(Pose([0, 0, 0.3]), 1.0, False, Pose([0.3, 0.3, 0]), np.array([0.2, 0.15, 0]))
    with pytest.raises(PreconditionError) as err:
        rollout(env, seq[1], Policy.zeros(env), s)
    assert err.value.predicate == "at_cup"


def test_grasp_rollouts_agree_with_pair_success(env, seq):
    reach, grasp = scripted_option(seq[0], REGIONS["reach"]), scripted_option(seq[1], REGIONS["grasp"])
    results = sample_result_set(env, reach, 50, seed=0)
    handed = [rollout(env, seq[1], grasp.policy, WorldState(
        Pose(results.positions[i], results.orientations[i]), float(results.gripper[i]), False,
        Pose(results.positions[i] - [0, 0, 0.06]), np.array([0.2, 0.15, 0.0]))) for i in range(len(results))]
    rate = np.mean([t.terminal_flag for t in handed])
    pair = measure_success(env, [reach, grasp], EvalProtocol(5, 10))
    assert rate == pair.pooled == 1.0


# -- evaluation ------------------------------------------------------------
def test_scripted_policy_always_terminates(env, seq):
    point = InitRegion(cup_xy_low=(0.1, 0.1), cup_xy_high=(0.1, 0.1), ee_low=(0, 0, 0.1), ee_high=(0, 0, 0.1))
    rate, ret = evaluate_policy(env, seq[0], scripted("reach"), RegionSource(point), 10, seed=0)
    assert rate == 1.0 and ret > 990


def test_idle_policy_never_terminates(env, seq):
    rate, _ = evaluate_policy(env, seq[0], Policy.zeros(env, gripper_hold=1.0), RegionSource(REGIONS["reach"]),
                              10, seed=0)
    assert rate == 0.0
    with pytest.raises(ConfigurationError):
        evaluate_policy(env, seq[0], Policy.zeros(env), RegionSource(REGIONS["reach"]), 0, seed=0)


def test_goal_objective_needs_term_and_distance(env, seq):
    goal = Pose([0.0, 0.0, 0.06])
    obj = Objective(seq[0], goal, 0.01)
    s = env.reset_batch(InitRegion(), np.random.default_rng(0), 1)
    assert obj.done(s)[0]
    s.ee_pos[0, 0] += 0.015  # still within reach tolerance, but not the goal
    assert seq[0].term.batch(s)[0] and not obj.done(s)[0]
    assert obj.reward_floor == -10.0


# -- training --------------------------------------------------------------
def test_zero_budget(env, seq):
    t = train_option(env, seq[0], RegionSource(REGIONS["reach"]), replace(SMALL, max_env_steps=0), 0)
    assert not t.converged and t.steps_used == 0


def test_training_is_seed_deterministic(env, seq):
    a = train_option(env, seq[0], RegionSource(REGIONS["reach"]), SMALL, 11)
    b = train_option(env, seq[0], RegionSource(REGIONS["reach"]), SMALL, 11)
    c = train_option(env, seq[0], RegionSource(REGIONS["reach"]), SMALL, 12)
    assert a.policy.equals(b.policy) and np.array_equal(a.origin_log, b.origin_log)
    assert a.steps_used == b.steps_used and a.history == b.history
    assert not a.policy.equals(c.policy)


def test_budget_accounting_is_exact(seq):
    env = CountingEnv()
    cfg = replace(SMALL, elitist_min_success=0.0, confirm_episodes=3, success_rate_threshold=0.25)
    t = train_option(env, seq[1], RegionSource(REGIONS["grasp"]), cfg, 0)
    assert t.steps_used == env.steps > 0


def test_best_member_never_decreases(env, seq):
    t = train_option(env, seq[0], RegionSource(REGIONS["reach"]), replace(SMALL, max_env_steps=20_000), 1)
    best = [h["best_member"] for h in t.history]
    assert len(best) > 2 and all(b1 >= b0 for b0, b1 in zip(best, best[1:]))


def test_origin_log_records_every_start(env, seq):
    t = train_option(env, seq[0], RegionSource(REGIONS["reach"]), SMALL, 0)
    per_iteration = SMALL.episodes_per_member + SMALL.eval_episodes
    assert len(t.origin_log) == per_iteration * len(t.history)
    assert len(t.origin_samples) == len(t.origin_log)


def test_source_must_satisfy_init(env, seq):
    with pytest.raises(ConfigurationError):
        train_option(env, seq[1], RegionSource(REGIONS["reach"]), SMALL, 0)


def test_reach_converges_within_budget(env, seq):
    cfg = replace(Scenario().train_config("reach"), max_env_steps=2_000_000)
    t = train_option(env, seq[0], RegionSource(REGIONS["reach"]), cfg, 0)
    assert t.converged and 0 < t.steps_used <= 2_000_000
    rate, _ = evaluate_policy(env, seq[0], t.policy, t.source, 200, seed=99)
    assert rate >= 0.9


def test_handoff_source_runs_predecessor(env, seq):
    reach = scripted_option(seq[0], REGIONS["reach"])
    src = HandoffSource(reach)
    s = src.sample(env, np.random.default_rng(0), 20)
    assert seq[1].init.batch(s).all() and src.steps > 0 and src.discard_rate == 0.0


def test_states_source_resamples_pool(env):
    pool = env.reset_batch(REGIONS["reach"], np.random.default_rng(0), 5).as_matrix()
    s = StatesSource(pool).sample(env, np.random.default_rng(1), 30)
    assert {tuple(r) for r in s.as_matrix()} <= {tuple(r) for r in pool}


@pytest.mark.parametrize("kw", [{"population": 1}, {"elite_fraction": 0.8}, {"success_rate_threshold": 0},
                                {"elitist_min_success": 2.0}, {"init_gripper_std": 0.0}, {"max_env_steps": -1}])
def test_train_config_validation(kw):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kw)
