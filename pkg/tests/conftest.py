from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from optseq.env import EnvConfig, InitRegion, SurrogateEnv
from optseq.learner import Policy, RegionSource, TrainedOption
from optseq.options import canonical_sequence

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def env() -> SurrogateEnv:
    return SurrogateEnv()


@pytest.fixture
def seq():
    return canonical_sequence()


class ScriptedPolicy(Policy):
    """A policy driven by a Python function of the observation batch."""

    def __init__(self, fn):
        base = Policy.zeros(SurrogateEnv())
        super().__init__(base.weights, base.bias, base.obs_mean, base.obs_std, base.action_scale,
                         base.action_offset)
        self.fn = fn

    def act_batch(self, obs):
        return self.fn(np.atleast_2d(obs))


def _toward(target, gripper):
    def fn(obs):
        out = np.zeros((len(obs), 7))
        out[:, :3] = target(obs) - obs[:, 0:3]
        out[:, 6] = gripper
        return out
    return fn


def scripted(name: str, cfg: EnvConfig | None = None) -> ScriptedPolicy:
    """Hand-written controllers that solve each option from its default region."""
    c = cfg or EnvConfig()
    grasp_pt = lambda o: o[:, 8:11] + np.array([0.0, 0.0, c.grasp_offset])
    if name == "reach":
        return ScriptedPolicy(_toward(grasp_pt, 1.0))
    if name == "grasp":
        return ScriptedPolicy(_toward(grasp_pt, 0.0))
    if name == "lift":
        return ScriptedPolicy(_toward(lambda o: o[:, 0:3] + np.array([0, 0, 0.05]), 0.0))
    if name == "carry":
        return ScriptedPolicy(_toward(
            lambda o: np.column_stack([o[:, 11:13], np.maximum(o[:, 2], c.lift_height + c.grasp_offset + 0.02)]),
            0.0))

    def place(obs):
        out = _toward(lambda o: np.column_stack([o[:, 11:13], o[:, 13] + c.grasp_offset]), 0.0)(obs)
        low = obs[:, 10] - obs[:, 13] <= 0.01
        out[low, 6] = 1.0
        return out
    return ScriptedPolicy(place)


def scripted_option(spec, region: InitRegion, n_log: int = 64, seed: int = 0) -> TrainedOption:
    """A converged option with a scripted policy and a recorded origin log."""
    src = RegionSource(region)
    log = src.sample(SurrogateEnv(spec.env_config), np.random.default_rng(seed), n_log).as_matrix()
    return TrainedOption(spec=spec, policy=scripted(spec.name, spec.env_config), source=src, origin_log=log,
                         steps_used=0, converged=True, seed=seed)


def linear_reach_policy(env: SurrogateEnv | None = None) -> Policy:
    """An exact linear reach controller: step by (grasp point - ee), gripper open."""
    env = env or SurrogateEnv()
    p = Policy.zeros(env, gripper_hold=1.0)
    std = p.obs_std.copy()
    std[16:19] = p.action_scale[:3]  # the cup - ee features
    p = Policy(p.weights, p.bias, p.obs_mean, std, p.action_scale, p.action_offset)
    for k in range(3):
        p.weights[k, 16 + k] = 1.0
    p.bias[2] = env.config.grasp_offset / p.action_scale[2]
    return p
