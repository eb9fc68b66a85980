"""Derivative-free training of option policies.

The reference learner is a cross-entropy population search over a linear
policy acting on z-scored observations. Episodes are simulated in batches:
every population member is scored on the same start states each iteration.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from optseq.env import ACTION_DIM, InitRegion, States, SurrogateEnv, VIOLATION_ORDER, \
    ViolationKind, WorldState, as_states
from optseq.errors import ConfigurationError, PreconditionError, PredecessorQualityError
from optseq.geometry import Pose, quat_conjugate, quat_multiply
from optseq.metrics import DEFAULT_OMEGA_R, pose_distance_arrays
from optseq.options import TERMINAL_BONUS, OptionSpec, adaptation_reward_batch, shaped_reward_batch
from optseq.samples import SampleSet, SetKind

log = logging.getLogger(__name__)

FEATURE_SPEC = "rel-goal-zscore-clip10"
FEATURE_DIM = 28
# The last six features are goal - ee position and the rotation still needed to
# reach the goal orientation; both are zero when the policy has no goal.
GOAL_FEATURES = slice(22, 28)
FEATURE_CLIP = 10.0
STD_FLOOR = 0.05

GRIPPER_ROW = ACTION_DIM - 1

# Episode outcomes.
RUNNING, SUCCESS, VIOLATION, TIMEOUT = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------
@dataclass(eq=False)
class Policy:
    """Linear map from normalized observations to actions.

    The raw output ``u = W @ z + b`` is mapped to an action by
    ``action = action_offset + action_scale * u`` and then clamped by the
    environment.
    """

    weights: np.ndarray
    bias: np.ndarray
    obs_mean: np.ndarray
    obs_std: np.ndarray
    action_scale: np.ndarray
    action_offset: np.ndarray
    feature_spec: str = FEATURE_SPEC
    goal: np.ndarray | None = None  # position + orientation, 7 values

    def __post_init__(self) -> None:
        if self.goal is not None:
            self.goal = np.asarray(self.goal, dtype=float).reshape(7)
        self.weights = np.asarray(self.weights, dtype=float).reshape(ACTION_DIM, FEATURE_DIM)
        self.bias = np.asarray(self.bias, dtype=float).reshape(ACTION_DIM)
        self.obs_mean = np.asarray(self.obs_mean, dtype=float).reshape(FEATURE_DIM)
        self.obs_std = np.asarray(self.obs_std, dtype=float).reshape(FEATURE_DIM)
        self.action_scale = np.asarray(self.action_scale, dtype=float).reshape(ACTION_DIM)
        self.action_offset = np.asarray(self.action_offset, dtype=float).reshape(ACTION_DIM)

    @classmethod
    def zeros(cls, env: SurrogateEnv, obs_mean=None, obs_std=None, gripper_hold: float = 0.5) -> "Policy":
        """All-zero parameters: no motion, gripper commanded to ``gripper_hold``."""
        c = env.config
        scale = np.array([c.max_delta_position] * 3 + [c.max_delta_rotation / math.sqrt(3)] * 3 + [0.5])
        offset = np.array([0.0] * 6 + [gripper_hold])
        return cls(
            np.zeros((ACTION_DIM, FEATURE_DIM)), np.zeros(ACTION_DIM),
            np.zeros(FEATURE_DIM) if obs_mean is None else obs_mean,
            np.ones(FEATURE_DIM) if obs_std is None else obs_std,
            scale, offset,
        )

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.weights, self.bias[:, None]], axis=1).ravel()

    def with_params(self, theta: np.ndarray) -> "Policy":
        m = np.asarray(theta, dtype=float).reshape(ACTION_DIM, FEATURE_DIM + 1)
        return Policy(m[:, :FEATURE_DIM].copy(), m[:, FEATURE_DIM].copy(), self.obs_mean, self.obs_std,
                      self.action_scale, self.action_offset, self.feature_spec, self.goal)

    def with_goal(self, goal: Pose | None) -> "Policy":
        """Same parameters, conditioned on ``goal``.

        Goal features are scaled by the matching action scale and not
        centred, so a unit weight closes the remaining error in one step.
        """
        g = None if goal is None else np.concatenate([goal.position, goal.orientation])
        mean, std = self.obs_mean.copy(), self.obs_std.copy()
        mean[GOAL_FEATURES] = 0.0
        std[GOAL_FEATURES] = self.action_scale[:6]
        return Policy(self.weights.copy(), self.bias.copy(), mean, std, self.action_scale, self.action_offset,
                      self.feature_spec, g)

    def features(self, obs: np.ndarray) -> np.ndarray:
        z = (raw_features(obs, self.goal) - self.obs_mean) / self.obs_std
        return np.clip(z, -FEATURE_CLIP, FEATURE_CLIP)

    def act_batch(self, obs: np.ndarray) -> np.ndarray:
        u = self.features(obs) @ self.weights.T + self.bias
        return self.action_offset + self.action_scale * u

    def act(self, obs: np.ndarray) -> np.ndarray:
        return self.act_batch(obs)[0]

    def equals(self, other: "Policy") -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("weights", "bias", "obs_mean", "obs_std", "action_scale", "action_offset")
        ) and self.feature_spec == other.feature_spec and (
            (self.goal is None and other.goal is None)
            or (self.goal is not None and other.goal is not None and np.array_equal(self.goal, other.goal)))


def _goal_features(obs: np.ndarray, goal: np.ndarray | None) -> np.ndarray:
    if goal is None:
        return np.zeros((obs.shape[0], 6))
    dpos = goal[:3] - obs[:, 0:3]
    err = quat_multiply(np.broadcast_to(goal[3:], (obs.shape[0], 4)), quat_conjugate(obs[:, 3:7]))
    err = np.where(err[:, :1] < 0, -err, err)
    return np.concatenate([dpos, 2.0 * err[:, 1:]], axis=1)


def raw_features(obs: np.ndarray, goal: np.ndarray | None = None) -> np.ndarray:
    """The observation, cup - ee, target - cup, and the goal-relative features."""
    obs = np.atleast_2d(obs)
    return np.concatenate([obs, obs[:, 8:11] - obs[:, 0:3], obs[:, 11:14] - obs[:, 8:11],
                           _goal_features(obs, goal)], axis=1)


def fit_normalizer(obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and floored std of the raw features of ``obs`` (goal features
    are left at 0 and 1; :meth:`Policy.with_goal` sets their scale)."""
    f = raw_features(obs)
    mean, std = f.mean(axis=0), np.maximum(f.std(axis=0), STD_FLOOR)
    mean[GOAL_FEATURES], std[GOAL_FEATURES] = 0.0, 1.0
    return mean, std


# ---------------------------------------------------------------------------
# Objectives: what "done" means and what each step pays
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Objective:
    """Termination test and per-step reward for one option.

    Without a goal the option terminates on its TERM predicate and is shaped
    by ``-tanh(d)**2`` on its shaping distance. With a goal pose it terminates
    only when TERM holds *and* the ee is within ``tolerance`` of the goal, and
    is shaped by ``-10 tanh(pose_distance)**2``.
    """

    option: OptionSpec
    goal: Pose | None = None
    tolerance: float = 0.01
    omega_r: float = DEFAULT_OMEGA_R

    @property
    def reward_floor(self) -> float:
        return -10.0 if self.goal is not None else -1.0

    def goal_distance(self, s: States) -> np.ndarray:
        return pose_distance_arrays(s.ee_pos, s.ee_quat, self.goal.position, self.goal.orientation,
                                    self.omega_r)

    def done(self, s: States) -> np.ndarray:
        term = self.option.term.batch(s)
        if self.goal is None:
            return term
        return term & (self.goal_distance(s) <= self.tolerance)

    def shaped(self, s: States) -> np.ndarray:
        if self.goal is None:
            return shaped_reward_batch(self.option.shaping_distance(s))
        return adaptation_reward_batch(self.goal_distance(s))


# ---------------------------------------------------------------------------
# Batched simulation
# ---------------------------------------------------------------------------
@dataclass
class BatchResult:
    final: States
    status: np.ndarray
    steps: np.ndarray
    returns: np.ndarray
    violation: np.ndarray  # index into VIOLATION_ORDER, -1 when none

    @property
    def total_steps(self) -> int:
        return int(self.steps.sum())

    @property
    def success(self) -> np.ndarray:
        return self.status == SUCCESS


def simulate(env: SurrogateEnv, objective: Objective, act, starts: States, max_steps: int) -> BatchResult:
    """Run every start state until done, violation or ``max_steps``.

    ``act(obs, active_idx)`` returns actions for the active rows. A violating
    step earns nothing and truncates the episode. Start states that are
    already done finish with zero steps.
    """
    s = starts.copy()
    n = len(s)
    status = np.zeros(n, dtype=np.int8)
    steps = np.zeros(n, dtype=np.int64)
    returns = np.zeros(n)
    violation = np.full(n, -1, dtype=np.int8)
    status[objective.done(s)] = SUCCESS
    for _ in range(max_steps):
        active = np.flatnonzero(status == RUNNING)
        if active.size == 0:
            break
        cur = s.take(active)
        actions = act(env.observe_batch(cur), active)
        nxt, vmask = env.step_batch(cur, actions)
        s.assign(active, nxt)
        steps[active] += 1
        violated = vmask.any(axis=1)
        done = objective.done(nxt) & ~violated
        r = objective.shaped(nxt) + np.where(done, TERMINAL_BONUS, 0.0)
        r = np.where(violated, 0.0, r)
        returns[active] += r
        status[active[done]] = SUCCESS
        if violated.any():
            vi = active[violated]
            status[vi] = VIOLATION
            violation[vi] = np.argmax(vmask[violated], axis=1)
    status[status == RUNNING] = TIMEOUT
    return BatchResult(s, status, steps, returns, violation)


def training_fitness(res: BatchResult, objective: Objective, max_steps: int) -> np.ndarray:
    """Episode returns with violations charged the worst shaped reward for every
    step they cut short, so crashing early never beats trying."""
    cut = np.where(res.status == VIOLATION, max_steps - res.steps + 1, 0)
    return res.returns + objective.reward_floor * cut


def policy_actor(policy: Policy):
    return lambda obs, idx: policy.act_batch(obs)


# ---------------------------------------------------------------------------
# Start-state sources
# ---------------------------------------------------------------------------
class StartStateSource(Protocol):
    def sample(self, env: SurrogateEnv, rng: np.random.Generator, n: int) -> States: ...

    def describe(self) -> dict: ...


@dataclass
class RegionSource:
    region: InitRegion

    def sample(self, env: SurrogateEnv, rng: np.random.Generator, n: int) -> States:
        return env.reset_batch(self.region, rng, n)

    def describe(self) -> dict:
        return {"type": "region", "region": self.region.to_dict()}


@dataclass
class HandoffSource:
    """Start states reached by running a frozen predecessor to termination.

    Each draw resets into a state from the predecessor's recorded origin set
    and runs its policy. Failed predecessor rollouts are discarded and re-drawn. ``steps`` and
    ``attempts`` accumulate over the source's lifetime.
    """

    predecessor: "TrainedOption"
    min_success: float = 0.5
    max_steps: int | None = None
    steps: int = 0
    attempts: int = 0
    successes: int = 0

    def sample(self, env: SurrogateEnv, rng: np.random.Generator, n: int) -> States:
        parts: list[States] = []
        got = 0
        max_steps = self.max_steps or env.config.max_steps
        while got < n:
            want = n - got
            draw = int(math.ceil(want * 1.25)) + 2
            pool = self.predecessor.origin_log
            starts = States.from_matrix(pool[rng.integers(0, len(pool), size=draw)])
            res = simulate(env, self.predecessor.objective, policy_actor(self.predecessor.policy),
                           starts, max_steps)
            self.steps += res.total_steps
            self.attempts += draw
            ok = np.flatnonzero(res.success)
            self.successes += ok.size
            if self.attempts >= 20 and self.successes < self.min_success * self.attempts:
                raise PredecessorQualityError(
                    f"predecessor {self.predecessor.spec.name!r} succeeded in only "
                    f"{self.successes}/{self.attempts} seeding rollouts (< {self.min_success:.0%})",
                    predicate=self.predecessor.spec.term.name,
                )
            take = ok[:want]
            parts.append(res.final.take(take))
            got += take.size
        return States.concat(parts)

    @property
    def discard_rate(self) -> float:
        return 0.0 if self.attempts == 0 else 1.0 - self.successes / self.attempts

    def describe(self) -> dict:
        return {"type": "handoff", "predecessor": self.predecessor.spec.name,
                "min_success": self.min_success}


@dataclass
class StatesSource:
    """Resample (with replacement) from a fixed pool of start states."""

    pool: np.ndarray

    def sample(self, env: SurrogateEnv, rng: np.random.Generator, n: int) -> States:
        idx = rng.integers(0, len(self.pool), size=n)
        return States.from_matrix(self.pool[idx])

    def describe(self) -> dict:
        return {"type": "states", "size": int(len(self.pool))}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    population: int = 64
    elite_fraction: float = 0.1
    max_env_steps: int = 2_000_000
    eval_episodes: int = 20
    success_rate_threshold: float = 0.9
    noise_decay: float = 0.9
    episodes_per_member: int = 4
    init_std: float = 0.5
    init_gripper_std: float | None = None
    gripper_weight_fraction: float = 0.0
    elitist_min_success: float | None = None
    goal_weight_std: float = 0.5
    warm_start_std: float = 0.1
    min_std: float = 0.01
    calibration_states: int = 256
    max_steps: int | None = None
    confirm_episodes: int = 0

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ConfigurationError("population must be >= 2")
        if not 0 < self.elite_fraction <= 0.5:
            raise ConfigurationError("elite_fraction must lie in (0, 0.5]")
        if not 0 < self.success_rate_threshold <= 1:
            raise ConfigurationError("success_rate_threshold must lie in (0, 1]")
        if not 0 < self.noise_decay <= 1:
            raise ConfigurationError("noise_decay must lie in (0, 1]")
        if self.init_gripper_std is not None and not self.init_gripper_std > 0:
            raise ConfigurationError("init_gripper_std must be positive")
        if self.gripper_weight_fraction < 0:
            raise ConfigurationError("gripper_weight_fraction must be >= 0")
        if self.elitist_min_success is not None and not 0 <= self.elitist_min_success <= 1:
            raise ConfigurationError("elitist_min_success must lie in [0, 1]")
        if self.confirm_episodes < 0:
            raise ConfigurationError("confirm_episodes must be >= 0")
        if self.eval_episodes < 1 or self.episodes_per_member < 1:
            raise ConfigurationError("eval_episodes and episodes_per_member must be >= 1")
        if self.max_env_steps < 0:
            raise ConfigurationError("max_env_steps must be >= 0")

    @property
    def n_elite(self) -> int:
        return max(1, int(round(self.population * self.elite_fraction)))


@dataclass(eq=False)
class TrainedOption:
    spec: OptionSpec
    policy: Policy
    source: StartStateSource
    origin_log: np.ndarray = field(repr=False)
    steps_used: int = 0
    converged: bool = False
    seed: int = 0
    goal_pose: Pose | None = None
    goal_tolerance: float = 0.01
    omega_r: float = DEFAULT_OMEGA_R
    seeding_steps: int = 0
    history: list[dict] = field(default_factory=list, repr=False)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def objective(self) -> Objective:
        return Objective(self.spec, self.goal_pose, self.goal_tolerance, self.omega_r)

    @property
    def origin_samples(self) -> SampleSet:
        return SampleSet.from_state_matrix(SetKind.ORIGIN, self.spec.name, self.origin_log)


@dataclass
class Trajectory:
    states: list[WorldState]
    actions: list[np.ndarray]
    rewards: list[float]
    terminal_flag: bool
    violation: ViolationKind | None

    def __len__(self) -> int:
        return len(self.actions)


def rollout(env: SurrogateEnv, option: OptionSpec | Objective, policy: Policy, start_state: WorldState,
            max_steps: int | None = None) -> Trajectory:
    """Execute ``policy`` from ``start_state`` until TERM, violation or the step cap."""
    objective = option if isinstance(option, Objective) else Objective(option)
    spec = objective.option
    if not spec.init(start_state):
        raise PreconditionError(
            f"start state fails INIT of option {spec.name!r} ({spec.init.name})", predicate=spec.init.name)
    max_steps = env.config.max_steps if max_steps is None else max_steps
    s = as_states(start_state)
    states, actions, rewards = [start_state], [], []
    if objective.done(s)[0]:
        return Trajectory(states, actions, rewards, True, None)
    for _ in range(max_steps):
        a = env.clamp_actions(policy.act_batch(env.observe_batch(s)))
        s, vmask = env.step_batch(s, a)
        actions.append(a[0])
        states.append(s.world(0))
        if vmask[0].any():
            rewards.append(0.0)
            kind = VIOLATION_ORDER[int(np.argmax(vmask[0]))]
            return Trajectory(states, actions, rewards, False, kind)
        done = bool(objective.done(s)[0])
        rewards.append(float(objective.shaped(s)[0]) + (TERMINAL_BONUS if done else 0.0))
        if done:
            return Trajectory(states, actions, rewards, True, None)
    return Trajectory(states, actions, rewards, False, None)


def evaluate_policy(env: SurrogateEnv, option: OptionSpec | Objective, policy: Policy,
                    start: StartStateSource, episodes: int, seed: int,
                    max_steps: int | None = None) -> tuple[float, float]:
    """Success rate and mean return over ``episodes`` fresh starts."""
    if episodes < 1:
        raise ConfigurationError("episodes must be >= 1")
    objective = option if isinstance(option, Objective) else Objective(option)
    starts = start.sample(env, np.random.default_rng(seed), episodes)
    res = simulate(env, objective, policy_actor(policy), starts,
                   env.config.max_steps if max_steps is None else max_steps)
    return float(res.success.mean()), float(res.returns.mean())


def _check_source(env: SurrogateEnv, option: OptionSpec, source: StartStateSource, rng) -> States:
    probe = source.sample(env, rng, 32)
    ok = option.init.batch(probe)
    if not ok.all():
        raise ConfigurationError(
            f"start source produced {int((~ok).sum())}/32 states failing INIT of {option.name!r}")
    return probe


def train_option(env: SurrogateEnv, option: OptionSpec, start: StartStateSource, cfg: TrainConfig,
                 seed: int, *, goal: Pose | None = None, goal_tolerance: float = 0.01,
                 omega_r: float = DEFAULT_OMEGA_R, warm_start: Policy | None = None) -> TrainedOption:
    """Cross-entropy search for a linear policy that reaches the option's termination.

    Convergence is declared when the mean policy's success rate over
    ``cfg.eval_episodes`` fresh starts reaches ``cfg.success_rate_threshold``.
    The best mean policy seen is returned when the budget runs out.
    """
    objective = Objective(option, goal, goal_tolerance, omega_r)
    max_steps = cfg.max_steps or env.config.max_steps
    seq = np.random.SeedSequence(seed)
    probe_rng, start_rng, noise_rng, eval_rng = (np.random.default_rng(s) for s in seq.spawn(4))
    _check_source(env, option, start, probe_rng)

    if warm_start is not None:
        base = warm_start.with_goal(goal)
        std0 = cfg.warm_start_std
    else:
        calib = start.sample(env, probe_rng, cfg.calibration_states)
        mean, std = fit_normalizer(env.observe_batch(calib))
        base = Policy.zeros(env, mean, std, gripper_hold=float(calib.aperture.mean())).with_goal(goal)
        std0 = cfg.init_std

    mu = base.params.copy()
    dim = mu.size
    sigma = np.full((ACTION_DIM, FEATURE_DIM + 1), std0)
    if warm_start is None and cfg.init_gripper_std is not None:
        # the gripper must be able to swing fully open or closed early on
        sigma[GRIPPER_ROW, FEATURE_DIM] = cfg.init_gripper_std
        sigma[GRIPPER_ROW, :FEATURE_DIM] = max(std0, cfg.init_gripper_std * cfg.gripper_weight_fraction)
    if goal is not None:
        sigma[:6, GOAL_FEATURES] = cfg.goal_weight_std
    sigma = sigma.ravel()
    extra = sigma.copy()
    P, E = cfg.population, cfg.episodes_per_member
    log_rows: list[np.ndarray] = []
    steps_used = 0
    best = (-1.0, -np.inf, mu.copy())
    converged = False
    history: list[dict] = []
    best_member_so_far = -np.inf

    while steps_used < cfg.max_env_steps:
        starts = start.sample(env, start_rng, E)
        log_rows.append(starts.as_matrix())
        thetas = mu + sigma * noise_rng.standard_normal((P, dim))
        thetas[0] = mu
        mats = thetas.reshape(P, ACTION_DIM, FEATURE_DIM + 1)
        batch = States.concat([starts] * P)
        member = np.repeat(np.arange(P), E)

        def act(obs, idx, _m=mats, _mem=member):
            z = base.features(obs)
            m = _m[_mem[idx]]
            u = np.einsum("naf,nf->na", m[:, :, :FEATURE_DIM], z) + m[:, :, FEATURE_DIM]
            return base.action_offset + base.action_scale * u

        res = simulate(env, objective, act, batch, max_steps)
        steps_used += res.total_steps
        fitness = training_fitness(res, objective, max_steps).reshape(P, E).mean(axis=1)
        order = np.argsort(-fitness, kind="stable")
        elite = thetas[order[:cfg.n_elite]]
        mu = elite.mean(axis=0)
        extra *= cfg.noise_decay
        sigma = np.sqrt(elite.var(axis=0) + extra ** 2 + cfg.min_std ** 2)
        best_member_so_far = max(best_member_so_far, float(fitness[order[0]]))

        eval_starts = start.sample(env, eval_rng, cfg.eval_episodes)
        log_rows.append(eval_starts.as_matrix())
        ev = simulate(env, objective, policy_actor(base.with_params(mu)), eval_starts, max_steps)
        steps_used += ev.total_steps
        if cfg.elitist_min_success is not None and order[0] != 0:
            # A single member that already solves the task gets diluted by the
            # elite average, so it is evaluated too and adopted if it passes.
            top = thetas[order[0]]
            ev_top = simulate(env, objective, policy_actor(base.with_params(top)), eval_starts, max_steps)
            steps_used += ev_top.total_steps
            if ev_top.success.mean() >= max(cfg.elitist_min_success, ev.success.mean() + 1e-12):
                mu, ev = top.copy(), ev_top
        rate = float(ev.success.mean())
        ret = float(ev.returns.mean())
        history.append({"iteration": len(history), "elite_mean": float(fitness[order[:cfg.n_elite]].mean()),
                        "best_member": best_member_so_far, "eval_success": rate, "eval_return": ret,
                        "steps": steps_used})
        log.debug("%s it=%d steps=%d elite=%.1f success=%.2f", option.name, len(history), steps_used,
                  history[-1]["elite_mean"], rate)
        if rate >= cfg.success_rate_threshold and cfg.confirm_episodes:
            # A lucky small evaluation is re-checked on a larger batch.
            conf_starts = start.sample(env, eval_rng, cfg.confirm_episodes)
            log_rows.append(conf_starts.as_matrix())
            conf = simulate(env, objective, policy_actor(base.with_params(mu)), conf_starts, max_steps)
            steps_used += conf.total_steps
            n_ok = ev.success.sum() + conf.success.sum()
            rate = float(n_ok / (cfg.eval_episodes + cfg.confirm_episodes))
            ret = float((ev.returns.sum() + conf.returns.sum()) / (cfg.eval_episodes + cfg.confirm_episodes))
            history[-1].update(confirm_success=rate, steps=steps_used)
        if (rate, ret) > best[:2]:
            best = (rate, ret, mu.copy())
        if rate >= cfg.success_rate_threshold:
            converged = True
            best = (rate, ret, mu.copy())
            break

    origin_log = np.concatenate(log_rows) if log_rows else np.zeros((0, 21))
    seeding = getattr(start, "steps", 0)
    return TrainedOption(
        spec=option, policy=base.with_params(best[2]), source=start, origin_log=origin_log,
        steps_used=steps_used, converged=converged, seed=seed, goal_pose=goal,
        goal_tolerance=goal_tolerance, omega_r=omega_r, seeding_steps=int(seeding), history=history,
    )
