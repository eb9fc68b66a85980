"""Options: (policy, INIT, TERM, reward) and the five pick-and-place options.

Adjacent options in :func:`canonical_sequence` share their condition
objects, so ``seq[i].term is seq[i + 1].init``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from optseq.env import Action, EnvConfig, States, SurrogateEnv, WorldState, as_states
from optseq.errors import ConfigurationError, ContractError
from optseq.geometry import Pose, check_unit
from optseq.metrics import pose_distance

TERMINAL_BONUS = 1000.0
ADAPTATION_SCALE = 10.0
OPTION_NAMES = ("reach", "grasp", "lift", "carry", "place")


@dataclass(frozen=True)
class OptionConfig:
    """Tolerances for the option conditions (meters unless noted)."""

    reach_tolerance: float = 0.02
    open_aperture: float = 0.7
    carry_xy_tolerance: float = 0.05
    place_xy_tolerance: float = 0.05
    place_z_tolerance: float = 0.02

    def __post_init__(self) -> None:
        for name in ("reach_tolerance", "carry_xy_tolerance", "place_xy_tolerance", "place_z_tolerance"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 < self.open_aperture <= 1:
            raise ConfigurationError("open_aperture must lie in (0, 1]")


class ShapingTarget(enum.Enum):
    EE_TO_GRASP = "ee->cup-grasp-point"
    CUP_TO_LIFT = "cup->above-cup"
    CUP_TO_CARRY = "cup->above-target"
    CUP_TO_TARGET = "cup->target"


@dataclass(frozen=True, eq=False)
class Predicate:
    """A named boolean condition over world states.

    Called on a :class:`WorldState` it returns ``bool``; on a :class:`States`
    batch it returns a boolean array.
    """

    name: str
    fn: Callable[[States], np.ndarray] = field(repr=False)

    def batch(self, s: States) -> np.ndarray:
        return np.asarray(self.fn(s), dtype=bool)

    def __call__(self, state: WorldState | States):
        if isinstance(state, States):
            return self.batch(state)
        return bool(self.batch(as_states(state))[0])


@dataclass(frozen=True)
class RewardOutcome:
    shaped: float
    bonus: float
    violated: bool

    @property
    def total(self) -> float:
        return self.shaped + self.bonus


def _check_distance(dist) -> np.ndarray:
    d = np.asarray(dist, dtype=float)
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ContractError(f"distance must be finite and non-negative, got {dist}")
    return d


def shaped_reward(dist: float) -> float:
    """``-tanh(dist)**2``; 0 at the goal, tends to -1 far away."""
    d = _check_distance(dist)
    return float(-np.tanh(d) ** 2)


def shaped_reward_batch(dist: np.ndarray) -> np.ndarray:
    return -np.tanh(dist) ** 2


def adaptation_reward(current: Pose, goal: Pose, omega_r: float = 1.0) -> float:
    """``-10 * tanh(pose_distance(current, goal))**2``."""
    check_unit(current.orientation, "current orientation")
    check_unit(goal.orientation, "goal orientation")
    return float(-ADAPTATION_SCALE * np.tanh(pose_distance(current, goal, omega_r)) ** 2)


def adaptation_reward_batch(dist: np.ndarray) -> np.ndarray:
    return -ADAPTATION_SCALE * np.tanh(dist) ** 2


@dataclass(frozen=True, eq=False)
class OptionSpec:
    name: str
    init: Predicate
    term: Predicate
    shaping_target: ShapingTarget
    env_config: EnvConfig = field(default_factory=EnvConfig, repr=False)

    def shaping_distance(self, s: States) -> np.ndarray:
        c = self.env_config
        if self.shaping_target is ShapingTarget.EE_TO_GRASP:
            return np.linalg.norm(s.ee_pos - SurrogateEnv(c).grasp_points(s), axis=1)
        if self.shaping_target is ShapingTarget.CUP_TO_LIFT:
            return np.abs(s.cup_pos[:, 2] - (s.table_z + c.lift_height))
        if self.shaping_target is ShapingTarget.CUP_TO_CARRY:
            goal = np.column_stack([s.target[:, :2], s.table_z + c.lift_height])
            return np.linalg.norm(s.cup_pos - goal, axis=1)
        return np.linalg.norm(s.cup_pos - s.target, axis=1)

    def reward(self, s: WorldState, a: Action, s_next: WorldState) -> float:
        return option_step_reward(self, s, a, s_next).total


def option_step_reward(option: OptionSpec, s: WorldState, a: Action, s_next: WorldState) -> RewardOutcome:
    """Per-step reward: shaping on the successor state plus the terminal bonus."""
    nxt = as_states(s_next)
    shaped = float(shaped_reward_batch(option.shaping_distance(nxt))[0])
    bonus = TERMINAL_BONUS if option.term(s_next) else 0.0
    violated = bool(SurrogateEnv(option.env_config).violation_mask(nxt)[0].any())
    return RewardOutcome(shaped=shaped, bonus=bonus, violated=violated)


def build_conditions(env_config: EnvConfig, option_config: OptionConfig) -> dict[str, Predicate]:
    """The six conditions of the pick-and-place chain, keyed by name."""
    c, o = env_config, option_config
    env = SurrogateEnv(c)
    lo, hi = np.asarray(c.workspace_low), np.asarray(c.workspace_high)

    def in_workspace(s: States) -> np.ndarray:
        return np.all(s.ee_pos >= lo, axis=1) & np.all(s.ee_pos <= hi, axis=1)

    def ready(s: States) -> np.ndarray:
        return (s.aperture > o.open_aperture) & ~s.attached & in_workspace(s) & env.upright(s)

    def at_cup(s: States) -> np.ndarray:
        dist = np.linalg.norm(s.ee_pos - env.grasp_points(s), axis=1)
        return (dist <= o.reach_tolerance) & (s.aperture > o.open_aperture) & ~s.attached

    def holding(s: States) -> np.ndarray:
        return s.attached.copy()

    def lifted(s: States) -> np.ndarray:
        return s.attached & (s.cup_pos[:, 2] >= s.table_z + c.lift_height)

    def over_target(s: States) -> np.ndarray:
        xy = np.linalg.norm(s.ee_pos[:, :2] - s.target[:, :2], axis=1)
        return lifted(s) & (xy <= o.carry_xy_tolerance)

    def placed(s: States) -> np.ndarray:
        xy = np.linalg.norm(s.cup_pos[:, :2] - s.target[:, :2], axis=1)
        z_ok = np.abs(s.cup_pos[:, 2] - s.table_z) <= o.place_z_tolerance
        return ~s.attached & (xy <= o.place_xy_tolerance) & env.upright(s) & z_ok

    return {
        "ready": Predicate("ready", ready),
        "at_cup": Predicate("at_cup", at_cup),
        "holding": Predicate("holding", holding),
        "lifted": Predicate("lifted", lifted),
        "over_target": Predicate("over_target", over_target),
        "placed": Predicate("placed", placed),
    }


def canonical_sequence(env_config: EnvConfig | None = None,
                       option_config: OptionConfig | None = None) -> list[OptionSpec]:
    """``[reach, grasp, lift, carry, place]`` with shared TERM/INIT objects."""
    env_config = env_config or EnvConfig()
    option_config = option_config or OptionConfig()
    cond = build_conditions(env_config, option_config)
    chain = [
        ("ready", "at_cup", ShapingTarget.EE_TO_GRASP),
        ("at_cup", "holding", ShapingTarget.EE_TO_GRASP),
        ("holding", "lifted", ShapingTarget.CUP_TO_LIFT),
        ("lifted", "over_target", ShapingTarget.CUP_TO_CARRY),
        ("over_target", "placed", ShapingTarget.CUP_TO_TARGET),
    ]
    return [
        OptionSpec(name, cond[init], cond[term], shaping, env_config)
        for name, (init, term, shaping) in zip(OPTION_NAMES, chain)
    ]


def option_by_name(name: str, env_config: EnvConfig | None = None,
                   option_config: OptionConfig | None = None) -> OptionSpec:
    for spec in canonical_sequence(env_config, option_config):
        if spec.name == name:
            return spec
    raise ConfigurationError(f"unknown option {name!r}; expected one of {OPTION_NAMES}")


def connected(a: OptionSpec, b: OptionSpec) -> bool:
    """Adjacent options are connected when ``a``'s TERM is ``b``'s INIT."""
    return a.term is b.init or a.term.name == b.init.name
