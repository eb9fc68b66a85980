"""Kinematic table-top surrogate for a single-arm pick-and-place scene.

The arm is represented only by its end effector (ee). A cup stands on a
table; the ee can grasp it, carry it, and set it down next to a target.
Transitions are deterministic; all randomness lives in :meth:`SurrogateEnv.reset`.

Every operation has a batched form working on :class:`States` (struct of
arrays, one row per episode) and a scalar form working on :class:`WorldState`.
The scalar forms are thin wrappers around the batched ones.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Sequence

import numpy as np

from optseq.errors import ConfigurationError, ContractError
from optseq.geometry import (
    Pose,
    quat_from_axis_angle,
    quat_from_yaw,
    quat_multiply,
    quat_normalize,
    quat_rotate,
)

OBS_DIM = 16
ACTION_DIM = 7
STATE_DIM = 21
OBS_LABELS = (
    "ee_x", "ee_y", "ee_z", "ee_qw", "ee_qx", "ee_qy", "ee_qz", "gripper",
    "cup_x", "cup_y", "cup_z", "target_x", "target_y", "target_z", "table_z", "context",
)


class ViolationKind(enum.Enum):
    COLLISION = "Collision"
    CUP_HORIZONTAL = "CupHorizontal"
    CUP_OFF_TABLE = "CupOffTable"


VIOLATION_ORDER = (ViolationKind.COLLISION, ViolationKind.CUP_HORIZONTAL, ViolationKind.CUP_OFF_TABLE)


@dataclass(frozen=True)
class EnvConfig:
    """Geometry and dynamics constants. All lengths in meters."""

    table_z: float = 0.0
    table_half_extent: float = 0.4
    workspace_low: tuple[float, float, float] = (-1.0, -1.0, 0.0)
    workspace_high: tuple[float, float, float] = (1.0, 1.0, 0.8)
    max_delta_position: float = 0.05
    max_delta_rotation: float = 0.2
    gripper_rate: float = 0.25
    grasp_radius: float = 0.03
    grasp_offset: float = 0.06
    grasp_threshold: float = 0.3
    tilt_threshold_deg: float = 60.0
    off_table_margin: float = 0.4
    lift_height: float = 0.15
    cup_radius: float = 0.04
    cup_height: float = 0.10
    drop_tip_height: float = 0.05
    max_steps: int = 100

    def __post_init__(self) -> None:
        lo, hi = np.asarray(self.workspace_low), np.asarray(self.workspace_high)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(lo >= hi):
            raise ConfigurationError("workspace box must satisfy low < high on every axis")
        for name in ("max_delta_position", "max_delta_rotation", "gripper_rate", "grasp_radius",
                     "cup_radius", "cup_height", "table_half_extent"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 < self.grasp_threshold < 1:
            raise ConfigurationError("grasp_threshold must lie in (0, 1)")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")

    @property
    def cos_tilt(self) -> float:
        return math.cos(math.radians(self.tilt_threshold_deg))


# ---------------------------------------------------------------------------
# Scalar value types
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class WorldState:
    ee: Pose
    gripper_aperture: float
    attached: bool
    cup: Pose
    target_position: np.ndarray
    table_z: float = 0.0
    context: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.gripper_aperture <= 1.0:
            raise ContractError(f"gripper_aperture must lie in [0, 1], got {self.gripper_aperture}")
        if self.context not in (-1, 0, 1):
            raise ContractError(f"context must be -1, 0 or 1, got {self.context}")
        target = np.array(self.target_position, dtype=float).reshape(3)
        target.setflags(write=False)
        object.__setattr__(self, "target_position", target)
        object.__setattr__(self, "gripper_aperture", float(self.gripper_aperture))
        object.__setattr__(self, "attached", bool(self.attached))
        object.__setattr__(self, "table_z", float(self.table_z))
        object.__setattr__(self, "context", int(self.context))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        return np.array_equal(States.from_worlds([self]).as_matrix(),
                              States.from_worlds([other]).as_matrix())

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Action:
    delta_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    delta_orientation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gripper_command: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.concatenate([
            np.asarray(self.delta_position, dtype=float).reshape(3),
            np.asarray(self.delta_orientation, dtype=float).reshape(3),
            [float(self.gripper_command)],
        ])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Action":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:3].copy(), arr[3:6].copy(), float(arr[6]))


# ---------------------------------------------------------------------------
# Batched state
# ---------------------------------------------------------------------------
@dataclass
class States:
    """A batch of world states, one row per episode."""

    ee_pos: np.ndarray
    ee_quat: np.ndarray
    aperture: np.ndarray
    attached: np.ndarray
    cup_pos: np.ndarray
    cup_quat: np.ndarray
    target: np.ndarray
    table_z: np.ndarray
    context: np.ndarray

    def __len__(self) -> int:
        return self.ee_pos.shape[0]

    def copy(self) -> "States":
        return States(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def take(self, idx) -> "States":
        return States(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def assign(self, idx, other: "States") -> None:
        for f in fields(self):
            getattr(self, f.name)[idx] = getattr(other, f.name)

    @staticmethod
    def concat(parts: Sequence["States"]) -> "States":
        return States(**{f.name: np.concatenate([getattr(p, f.name) for p in parts])
                         for f in fields(States)})

    def as_matrix(self) -> np.ndarray:
        """Flat ``(N, 21)`` layout: ee(3) quat(4) aperture attached cup(3) cup_quat(4) target(3) table_z context."""
        return np.column_stack([
            self.ee_pos, self.ee_quat, self.aperture, self.attached.astype(float),
            self.cup_pos, self.cup_quat, self.target, self.table_z, self.context.astype(float),
        ])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "States":
        m = np.atleast_2d(np.asarray(m, dtype=float))
        if m.shape[1] != STATE_DIM:
            raise ContractError(f"state matrix must have {STATE_DIM} columns, got {m.shape[1]}")
        return cls(
            ee_pos=m[:, 0:3].copy(), ee_quat=m[:, 3:7].copy(), aperture=m[:, 7].copy(),
            attached=m[:, 8] > 0.5, cup_pos=m[:, 9:12].copy(), cup_quat=m[:, 12:16].copy(),
            target=m[:, 16:19].copy(), table_z=m[:, 19].copy(), context=m[:, 20].astype(np.int64),
        )

    @classmethod
    def from_worlds(cls, worlds: Iterable[WorldState]) -> "States":
        worlds = list(worlds)
        return cls(
            ee_pos=np.array([w.ee.position for w in worlds], dtype=float).reshape(-1, 3),
            ee_quat=np.array([w.ee.orientation for w in worlds], dtype=float).reshape(-1, 4),
            aperture=np.array([w.gripper_aperture for w in worlds], dtype=float),
            attached=np.array([w.attached for w in worlds], dtype=bool),
            cup_pos=np.array([w.cup.position for w in worlds], dtype=float).reshape(-1, 3),
            cup_quat=np.array([w.cup.orientation for w in worlds], dtype=float).reshape(-1, 4),
            target=np.array([w.target_position for w in worlds], dtype=float).reshape(-1, 3),
            table_z=np.array([w.table_z for w in worlds], dtype=float),
            context=np.array([w.context for w in worlds], dtype=np.int64),
        )

    def world(self, i: int) -> WorldState:
        return WorldState(
            ee=Pose(self.ee_pos[i], self.ee_quat[i]),
            gripper_aperture=float(self.aperture[i]),
            attached=bool(self.attached[i]),
            cup=Pose(self.cup_pos[i], self.cup_quat[i]),
            target_position=self.target[i],
            table_z=float(self.table_z[i]),
            context=int(self.context[i]),
        )

    def worlds(self) -> list[WorldState]:
        return [self.world(i) for i in range(len(self))]


def as_states(state: WorldState | States) -> States:
    if isinstance(state, States):
        return state
    return States.from_worlds([state])


# ---------------------------------------------------------------------------
# Start-state regions
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class InitRegion:
    """Axis-aligned box of start states, sampled uniformly.

    The cup base is drawn from ``cup_xy`` (and ``cup_z`` above the table);
    the ee position is an offset box relative to ``ee_anchor``: either the
    world origin or the cup's grasp point. Yaw angles are in degrees.
    """

    cup_xy_low: tuple[float, float] = (0.0, 0.0)
    cup_xy_high: tuple[float, float] = (0.0, 0.0)
    cup_z_low: float = 0.0
    cup_z_high: float = 0.0
    ee_anchor: str = "grasp"
    ee_low: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ee_high: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw_low: float = 0.0
    yaw_high: float = 0.0
    aperture_low: float = 1.0
    aperture_high: float = 1.0
    attached: bool = False
    target_xy_low: tuple[float, float] = (0.15, 0.15)
    target_xy_high: tuple[float, float] = (0.15, 0.15)
    contexts: tuple[int, ...] = (-1, 0, 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "InitRegion":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown region keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def validate(self, cfg: EnvConfig) -> None:
        pairs = [
            (self.cup_xy_low, self.cup_xy_high, "cup_xy"),
            ((self.cup_z_low,), (self.cup_z_high,), "cup_z"),
            (self.ee_low, self.ee_high, "ee"),
            ((self.yaw_low,), (self.yaw_high,), "yaw"),
            ((self.aperture_low,), (self.aperture_high,), "aperture"),
            (self.target_xy_low, self.target_xy_high, "target_xy"),
        ]
        for lo, hi, name in pairs:
            lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ConfigurationError(f"region bound {name} is not finite")
            if np.any(lo > hi):
                raise ConfigurationError(f"region bound {name} is empty (low > high)")
        if self.ee_anchor not in ("world", "grasp"):
            raise ConfigurationError(f"ee_anchor must be 'world' or 'grasp', got {self.ee_anchor!r}")
        if not self.contexts or any(c not in (-1, 0, 1) for c in self.contexts):
            raise ConfigurationError("contexts must be a non-empty subset of {-1, 0, 1}")
        if not (0.0 <= self.aperture_low and self.aperture_high <= 1.0):
            raise ConfigurationError("aperture bounds must lie in [0, 1]")
        if self.cup_z_low < 0:
            raise ConfigurationError("cup_z bounds are heights above the table and must be >= 0")
        if self.attached:
            if self.ee_anchor != "grasp":
                raise ConfigurationError("attached regions must anchor the ee at the grasp point")
            corner = np.max(np.abs([self.ee_low, self.ee_high]), axis=0)
            if np.linalg.norm(corner) > cfg.grasp_radius:
                raise ConfigurationError("attached region places the ee outside the grasp radius")
            if self.aperture_high >= cfg.grasp_threshold:
                raise ConfigurationError("attached region needs a closed gripper")
        # workspace containment, checked on the box corners
        lo_ws, hi_ws = np.asarray(cfg.workspace_low), np.asarray(cfg.workspace_high)
        cup_lo = np.array([*self.cup_xy_low, cfg.table_z + self.cup_z_low])
        cup_hi = np.array([*self.cup_xy_high, cfg.table_z + self.cup_z_high])
        if self.ee_anchor == "grasp":
            ee_lo = cup_lo + np.array([0, 0, cfg.grasp_offset]) + np.asarray(self.ee_low)
            ee_hi = cup_hi + np.array([0, 0, cfg.grasp_offset]) + np.asarray(self.ee_high)
        else:
            ee_lo, ee_hi = np.asarray(self.ee_low, float), np.asarray(self.ee_high, float)
        for lo, hi, name in ((cup_lo, cup_hi, "cup"), (ee_lo, ee_hi, "ee")):
            if np.any(lo < lo_ws) or np.any(hi > hi_ws):
                raise ConfigurationError(f"region {name} bounds leave the workspace box")

    def sample(self, rng: np.random.Generator, n: int, cfg: EnvConfig) -> States:
        """Draw ``n`` states. The draw order is fixed so results depend only on ``rng``."""
        cup_xy = rng.uniform(self.cup_xy_low, self.cup_xy_high, size=(n, 2))
        cup_z = rng.uniform(self.cup_z_low, self.cup_z_high, size=n) + cfg.table_z
        offset = rng.uniform(self.ee_low, self.ee_high, size=(n, 3))
        yaw = np.radians(rng.uniform(self.yaw_low, self.yaw_high, size=n))
        aperture = rng.uniform(self.aperture_low, self.aperture_high, size=n)
        target_xy = rng.uniform(self.target_xy_low, self.target_xy_high, size=(n, 2))
        context = np.asarray(self.contexts, dtype=np.int64)[rng.integers(0, len(self.contexts), size=n)]
        cup_pos = np.column_stack([cup_xy, cup_z])
        if self.ee_anchor == "grasp":
            ee_pos = cup_pos + np.array([0.0, 0.0, cfg.grasp_offset]) + offset
        else:
            ee_pos = offset
        cup_quat = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        return States(
            ee_pos=ee_pos,
            ee_quat=quat_from_yaw(yaw),
            aperture=aperture,
            attached=np.full(n, self.attached),
            cup_pos=cup_pos,
            cup_quat=cup_quat,
            target=np.column_stack([target_xy, np.full(n, cfg.table_z)]),
            table_z=np.full(n, cfg.table_z),
            context=context,
        )


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------
_WALL_SUBSTEPS = 10


class SurrogateEnv:
    """Deterministic kinematic pick-and-place environment."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()

    # -- reset ---------------------------------------------------------------
    def reset(self, region: InitRegion, seed: int) -> WorldState:
        return self.reset_batch(region, np.random.default_rng(seed), 1).world(0)

    def reset_batch(self, region: InitRegion, rng: np.random.Generator, n: int) -> States:
        region.validate(self.config)
        return region.sample(rng, n, self.config)

    # -- actions -------------------------------------------------------------
    def clamp_actions(self, actions: np.ndarray) -> np.ndarray:
        c = self.config
        a = np.array(actions, dtype=float, copy=True).reshape(-1, ACTION_DIM)
        a = np.nan_to_num(a, nan=0.0)
        a[:, :3] = np.clip(a[:, :3], -c.max_delta_position, c.max_delta_position)
        mag = np.linalg.norm(a[:, 3:6], axis=1)
        # the relative slack keeps clamping idempotent once rounding has happened
        over = mag > c.max_delta_rotation * (1.0 + 1e-12)
        if np.any(over):
            a[over, 3:6] *= (c.max_delta_rotation / mag[over])[:, None]
        a[:, 6] = np.clip(a[:, 6], 0.0, 1.0)
        return a

    def clamp(self, action: Action) -> Action:
        return Action.from_array(self.clamp_actions(action.as_array())[0])

    # -- dynamics ------------------------------------------------------------
    def grasp_points(self, s: States) -> np.ndarray:
        return s.cup_pos + quat_rotate(s.cup_quat, np.array([0.0, 0.0, self.config.grasp_offset]))

    def cup_up_z(self, s: States) -> np.ndarray:
        """z component of the cup's up axis (cosine of its tilt)."""
        q = s.cup_quat
        return 1.0 - 2.0 * (q[:, 1] ** 2 + q[:, 2] ** 2)

    def upright(self, s: States) -> np.ndarray:
        return self.cup_up_z(s) >= self.config.cos_tilt

    def step_batch(self, s: States, actions: np.ndarray) -> tuple[States, np.ndarray]:
        """Advance every row one step. Returns the successor batch and an ``(N, 3)``
        violation mask ordered as :data:`VIOLATION_ORDER`."""
        c = self.config
        a = self.clamp_actions(actions)
        n = len(s)
        if a.shape[0] != n:
            raise ContractError(f"got {a.shape[0]} actions for {n} states")
        dpos, drot, gcmd = a[:, :3], a[:, 3:6], a[:, 6]

        ee_old = s.ee_pos
        ee = ee_old + dpos
        dq = quat_from_axis_angle(drot)
        ee_quat = quat_normalize(quat_multiply(dq, s.ee_quat))
        aperture = s.aperture + np.clip(gcmd - s.aperture, -c.gripper_rate, c.gripper_rate)
        attached = s.attached.copy()
        cup = s.cup_pos.copy()
        cup_quat = s.cup_quat.copy()

        # carried cup follows the ee rigidly; the table supports it from below
        m = attached
        if np.any(m):
            cup[m] = ee[m] + quat_rotate(dq[m], s.cup_pos[m] - ee_old[m])
            cup_quat[m] = quat_normalize(quat_multiply(dq[m], s.cup_quat[m]))
            push = np.maximum(s.table_z[m] - cup[m, 2], 0.0)
            cup[m, 2] += push
            ee[m, 2] += push

        # release: the cup drops onto the table and lands tipped if dropped from too high
        released = attached & (aperture >= c.grasp_threshold)
        if np.any(released):
            attached[released] = False
            height = cup[released, 2] - s.table_z[released]
            cup[released, 2] = s.table_z[released]
            fell = np.zeros(n, dtype=bool)
            fell[np.flatnonzero(released)[height > c.drop_tip_height]] = True
            if np.any(fell):
                tip = quat_from_axis_angle(np.tile([math.pi / 2, 0.0, 0.0], (int(fell.sum()), 1)))
                cup_quat[fell] = quat_normalize(quat_multiply(tip, cup_quat[fell]))

        nxt = States(ee, ee_quat, aperture, attached, cup, cup_quat,
                     s.target.copy(), s.table_z.copy(), s.context.copy())
        up = self.upright(nxt)

        # grasp
        dist = np.linalg.norm(ee - self.grasp_points(nxt), axis=1)
        grab = ~attached & ~released & (aperture < c.grasp_threshold) & (dist <= c.grasp_radius) & up
        nxt.attached[grab] = True

        # an open gripper crossing the cup wall below the rim knocks the cup over
        tipping = ~nxt.attached & (aperture > c.grasp_threshold) & up & self._crosses_wall(ee_old, ee, cup)
        if np.any(tipping):
            moved = ee[tipping, :2] - ee_old[tipping, :2]
            speed = np.maximum(np.linalg.norm(moved, axis=1, keepdims=True), 1e-12)
            d = moved / speed
            axis = np.column_stack([-d[:, 1], d[:, 0], np.zeros(len(d))])
            tip = quat_from_axis_angle(axis * (math.pi / 2))
            nxt.cup_quat[tipping] = quat_normalize(quat_multiply(tip, nxt.cup_quat[tipping]))

        return nxt, self.violation_mask(nxt)

    def _crosses_wall(self, a: np.ndarray, b: np.ndarray, cup: np.ndarray) -> np.ndarray:
        """Does the segment ``a -> b`` pass through the cup's side wall below the rim?"""
        c = self.config
        t = np.linspace(0.0, 1.0, _WALL_SUBSTEPS + 1)
        pts = a[:, None, :] + (b - a)[:, None, :] * t[None, :, None]
        rel = pts - cup[:, None, :]
        inside_r = np.linalg.norm(rel[..., :2], axis=2) <= c.cup_radius
        below_rim = (rel[..., 2] >= 0.0) & (rel[..., 2] <= c.cup_height)
        change = inside_r[:, 1:] != inside_r[:, :-1]
        return np.any(change & below_rim[:, 1:] & below_rim[:, :-1], axis=1)

    def step(self, state: WorldState, action: Action) -> tuple[WorldState, ViolationKind | None]:
        nxt, mask = self.step_batch(as_states(state), action.as_array()[None, :])
        kinds = [k for k, hit in zip(VIOLATION_ORDER, mask[0]) if hit]
        return nxt.world(0), (kinds[0] if kinds else None)

    # -- violations ----------------------------------------------------------
    def violation_mask(self, s: States) -> np.ndarray:
        c = self.config
        lo, hi = np.asarray(c.workspace_low), np.asarray(c.workspace_high)
        collision = np.any(s.ee_pos < lo, axis=1) | np.any(s.ee_pos > hi, axis=1) | (s.ee_pos[:, 2] < s.table_z)
        horizontal = self.cup_up_z(s) < c.cos_tilt
        beyond = np.maximum(np.abs(s.cup_pos[:, :2]) - c.table_half_extent, 0.0)
        off_table = np.linalg.norm(beyond, axis=1) > c.off_table_margin
        return np.column_stack([collision, horizontal, off_table])

    def check_violations(self, state: WorldState) -> list[ViolationKind]:
        mask = self.violation_mask(as_states(state))[0]
        return [k for k, hit in zip(VIOLATION_ORDER, mask) if hit]

    # -- observation ---------------------------------------------------------
    @staticmethod
    def observe_batch(s: States) -> np.ndarray:
        return np.column_stack([
            s.ee_pos, s.ee_quat, s.aperture, s.cup_pos, s.target, s.table_z, s.context.astype(float),
        ])

    def observe(self, state: WorldState) -> np.ndarray:
        return self.observe_batch(as_states(state))[0]

    def with_config(self, **changes) -> "SurrogateEnv":
        return SurrogateEnv(replace(self.config, **changes))
