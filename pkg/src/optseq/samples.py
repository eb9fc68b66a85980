"""Sample sets: recorded ee poses from an option's origin or result set."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from optseq.errors import ContractError
from optseq.geometry import Pose


class SetKind(enum.Enum):
    ORIGIN = "origin"
    RESULT = "result"


@dataclass(frozen=True)
class PoseSample:
    pose: Pose
    gripper_aperture: float
    attached: bool
    source_episode: int

    def __post_init__(self) -> None:
        if self.source_episode < 0:
            raise ContractError("source_episode must be >= 0")


@dataclass(eq=False)
class SampleSet:
    """Ordered pose samples stored column-wise.

    ``positions`` is ``(N, 3)`` and ``orientations`` ``(N, 4)``; the remaining
    columns carry gripper state and provenance.
    """

    kind: SetKind
    option_name: str
    positions: np.ndarray
    orientations: np.ndarray
    gripper: np.ndarray
    attached: np.ndarray
    episodes: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.kind = SetKind(self.kind)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.orientations = np.asarray(self.orientations, dtype=float).reshape(n, 4)
        self.gripper = np.asarray(self.gripper, dtype=float).reshape(n)
        self.attached = np.asarray(self.attached, dtype=bool).reshape(n)
        self.episodes = np.asarray(self.episodes, dtype=np.int64).reshape(n)
        if np.any(self.episodes < 0):
            raise ContractError("source_episode must be >= 0")

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> PoseSample:
        return PoseSample(
            pose=Pose(self.positions[i], self.orientations[i]),
            gripper_aperture=float(self.gripper[i]),
            attached=bool(self.attached[i]),
            source_episode=int(self.episodes[i]),
        )

    @property
    def samples(self) -> list[PoseSample]:
        return [self[i] for i in range(len(self))]

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(self.kind, self.option_name, self.positions[idx], self.orientations[idx],
                         self.gripper[idx], self.attached[idx], self.episodes[idx], dict(self.meta))

    @classmethod
    def from_samples(cls, kind: SetKind, option_name: str, samples: list[PoseSample]) -> "SampleSet":
        return cls(
            kind, option_name,
            positions=np.array([s.pose.position for s in samples]).reshape(-1, 3),
            orientations=np.array([s.pose.orientation for s in samples]).reshape(-1, 4),
            gripper=np.array([s.gripper_aperture for s in samples], dtype=float),
            attached=np.array([s.attached for s in samples], dtype=bool),
            episodes=np.array([s.source_episode for s in samples], dtype=np.int64),
        )

    @classmethod
    def from_state_matrix(cls, kind: SetKind, option_name: str, states: np.ndarray,
                          episodes: np.ndarray | None = None) -> "SampleSet":
        """Build from the flat ``(N, 21)`` state layout used in trainer logs."""
        m = np.atleast_2d(states)
        if episodes is None:
            episodes = np.arange(len(m))
        return cls(kind, option_name, m[:, 0:3], m[:, 3:7], m[:, 7], m[:, 8] > 0.5, episodes)
